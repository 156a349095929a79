#pragma once

#include "entryfx/config.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace entryfx::pipeline {

inline constexpr std::array<std::string_view, 10> kStages = {
    "ingest", "weights", "events", "exposure", "direct", "drdid", "heterogeneity", "diagnose", "simulate", "report"};

/// Stages run by `run_all`, in dependency order.
inline constexpr std::array<std::string_view, 9> kChain = {
    "ingest", "weights", "events", "exposure", "direct", "drdid", "heterogeneity", "diagnose", "report"};

std::string_view version();

/// Seed of a stage, derived from the master seed and the stage name.
std::uint64_t stage_seed(std::uint64_t master, std::string_view stage);

/// FNV-1a 64 of the file's bytes as 16 hex digits.
std::string hash_file(const std::filesystem::path& path);

struct StageResult {
    std::string stage;
    std::vector<std::filesystem::path> outputs;
    std::vector<std::string> warnings;
};

/// Runs one stage and writes its outputs plus `manifest_<stage>.json`
/// (input and output hashes, resolved config, seeds, version) to the output
/// directory. Missing inputs raise MissingArtifactError naming the file;
/// inputs whose hash no longer matches the producing stage's manifest are
/// reported as warnings.
StageResult run_stage(std::string_view stage, const RunConfig& config);

std::vector<StageResult> run_all(const RunConfig& config);

}  // namespace entryfx::pipeline
