#pragma once

#include "entryfx/exposure.hpp"
#include "entryfx/panel.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace entryfx {

/// Resolved run configuration. Relative paths in a config file are taken
/// relative to the file's directory.
struct RunConfig {
    std::filesystem::path input_dir;  // empty: the output directory
    std::filesystem::path out_dir = "run";
    std::filesystem::path dgp_config;  // for the simulate stage

    std::optional<std::string> first_quarter;  // default: first quarter in the data
    std::optional<std::string> last_quarter;
    std::string pre_first = "2014Q1";
    std::string pre_last = "2019Q3";

    std::vector<panel::Outcome> outcomes = {panel::Outcome::log_covered_emp,
                                            panel::Outcome::log_establishments,
                                            panel::Outcome::log_total_wages_real_2020};
    int delta = 2;
    double epsilon = 0.02;
    std::vector<exposure::Slice> slices = {{0, 4}, {5, 8}, {9, 16}, {0, 16}};
    int folds = 5;
    int bootstrap = 999;
    int n_perm = 999;
    exposure::HistoryFlavor history_flavor = exposure::HistoryFlavor::any;
    int min_n = 50;
    double shac_cutoff_km = 75.0;
    double rho_bar = 0.03;
    std::optional<int> scpc_q;
    std::optional<int> serial_lag;
    int knn = 3;
    double alpha = 0.05;
    std::vector<double> m_grid = {0.0, 0.01, 0.02, 0.05, 0.10};
    exposure::Slice honest_target{0, 16};
    std::uint64_t seed = 20250101;

    std::filesystem::path inputs() const { return input_dir.empty() ? out_dir : input_dir; }
};

/// Reads a JSON config; unknown keys are rejected.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
RunConfig read_run_config(const std::filesystem::path& path);

/// Every field, defaults included, as pretty-printed JSON.
std::string to_json(const RunConfig& config);

/// Throws ValidationError for out-of-range settings.
void validate(const RunConfig& config);

}  // namespace entryfx
