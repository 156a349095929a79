#pragma once

#include <filesystem>
#include <string>

namespace entryfx::report {

/// Markdown summary of a run directory: event-study paths, cumulative
/// slices, the DR-DiD slice grid with "estimate (se)" cells, the inference
/// comparison, overlap, heterogeneity, spatial diagnostics and smoothness
/// bounds. Tables whose input file is absent or empty are printed with their
/// header only.
std::string render(const std::filesystem::path& run_dir);

}  // namespace entryfx::report
