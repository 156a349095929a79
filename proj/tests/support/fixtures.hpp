#pragma once

#include "entryfx/dgp.hpp"
#include "entryfx/events.hpp"
#include "entryfx/panel.hpp"
#include "entryfx/spatial.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace entryfx::testing {

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "entryfx");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Cells for municipalities 72001, 72003, ... (the `grid_graph` node ids)
/// crossed with the listed industries.
std::vector<panel::CellKey> cell_grid(int n_munis, const std::vector<std::string>& naics);

/// Balanced panel starting 2014Q1. `fill(row, cell, t)` sets the level
/// fields; derived fields are recomputed with a unit deflator.
panel::Panel make_panel(const std::vector<panel::CellKey>& cells, int T,
                        const std::function<void(panel::PanelRow&, std::size_t, int)>& fill);

/// Panel whose log_covered_emp equals y(cell, t) (NaN leaves it missing)
/// and whose establishment count is `est(cell, t)`.
panel::Panel outcome_panel(const std::vector<panel::CellKey>& cells, int T,
                           const std::function<double(std::size_t, int)>& y,
                           const std::function<double(std::size_t, int)>& est = {});

/// Rook lattice with row-standardized weights.
spatial::WeightsResult lattice(int columns, int n, double spacing_m = 10000.0);

/// Small random-cohort design used by the Monte Carlo checks.
dgp::DgpConfig small_design(std::uint64_t seed);

/// Writes a text file, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace entryfx::testing
