#include "fixtures.hpp"

#include <fmt/format.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace entryfx::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() / fmt::format("{}-{}-{}", tag, ::getpid(), counter++);
    fs::remove_all(path_);
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

std::vector<panel::CellKey> cell_grid(int n_munis, const std::vector<std::string>& naics) {
    std::vector<panel::CellKey> out;
    for (int m = 1; m <= n_munis; ++m) {
        for (const auto& k : naics) out.push_back({fmt::format("72{:03d}", 2 * m - 1), k});
    }
    return out;
}

panel::Panel make_panel(const std::vector<panel::CellKey>& cells, int T,
                        const std::function<void(panel::PanelRow&, std::size_t, int)>& fill) {
    const auto index = panel::build_quarter_index(panel::QuarterId::make(2014, 1),
                                                  panel::QuarterId{2014 + (T - 1) / 4, (T - 1) % 4 + 1, 0});
    std::vector<panel::PanelRow> rows;
    rows.reserve(cells.size() * index.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
        for (int t = 1; t <= T; ++t) {
            panel::PanelRow r;
            r.key = cells[c];
            r.quarter = index[static_cast<std::size_t>(t - 1)];
            fill(r, c, t);
            panel::fill_derived(r, 1.0);
            rows.push_back(std::move(r));
        }
    }
    return panel::Panel(index, cells, std::move(rows));
}

panel::Panel outcome_panel(const std::vector<panel::CellKey>& cells, int T,
                           const std::function<double(std::size_t, int)>& y,
                           const std::function<double(std::size_t, int)>& est) {
    return make_panel(cells, T, [&](panel::PanelRow& r, std::size_t c, int t) {
        const double v = y(c, t);
        if (std::isfinite(v)) {
            r.covered_emp = std::exp(v);
            r.total_wages = std::exp(v) * 1000.0;
        }
        const double n = est ? est(c, t) : 5.0;
        if (std::isfinite(n)) r.establishments = n;
    });
}

spatial::WeightsResult lattice(int columns, int n, double spacing_m) {
    return spatial::build_weights(spatial::grid_graph(columns, n, spacing_m), 3);
}

dgp::DgpConfig small_design(std::uint64_t seed) {
    dgp::DgpConfig c;
    c.n_munis = 30;
    c.n_industries = 4;
    c.n_quarters = 34;
    c.grid_columns = 6;
    c.treated_share = 0.35;
    c.g_min = 10;
    c.g_max = 18;
    c.noise_sd = 0.1;
    c.seed = seed;
    return c;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace entryfx::testing
