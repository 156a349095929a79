#pragma once

#include "entryfx/events.hpp"
#include "entryfx/panel.hpp"
#include "entryfx/spatial.hpp"

#include <Eigen/Core>

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace entryfx::exposure {

enum class Channel { same_industry_neighbor, within_muni_cross_industry, neighbor_all_industries };

inline constexpr std::array<Channel, 3> kChannels = {
    Channel::same_industry_neighbor, Channel::within_muni_cross_industry,
    Channel::neighbor_all_industries};

std::string to_string(Channel channel);
/// Short tag used in parameter names: "same", "cross", "nall".
std::string short_name(Channel channel);
Channel parse_channel(std::string_view name);

enum class HistoryFlavor { any, last4 };

std::string to_string(HistoryFlavor flavor);
HistoryFlavor parse_history_flavor(std::string_view name);

/// "any": treated by t. "early": 0 <= t - g <= 4.
enum class Form { any, early };

inline constexpr int kEarlyWindow = 4;
inline constexpr int kLags = 4;

/// Own-treatment indicator of one cell at 1-based quarter t.
double own_indicator(const events::CohortEntry& entry, int t, Form form);

/// Panel cells grouped by municipality and located on the spatial graph.
class Layout {
public:
    Layout(const panel::Panel& panel, const spatial::WeightsResult& weights);

    std::size_t n_cells() const { return node_of_cell_.size(); }
    int node_of_cell(std::size_t cell) const { return node_of_cell_[cell]; }
    /// Cells located in graph node `node` (possibly empty).
    const std::vector<std::size_t>& cells_of_node(int node) const {
        return cells_of_node_[static_cast<std::size_t>(node)];
    }
    /// Cell (node, naics of `cell`) if it exists in the panel.
    std::optional<std::size_t> peer(int node, std::size_t cell) const;
    const spatial::WeightsMatrix& weights() const { return weights_; }
    const std::vector<int>& industry_of_cell() const { return industry_of_cell_; }

private:
    std::vector<int> node_of_cell_;
    std::vector<int> industry_of_cell_;
    std::vector<std::vector<std::size_t>> cells_of_node_;
    std::vector<std::vector<std::ptrdiff_t>> cell_by_node_industry_;
    spatial::WeightsMatrix weights_;
};

double same_industry_exposure(const Layout& layout, const events::CohortMap& cohorts,
                              std::size_t cell, int t, Form form);

struct CrossExposure {
    double value = 0.0;
    bool degenerate = false;  // single-industry municipality
};

CrossExposure cross_industry_exposure(const Layout& layout, const events::CohortMap& cohorts,
                                      std::size_t cell, int t, Form form);

double neighbor_all_exposure(const Layout& layout, const events::CohortMap& cohorts,
                             std::size_t cell, int t, Form form);

/// Per-quarter shares for the own indicator and the three channels.
/// Matrices are cells x T, column ti holds quarter t = ti + 1.
class ExposureSeries {
public:
    ExposureSeries() = default;
    ExposureSeries(std::size_t n_cells, std::size_t n_quarters);

    std::size_t n_cells() const { return n_cells_; }
    std::size_t n_quarters() const { return n_quarters_; }

    Eigen::MatrixXd& matrix(Channel channel, Form form);
    const Eigen::MatrixXd& matrix(Channel channel, Form form) const;
    Eigen::MatrixXd& own(Form form) { return own_[form == Form::any ? 0 : 1]; }
    const Eigen::MatrixXd& own(Form form) const { return own_[form == Form::any ? 0 : 1]; }

    /// Share at 1-based quarter t; 0 before the sample opens.
    double share(Channel channel, Form form, std::size_t cell, int t) const;
    double own_share(Form form, std::size_t cell, int t) const;

    std::vector<bool> degenerate_cross;

private:
    std::size_t n_cells_ = 0;
    std::size_t n_quarters_ = 0;
    std::array<Eigen::MatrixXd, 6> channels_;
    std::array<Eigen::MatrixXd, 2> own_;
};

ExposureSeries compute_exposure(const Layout& layout, const events::CohortMap& cohorts);

struct Slice {
    int a = 0;
    int b = 0;

    int length() const { return b - a + 1; }
    std::string label() const;  // "0-4"
    static Slice parse(std::string_view label);

    friend bool operator==(const Slice&, const Slice&) = default;
};

struct SliceSummary {
    double S = 0.0;
    double S_bar = 0.0;
    bool keep = false;
};

bool keep_rule(double s_bar, double epsilon);

/// `values` holds the per-period exposures for event times a..b.
SliceSummary slice_summary(std::span<const double> values, Slice slice, double epsilon);

/// Row-level slice sum S(c, t) = sum over l in [a, b] of E_any(c, t - l), with
/// pre-sample quarters contributing 0. Returns cells x T.
Eigen::MatrixXd slice_sums(const ExposureSeries& series, Channel channel, Slice slice);

struct OverlapRow {
    Channel channel = Channel::same_industry_neighbor;
    Slice slice;
    long long raw = 0;
    long long kept = 0;
    double pct_trimmed = 0.0;
    int munis_retained = 0;
    std::vector<long long> histogram;  // 100 intervals over 101 edges
    std::vector<double> ecdf;          // at the 101 edges
};

/// Fixed grid 0, 0.01, ..., 1.
std::vector<double> overlap_edges();

/// Coverage of one channel x slice over every cell-quarter of the panel.
OverlapRow overlap_report(const Eigen::MatrixXd& sums, Slice slice, Channel channel, double epsilon,
                          const std::vector<int>& geoid_of_cell);

// --- file formats -----------------------------------------------------------

void write_exposure_long(const std::filesystem::path& path, const panel::Panel& panel,
                         const ExposureSeries& series);
/// Reads the three channels back; own shares are recomputed from `cohorts`.
ExposureSeries read_exposure_long(const std::filesystem::path& path, const panel::Panel& panel,
                                  const events::CohortMap& cohorts);

void write_exposure_slices(const std::filesystem::path& path, const panel::Panel& panel,
                           const ExposureSeries& series, std::span<const Slice> slices,
                           double epsilon);

void write_overlap(const std::filesystem::path& path, std::span<const OverlapRow> rows);
std::vector<OverlapRow> read_overlap(const std::filesystem::path& path);

}  // namespace entryfx::exposure
