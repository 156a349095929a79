#include "entryfx/exposure.hpp"

#include "entryfx/csv.hpp"
#include "entryfx/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <set>

namespace entryfx::exposure {

std::string to_string(Channel channel) {
    switch (channel) {
    case Channel::same_industry_neighbor:
        return "same_industry_neighbor";
    case Channel::within_muni_cross_industry:
        return "within_muni_cross_industry";
    case Channel::neighbor_all_industries:
        return "neighbor_all_industries";
    }
    return "unknown";
}

std::string short_name(Channel channel) {
    switch (channel) {
    case Channel::same_industry_neighbor:
        return "same";
    case Channel::within_muni_cross_industry:
        return "cross";
    case Channel::neighbor_all_industries:
        return "nall";
    }
    return "unknown";
}

Channel parse_channel(std::string_view name) {
    for (auto c : kChannels) {
        if (to_string(c) == name || short_name(c) == name) return c;
    }
    throw ValidationError("unknown_channel", fmt::format("unknown channel '{}'", name));
}

std::string to_string(HistoryFlavor flavor) { return flavor == HistoryFlavor::any ? "any" : "last4"; }

HistoryFlavor parse_history_flavor(std::string_view name) {
    if (name == "any") return HistoryFlavor::any;
    if (name == "last4") return HistoryFlavor::last4;
    throw ValidationError("unknown_history_flavor", fmt::format("unknown history flavor '{}'", name));
}

double own_indicator(const events::CohortEntry& entry, int t, Form form) {
    if (!entry.g) return 0.0;
    const int l = t - *entry.g;
    if (form == Form::any) return l >= 0 ? 1.0 : 0.0;
    return (l >= 0 && l <= kEarlyWindow) ? 1.0 : 0.0;
}

// --- layout -----------------------------------------------------------------

Layout::Layout(const panel::Panel& panel, const spatial::WeightsResult& weights)
    : industry_of_cell_(panel.industry_of_cell()), weights_(weights.weights) {
    const auto& g = weights.graph;
    std::map<std::string, int> node_index;
    for (std::size_t i = 0; i < g.size(); ++i) node_index[g.nodes[i]] = static_cast<int>(i);
    const auto n_ind = panel.industries().size();
    cells_of_node_.assign(g.size(), {});
    cell_by_node_industry_.assign(g.size(), std::vector<std::ptrdiff_t>(n_ind, -1));
    node_of_cell_.resize(panel.n_cells());
    for (std::size_t c = 0; c < panel.n_cells(); ++c) {
        const auto& geoid = panel.cells()[c].geoid;
        auto it = node_index.find(geoid);
        if (it == node_index.end()) {
            throw ValidationError("unknown_geoid",
                                  fmt::format("geoid {} is not a node of the spatial graph", geoid));
        }
        node_of_cell_[c] = it->second;
        cells_of_node_[static_cast<std::size_t>(it->second)].push_back(c);
        cell_by_node_industry_[static_cast<std::size_t>(it->second)]
                              [static_cast<std::size_t>(industry_of_cell_[c])] =
            static_cast<std::ptrdiff_t>(c);
    }
}

std::optional<std::size_t> Layout::peer(int node, std::size_t cell) const {
    const auto v = cell_by_node_industry_[static_cast<std::size_t>(node)]
                                         [static_cast<std::size_t>(industry_of_cell_[cell])];
    if (v < 0) return std::nullopt;
    return static_cast<std::size_t>(v);
}

namespace {

using SparseRow = Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator;

double muni_share(const Layout& layout, const events::CohortMap& cohorts, int node, int t, Form form) {
    const auto& cells = layout.cells_of_node(node);
    if (cells.empty()) return 0.0;
    double treated = 0.0;
    for (auto c : cells) treated += own_indicator(cohorts[c], t, form);
    return treated / static_cast<double>(cells.size());
}

}  // namespace

double same_industry_exposure(const Layout& layout, const events::CohortMap& cohorts,
                              std::size_t cell, int t, Form form) {
    double s = 0.0;
    for (SparseRow it(layout.weights().w, layout.node_of_cell(cell)); it; ++it) {
        const auto peer = layout.peer(static_cast<int>(it.col()), cell);
        if (peer) s += it.value() * own_indicator(cohorts[*peer], t, form);
    }
    return s;
}

CrossExposure cross_industry_exposure(const Layout& layout, const events::CohortMap& cohorts,
                                      std::size_t cell, int t, Form form) {
    const auto& cells = layout.cells_of_node(layout.node_of_cell(cell));
    if (cells.size() < 2) return {0.0, true};
    double treated = 0.0;
    for (auto c : cells) {
        if (c != cell) treated += own_indicator(cohorts[c], t, form);
    }
    return {treated / static_cast<double>(cells.size() - 1), false};
}

double neighbor_all_exposure(const Layout& layout, const events::CohortMap& cohorts,
                             std::size_t cell, int t, Form form) {
    double s = 0.0;
    for (SparseRow it(layout.weights().w, layout.node_of_cell(cell)); it; ++it) {
        s += it.value() * muni_share(layout, cohorts, static_cast<int>(it.col()), t, form);
    }
    return s;
}

// --- series -----------------------------------------------------------------

ExposureSeries::ExposureSeries(std::size_t n_cells, std::size_t n_quarters)
    : degenerate_cross(n_cells, false), n_cells_(n_cells), n_quarters_(n_quarters) {
    const auto r = static_cast<Eigen::Index>(n_cells);
    const auto c = static_cast<Eigen::Index>(n_quarters);
    for (auto& m : channels_) m = Eigen::MatrixXd::Zero(r, c);
    for (auto& m : own_) m = Eigen::MatrixXd::Zero(r, c);
}

namespace {

std::size_t slot(Channel channel, Form form) {
    return static_cast<std::size_t>(channel) * 2 + (form == Form::any ? 0 : 1);
}

}  // namespace

Eigen::MatrixXd& ExposureSeries::matrix(Channel channel, Form form) {
    return channels_[slot(channel, form)];
}

const Eigen::MatrixXd& ExposureSeries::matrix(Channel channel, Form form) const {
    return channels_[slot(channel, form)];
}

double ExposureSeries::share(Channel channel, Form form, std::size_t cell, int t) const {
    if (t < 1 || t > static_cast<int>(n_quarters_)) return 0.0;
    return matrix(channel, form)(static_cast<Eigen::Index>(cell), t - 1);
}

double ExposureSeries::own_share(Form form, std::size_t cell, int t) const {
    if (t < 1 || t > static_cast<int>(n_quarters_)) return 0.0;
    return own(form)(static_cast<Eigen::Index>(cell), t - 1);
}

ExposureSeries compute_exposure(const Layout& layout, const events::CohortMap& cohorts) {
    const auto n = layout.n_cells();
    if (cohorts.size() != n) {
        throw ValidationError("size_mismatch", "cohort map does not match the panel");
    }
    const auto T = static_cast<std::size_t>(cohorts.n_quarters());
    ExposureSeries out(n, T);
    const auto& w = layout.weights().w;
    const auto n_nodes = static_cast<std::size_t>(w.rows());
    std::vector<double> own(n);
    std::vector<double> muni_treated(n_nodes);
    for (auto form : {Form::any, Form::early}) {
        auto& same = out.matrix(Channel::same_industry_neighbor, form);
        auto& cross = out.matrix(Channel::within_muni_cross_industry, form);
        auto& nall = out.matrix(Channel::neighbor_all_industries, form);
        auto& own_m = out.own(form);
        for (std::size_t ti = 0; ti < T; ++ti) {
            const int t = static_cast<int>(ti) + 1;
            std::fill(muni_treated.begin(), muni_treated.end(), 0.0);
            for (std::size_t c = 0; c < n; ++c) {
                own[c] = own_indicator(cohorts[c], t, form);
                muni_treated[static_cast<std::size_t>(layout.node_of_cell(c))] += own[c];
            }
            for (std::size_t c = 0; c < n; ++c) {
                const auto ci = static_cast<Eigen::Index>(c);
                const auto tj = static_cast<Eigen::Index>(ti);
                own_m(ci, tj) = own[c];
                const int node = layout.node_of_cell(c);
                const auto n_here = layout.cells_of_node(node).size();
                if (n_here < 2) {
                    out.degenerate_cross[c] = true;
                } else {
                    cross(ci, tj) = (muni_treated[static_cast<std::size_t>(node)] - own[c]) /
                                    static_cast<double>(n_here - 1);
                }
                double s = 0.0;
                double a = 0.0;
                for (SparseRow it(w, node); it; ++it) {
                    const auto j = static_cast<int>(it.col());
                    if (const auto p = layout.peer(j, c)) s += it.value() * own[*p];
                    const auto n_j = layout.cells_of_node(j).size();
                    if (n_j > 0) {
                        a += it.value() * muni_treated[static_cast<std::size_t>(j)] /
                             static_cast<double>(n_j);
                    }
                }
                same(ci, tj) = s;
                nall(ci, tj) = a;
            }
        }
    }
    return out;
}

// --- slices -----------------------------------------------------------------

std::string Slice::label() const { return fmt::format("{}-{}", a, b); }

Slice Slice::parse(std::string_view label) {
    const auto dash = label.find('-', 1);
    if (dash == std::string_view::npos) {
        throw ValidationError("invalid_slice", fmt::format("bad slice '{}'", label));
    }
    Slice s{static_cast<int>(csv::parse_int(label.substr(0, dash), "slice start")),
            static_cast<int>(csv::parse_int(label.substr(dash + 1), "slice end"))};
    if (s.a < 0 || s.b < s.a) {
        throw ValidationError("invalid_slice", fmt::format("bad slice '{}'", label));
    }
    return s;
}

bool keep_rule(double s_bar, double epsilon) { return s_bar >= epsilon && s_bar <= 1.0 - epsilon; }

SliceSummary slice_summary(std::span<const double> values, Slice slice, double epsilon) {
    if (static_cast<int>(values.size()) != slice.length()) {
        throw ValidationError("incomplete_window",
                              fmt::format("slice {} needs {} values, got {}", slice.label(),
                                          slice.length(), values.size()));
    }
    SliceSummary s;
    for (double v : values) s.S += v;
    s.S_bar = s.S / static_cast<double>(slice.length());
    s.keep = keep_rule(s.S_bar, epsilon);
    return s;
}

Eigen::MatrixXd slice_sums(const ExposureSeries& series, Channel channel, Slice slice) {
    const auto& e = series.matrix(channel, Form::any);
    const auto T = static_cast<int>(series.n_quarters());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(e.rows(), e.cols());
    for (int t = 1; t <= T; ++t) {
        for (int l = slice.a; l <= slice.b; ++l) {
            const int src = t - l;
            if (src < 1) continue;
            out.col(t - 1) += e.col(src - 1);
        }
    }
    return out;
}

std::vector<double> overlap_edges() {
    std::vector<double> edges(101);
    for (int i = 0; i <= 100; ++i) edges[static_cast<std::size_t>(i)] = i / 100.0;
    return edges;
}

OverlapRow overlap_report(const Eigen::MatrixXd& sums, Slice slice, Channel channel, double epsilon,
                          const std::vector<int>& geoid_of_cell) {
    OverlapRow row;
    row.channel = channel;
    row.slice = slice;
    row.histogram.assign(100, 0);
    std::vector<long long> at_or_below(101, 0);
    std::set<int> munis;
    const double L = slice.length();
    for (Eigen::Index c = 0; c < sums.rows(); ++c) {
        for (Eigen::Index t = 0; t < sums.cols(); ++t) {
            const double s_bar = sums(c, t) / L;
            ++row.raw;
            if (keep_rule(s_bar, epsilon)) {
                ++row.kept;
                munis.insert(geoid_of_cell[static_cast<std::size_t>(c)]);
            }
            const auto bin = std::clamp(static_cast<int>(std::floor(s_bar * 100.0)), 0, 99);
            ++row.histogram[static_cast<std::size_t>(bin)];
            // ECDF at edge e counts values <= e; bins are [e_i, e_{i+1}).
            const auto first_edge =
                std::clamp(static_cast<int>(std::ceil(s_bar * 100.0 - 1e-9)), 0, 100);
            ++at_or_below[static_cast<std::size_t>(first_edge)];
        }
    }
    row.ecdf.resize(101);
    long long cum = 0;
    for (std::size_t i = 0; i < 101; ++i) {
        cum += at_or_below[i];
        row.ecdf[i] = row.raw == 0 ? 0.0 : static_cast<double>(cum) / static_cast<double>(row.raw);
    }
    row.munis_retained = static_cast<int>(munis.size());
    row.pct_trimmed =
        row.raw == 0 ? 0.0
                     : 100.0 * static_cast<double>(row.raw - row.kept) / static_cast<double>(row.raw);
    return row;
}

// --- file formats -----------------------------------------------------------

void write_exposure_long(const std::filesystem::path& path, const panel::Panel& panel,
                         const ExposureSeries& series) {
    std::vector<std::string> header{"geoid", "naics", "t", "channel", "share_any", "share_early"};
    for (int l = 1; l <= kLags; ++l) header.push_back(fmt::format("any_lag{}", l));
    for (int l = 1; l <= kLags; ++l) header.push_back(fmt::format("early_lag{}", l));
    header.push_back("degenerate");
    csv::Table t(std::move(header));
    const auto T = static_cast<int>(series.n_quarters());
    for (std::size_t c = 0; c < series.n_cells(); ++c) {
        const auto& k = panel.cells()[c];
        for (int tt = 1; tt <= T; ++tt) {
            for (auto ch : kChannels) {
                std::vector<std::string> row{k.geoid, k.naics, std::to_string(tt), short_name(ch),
                                             csv::format(series.share(ch, Form::any, c, tt)),
                                             csv::format(series.share(ch, Form::early, c, tt))};
                for (int l = 1; l <= kLags; ++l) {
                    row.push_back(csv::format(series.share(ch, Form::any, c, tt - l)));
                }
                for (int l = 1; l <= kLags; ++l) {
                    row.push_back(csv::format(series.share(ch, Form::early, c, tt - l)));
                }
                const bool degenerate =
                    ch == Channel::within_muni_cross_industry && series.degenerate_cross[c];
                row.push_back(degenerate ? "1" : "0");
                t.add_row(std::move(row));
            }
        }
    }
    csv::write(path, t);
}

ExposureSeries read_exposure_long(const std::filesystem::path& path, const panel::Panel& panel,
                                  const events::CohortMap& cohorts) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"geoid", "naics", "t", "channel", "share_any", "share_early"}, path);
    const auto T = panel.n_quarters();
    ExposureSeries out(panel.n_cells(), T);
    const auto c_geoid = t.column("geoid");
    const auto c_naics = t.column("naics");
    const auto c_t = t.column("t");
    const auto c_ch = t.column("channel");
    const auto c_any = t.column("share_any");
    const auto c_early = t.column("share_early");
    const bool has_deg = t.has_column("degenerate");
    std::size_t filled = 0;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        const auto c = panel.find_cell({t.cell(r, c_geoid), t.cell(r, c_naics)});
        if (!c) {
            throw ValidationError("unknown_cell", fmt::format("{}: cell {} {} is not in the panel",
                                                              path.string(), t.cell(r, c_geoid),
                                                              t.cell(r, c_naics)));
        }
        const auto tt = csv::parse_int(t.cell(r, c_t), "t");
        if (tt < 1 || tt > static_cast<long long>(T)) {
            throw ValidationError("invalid_range", fmt::format("{}: t={} outside panel", path.string(), tt));
        }
        const auto ch = parse_channel(t.cell(r, c_ch));
        const auto ci = static_cast<Eigen::Index>(*c);
        const auto tj = static_cast<Eigen::Index>(tt - 1);
        out.matrix(ch, Form::any)(ci, tj) = csv::parse_double(t.cell(r, c_any), "share_any");
        out.matrix(ch, Form::early)(ci, tj) = csv::parse_double(t.cell(r, c_early), "share_early");
        if (has_deg && ch == Channel::within_muni_cross_industry && t.cell(r, "degenerate") == "1") {
            out.degenerate_cross[*c] = true;
        }
        ++filled;
    }
    if (filled != panel.n_cells() * T * kChannels.size()) {
        throw ValidationError("incomplete_exposure",
                              fmt::format("{}: expected {} rows, found {}", path.string(),
                                          panel.n_cells() * T * kChannels.size(), filled));
    }
    for (std::size_t c = 0; c < panel.n_cells(); ++c) {
        for (std::size_t ti = 0; ti < T; ++ti) {
            const int tt = static_cast<int>(ti) + 1;
            const auto ci = static_cast<Eigen::Index>(c);
            const auto tj = static_cast<Eigen::Index>(ti);
            out.own(Form::any)(ci, tj) = own_indicator(cohorts[c], tt, Form::any);
            out.own(Form::early)(ci, tj) = own_indicator(cohorts[c], tt, Form::early);
        }
    }
    return out;
}

void write_exposure_slices(const std::filesystem::path& path, const panel::Panel& panel,
                           const ExposureSeries& series, std::span<const Slice> slices,
                           double epsilon) {
    csv::Table t({"geoid", "naics", "t", "channel", "slice", "S", "S_bar", "keep"});
    for (const auto& slice : slices) {
        for (auto ch : kChannels) {
            const auto sums = slice_sums(series, ch, slice);
            for (std::size_t c = 0; c < series.n_cells(); ++c) {
                const auto& k = panel.cells()[c];
                for (std::size_t ti = 0; ti < series.n_quarters(); ++ti) {
                    const double S = sums(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(ti));
                    const double s_bar = S / slice.length();
                    t.add_row({k.geoid, k.naics, std::to_string(ti + 1), short_name(ch),
                               slice.label(), csv::format(S), csv::format(s_bar),
                               keep_rule(s_bar, epsilon) ? "1" : "0"});
                }
            }
        }
    }
    csv::write(path, t);
}

void write_overlap(const std::filesystem::path& path, std::span<const OverlapRow> rows) {
    std::vector<std::string> header{"channel", "slice", "raw", "kept", "pct_trimmed",
                                    "munis_retained", "kind", "index", "edge", "value"};
    csv::Table t(std::move(header));
    const auto edges = overlap_edges();
    for (const auto& r : rows) {
        const std::vector<std::string> base{short_name(r.channel), r.slice.label(),
                                            std::to_string(r.raw), std::to_string(r.kept),
                                            csv::format(r.pct_trimmed),
                                            std::to_string(r.munis_retained)};
        auto row = base;
        row.insert(row.end(), {"summary", "NA", "NA", "NA"});
        t.add_row(row);
        for (std::size_t i = 0; i < r.histogram.size(); ++i) {
            row = base;
            row.insert(row.end(), {"histogram", std::to_string(i), csv::format(edges[i]),
                                   std::to_string(r.histogram[i])});
            t.add_row(row);
        }
        for (std::size_t i = 0; i < r.ecdf.size(); ++i) {
            row = base;
            row.insert(row.end(),
                       {"ecdf", std::to_string(i), csv::format(edges[i]), csv::format(r.ecdf[i])});
            t.add_row(row);
        }
    }
    csv::write(path, t);
}

std::vector<OverlapRow> read_overlap(const std::filesystem::path& path) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"channel", "slice", "raw", "kept", "pct_trimmed", "munis_retained",
                             "kind"},
                         path);
    std::vector<OverlapRow> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        if (t.cell(r, "kind") != "summary") continue;
        OverlapRow row;
        row.channel = parse_channel(t.cell(r, "channel"));
        row.slice = Slice::parse(t.cell(r, "slice"));
        row.raw = csv::parse_int(t.cell(r, "raw"), "raw");
        row.kept = csv::parse_int(t.cell(r, "kept"), "kept");
        row.pct_trimmed = csv::parse_double(t.cell(r, "pct_trimmed"), "pct_trimmed");
        row.munis_retained = static_cast<int>(csv::parse_int(t.cell(r, "munis_retained"), "munis"));
        out.push_back(std::move(row));
    }
    return out;
}

}  // namespace entryfx::exposure
