#include "entryfx/events.hpp"

#include "entryfx/csv.hpp"
#include "entryfx/error.hpp"
#include "entryfx/stats.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <set>

namespace entryfx::events {

std::string to_string(Trigger trigger) {
    switch (trigger) {
    case Trigger::T1_new_entry:
        return "T1_new_entry";
    case Trigger::T2_small_to_large:
        return "T2_small_to_large";
    case Trigger::T3_top_decile_jump:
        return "T3_top_decile_jump";
    }
    return "unknown";
}

Trigger parse_trigger(std::string_view name) {
    for (auto t : {Trigger::T1_new_entry, Trigger::T2_small_to_large, Trigger::T3_top_decile_jump}) {
        if (to_string(t) == name) return t;
    }
    throw ValidationError("unknown_trigger", fmt::format("unknown trigger '{}'", name));
}

std::optional<double> T3Thresholds::get(const std::string& naics) const {
    auto it = by_naics.find(naics);
    return it == by_naics.end() ? std::nullopt : it->second;
}

T3Thresholds compute_t3_thresholds(const panel::Panel& panel, panel::QuarterRange pre_period) {
    if (pre_period.last_t - pre_period.first_t < 1) {
        throw ValidationError("invalid_range", "pre-period needs at least two quarters");
    }
    std::map<std::string, std::vector<double>> diffs;
    for (const auto& k : panel.industries()) diffs[k];
    const int T = static_cast<int>(panel.n_quarters());
    for (std::size_t c = 0; c < panel.n_cells(); ++c) {
        auto& d = diffs[panel.cells()[c].naics];
        for (int t = std::max(2, pre_period.first_t + 1); t <= std::min(T, pre_period.last_t); ++t) {
            const auto& now = panel.row(c, static_cast<std::size_t>(t - 1)).establishments;
            const auto& prev = panel.row(c, static_cast<std::size_t>(t - 2)).establishments;
            if (now && prev) d.push_back(*now - *prev);
        }
    }
    T3Thresholds out;
    for (const auto& [naics, d] : diffs) {
        out.n_differences[naics] = static_cast<int>(d.size());
        out.by_naics[naics] =
            d.empty() ? std::nullopt : std::optional(stats::quantile_linear(d, 0.9));
    }
    return out;
}

namespace {

std::optional<double> at(std::span<const std::optional<double>> s, int t) {
    if (t < 1 || t > static_cast<int>(s.size())) return std::nullopt;
    return s[static_cast<std::size_t>(t - 1)];
}

}  // namespace

bool fires_t1(std::span<const std::optional<double>> s, int t) {
    for (int l = 1; l <= 8; ++l) {
        const auto v = at(s, t - l);
        if (!v || *v != 0.0) return false;
    }
    const auto now = at(s, t);
    const auto next = at(s, t + 1);
    return now && next && *now >= 1.0 && *next >= 1.0;
}

bool fires_t2(std::span<const std::optional<double>> s, int t) {
    const auto prev = at(s, t - 1);
    const auto now = at(s, t);
    const auto next = at(s, t + 1);
    return prev && now && next && *prev <= 1.0 && *now >= 2.0 && *next >= 2.0;
}

bool fires_t3(std::span<const std::optional<double>> s, int t, std::optional<double> threshold) {
    if (!threshold) return false;
    const auto prev = at(s, t - 1);
    const auto now = at(s, t);
    const auto next = at(s, t + 1);
    if (!prev || !now || !next) return false;
    return *now - *prev >= std::max(*threshold, 1.0) && *next >= *now;
}

std::optional<Event> detect_event(std::span<const std::optional<double>> series,
                                  std::optional<double> threshold) {
    for (int t = 1; t <= static_cast<int>(series.size()); ++t) {
        if (fires_t1(series, t)) return Event{t, Trigger::T1_new_entry};
        if (fires_t2(series, t)) return Event{t, Trigger::T2_small_to_large};
        if (fires_t3(series, t, threshold)) return Event{t, Trigger::T3_top_decile_jump};
    }
    return std::nullopt;
}

bool balanced_window(int g, int n_quarters, Horizon horizon) {
    return g + horizon.lo >= 1 && g + horizon.hi <= n_quarters;
}

CohortMap::CohortMap(std::vector<CohortEntry> entries, int n_quarters, Horizon horizon)
    : entries_(std::move(entries)), n_quarters_(n_quarters), horizon_(horizon) {}

std::vector<int> CohortMap::cohorts() const {
    std::set<int> s;
    for (const auto& e : entries_) {
        if (e.g) s.insert(*e.g);
    }
    return {s.begin(), s.end()};
}

CohortMap assign_cohorts(const panel::Panel& panel, const T3Thresholds& thresholds, Horizon horizon) {
    const int T = static_cast<int>(panel.n_quarters());
    std::vector<CohortEntry> entries(panel.n_cells());
    for (std::size_t c = 0; c < panel.n_cells(); ++c) {
        const auto series = panel.establishments(c);
        const auto ev = detect_event(series, thresholds.get(panel.cells()[c].naics));
        if (!ev) continue;
        entries[c] = {ev->t, ev->trigger, balanced_window(ev->t, T, horizon)};
    }
    return CohortMap(std::move(entries), T, horizon);
}

CohortMap cohorts_from_schedule(std::span<const std::optional<int>> g, int n_quarters,
                                Horizon horizon, std::span<const std::optional<Trigger>> triggers) {
    std::vector<CohortEntry> entries(g.size());
    for (std::size_t c = 0; c < g.size(); ++c) {
        if (!g[c]) continue;
        entries[c].g = g[c];
        entries[c].trigger = c < triggers.size() && triggers[c] ? triggers[c]
                                                                 : std::optional(Trigger::T1_new_entry);
        entries[c].balanced_window = balanced_window(*g[c], n_quarters, horizon);
    }
    return CohortMap(std::move(entries), n_quarters, horizon);
}

void write_cohorts(const std::filesystem::path& path, const panel::Panel& panel,
                   const CohortMap& cohorts) {
    csv::Table t({"geoid", "naics", "g", "g_label", "trigger", "balanced_window"});
    for (std::size_t c = 0; c < panel.n_cells(); ++c) {
        const auto& e = cohorts[c];
        const auto& k = panel.cells()[c];
        if (e.g) {
            t.add_row({k.geoid, k.naics, std::to_string(*e.g),
                       panel.quarters()[static_cast<std::size_t>(*e.g - 1)].label(),
                       to_string(*e.trigger), e.balanced_window ? "1" : "0"});
        } else {
            t.add_row({k.geoid, k.naics, "NA", "never", "NA", "0"});
        }
    }
    csv::write(path, t);
}

CohortMap read_cohorts(const std::filesystem::path& path, const panel::Panel& panel, Horizon horizon) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"geoid", "naics", "g", "trigger"}, path);
    const int T = static_cast<int>(panel.n_quarters());
    std::vector<CohortEntry> entries(panel.n_cells());
    for (std::size_t r = 0; r < t.rows(); ++r) {
        const auto c = panel.find_cell({t.cell(r, "geoid"), t.cell(r, "naics")});
        if (!c) {
            throw ValidationError("unknown_cell", fmt::format("{}: cell {} {} is not in the panel",
                                                              path.string(), t.cell(r, "geoid"),
                                                              t.cell(r, "naics")));
        }
        if (csv::is_missing(t.cell(r, "g"))) continue;
        const int g = static_cast<int>(csv::parse_int(t.cell(r, "g"), "g"));
        entries[*c] = {g, parse_trigger(t.cell(r, "trigger")), balanced_window(g, T, horizon)};
    }
    return CohortMap(std::move(entries), T, horizon);
}

void write_thresholds(const std::filesystem::path& path, const T3Thresholds& thresholds) {
    csv::Table t({"naics", "threshold", "n_differences"});
    for (const auto& [naics, v] : thresholds.by_naics) {
        auto n = thresholds.n_differences.find(naics);
        t.add_row({naics, csv::format(v),
                   std::to_string(n == thresholds.n_differences.end() ? 0 : n->second)});
    }
    csv::write(path, t);
}

}  // namespace entryfx::events
