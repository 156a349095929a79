#include "entryfx/panel.hpp"

#include "entryfx/error.hpp"
#include "entryfx/stats.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>

namespace entryfx::panel {

std::string QuarterId::label() const { return fmt::format("{}Q{}", year, quarter); }

QuarterId QuarterId::make(int year, int quarter) {
    if (quarter < 1 || quarter > 4) {
        throw ValidationError("invalid_quarter", fmt::format("quarter {} is not in 1..4", quarter));
    }
    return QuarterId{year, quarter, 0};
}

QuarterId QuarterId::parse(std::string_view label) {
    const auto q = label.find_first_of("Qq");
    if (q == std::string_view::npos || q + 2 != label.size() || q == 0) {
        throw ValidationError("invalid_quarter", fmt::format("bad quarter label '{}'", label));
    }
    int year = 0;
    for (char c : label.substr(0, q)) {
        if (!std::isdigit(static_cast<unsigned char>(c))) {
            throw ValidationError("invalid_quarter", fmt::format("bad quarter label '{}'", label));
        }
        year = year * 10 + (c - '0');
    }
    return make(year, label[q + 1] - '0');
}

std::vector<QuarterId> build_quarter_index(QuarterId start, QuarterId end) {
    if (start > end) {
        throw ValidationError("invalid_range", fmt::format("quarter range {} > {}", start.label(),
                                                           end.label()));
    }
    std::vector<QuarterId> out;
    out.reserve(static_cast<std::size_t>(end.ordinal() - start.ordinal() + 1));
    for (int o = start.ordinal(), t = 1; o <= end.ordinal(); ++o, ++t) {
        out.push_back(QuarterId{o / 4, o % 4 + 1, t});
    }
    return out;
}

QuarterRange resolve_range(std::span<const QuarterId> index, std::string_view first_label,
                           std::string_view last_label) {
    const auto first = QuarterId::parse(first_label);
    const auto last = QuarterId::parse(last_label);
    auto find = [&](const QuarterId& q) {
        auto it = std::find(index.begin(), index.end(), q);
        if (it == index.end()) {
            throw ValidationError("invalid_range",
                                  fmt::format("quarter {} is outside the panel index", q.label()));
        }
        return it->t;
    };
    QuarterRange r{find(first), find(last)};
    if (r.first_t > r.last_t) {
        throw ValidationError("invalid_range",
                              fmt::format("range {}..{} is empty", first_label, last_label));
    }
    return r;
}

// --- exclusions -------------------------------------------------------------

namespace {

std::string trim_copy(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
}

std::string lower_copy(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string last_three_digits(std::string_view raw) {
    std::string digits;
    for (char c : raw) {
        if (std::isdigit(static_cast<unsigned char>(c))) digits.push_back(c);
    }
    if (digits.size() >= 3) return digits.substr(digits.size() - 3);
    return std::string(3 - digits.size(), '0') + digits;
}

}  // namespace

std::vector<RawRecord> apply_exclusions(std::span<const RawRecord> rows) {
    std::vector<RawRecord> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        const auto code = last_three_digits(r.geoid_raw);
        if (code == "995" || code == "999") continue;
        const auto name = lower_copy(trim_copy(r.municipality_name));
        if (name == "multi municipio" || name == "no codificado") continue;
        const auto naics = trim_copy(r.naics);
        if (naics == "99" || naics == "10") continue;
        RawRecord kept = r;
        kept.naics = naics;
        kept.geoid = "72" + code;
        out.push_back(std::move(kept));
    }
    return out;
}

// --- CPI --------------------------------------------------------------------

CpiSeries::CpiSeries(std::map<std::pair<int, int>, double> monthly) : monthly_(std::move(monthly)) {}

double CpiSeries::quarterly_mean(int year, int quarter) const {
    double sum = 0.0;
    for (int m = 3 * (quarter - 1) + 1; m <= 3 * quarter; ++m) {
        auto it = monthly_.find({year, m});
        if (it == monthly_.end()) {
            throw ValidationError("missing_deflator",
                                  fmt::format("CPI missing for {}Q{} (month {})", year, quarter, m));
        }
        sum += it->second;
    }
    return sum / 3.0;
}

double CpiSeries::rebase_factor() const {
    double sum = 0.0;
    for (int q = 1; q <= 4; ++q) sum += quarterly_mean(2020, q);
    return 100.0 / (sum / 4.0);
}

double CpiSeries::quarterly_index(int year, int quarter) const {
    return quarterly_mean(year, quarter) * rebase_factor();
}

// --- deflation --------------------------------------------------------------

void fill_derived(PanelRow& row, double deflator) {
    auto log_if_positive = [](const std::optional<double>& v) -> std::optional<double> {
        if (v && *v > 0.0) return std::log(*v);
        return std::nullopt;
    };
    row.total_wages_real_2020 = row.total_wages ? std::optional(*row.total_wages / deflator)
                                                : std::nullopt;
    row.log_establishments = log_if_positive(row.establishments);
    row.log_covered_emp = log_if_positive(row.covered_emp);
    row.log_total_wages = log_if_positive(row.total_wages);
    row.log_total_wages_real_2020 = log_if_positive(row.total_wages_real_2020);
    if (row.covered_emp && *row.covered_emp > 0.0 && row.total_wages_real_2020) {
        row.avg_wage_level_real_2020 = *row.total_wages_real_2020 / *row.covered_emp;
    } else {
        row.avg_wage_level_real_2020.reset();
    }
}

std::vector<PanelRow> deflate_and_log(std::span<const RawRecord> rows, const CpiSeries& cpi) {
    struct Acc {
        std::optional<double> est, emp, wages;
        std::map<std::string, int> names;
    };
    auto add = [](std::optional<double>& acc, const std::optional<double>& v) {
        if (v) acc = acc.value_or(0.0) + *v;
    };
    std::map<std::tuple<std::string, std::string, int>, Acc> groups;
    for (const auto& r : rows) {
        const auto geoid = r.geoid.empty() ? r.geoid_raw : r.geoid;
        auto& acc = groups[{geoid, r.naics, QuarterId::make(r.year, r.quarter).ordinal()}];
        add(acc.est, r.establishments);
        add(acc.emp, r.covered_emp);
        add(acc.wages, r.total_wages);
        if (!r.industry_name.empty()) ++acc.names[r.industry_name];
    }
    std::vector<PanelRow> out;
    out.reserve(groups.size());
    for (auto& [key, acc] : groups) {
        const auto& [geoid, naics, ordinal] = key;
        PanelRow row;
        row.key = {geoid, naics};
        row.quarter = QuarterId{ordinal / 4, ordinal % 4 + 1, 0};
        row.establishments = acc.est;
        row.covered_emp = acc.emp;
        row.total_wages = acc.wages;
        int best = 0;
        for (const auto& [name, count] : acc.names) {
            if (count > best) {
                best = count;
                row.industry_name = name;
            }
        }
        const double deflator = cpi.quarterly_index(row.quarter.year, row.quarter.quarter) / 100.0;
        fill_derived(row, deflator);
        out.push_back(std::move(row));
    }
    return out;
}

// --- outcomes ---------------------------------------------------------------

std::string to_string(Outcome outcome) {
    switch (outcome) {
    case Outcome::log_establishments:
        return "log_establishments";
    case Outcome::log_covered_emp:
        return "log_covered_emp";
    case Outcome::log_total_wages:
        return "log_total_wages";
    case Outcome::log_total_wages_real_2020:
        return "log_total_wages_real_2020";
    }
    return "unknown";
}

Outcome parse_outcome(std::string_view name) {
    for (auto o : {Outcome::log_establishments, Outcome::log_covered_emp, Outcome::log_total_wages,
                   Outcome::log_total_wages_real_2020}) {
        if (to_string(o) == name) return o;
    }
    throw ValidationError("unknown_outcome", fmt::format("unknown outcome '{}'", name));
}

std::optional<double> outcome_value(const PanelRow& row, Outcome outcome) {
    switch (outcome) {
    case Outcome::log_establishments:
        return row.log_establishments;
    case Outcome::log_covered_emp:
        return row.log_covered_emp;
    case Outcome::log_total_wages:
        return row.log_total_wages;
    case Outcome::log_total_wages_real_2020:
        return row.log_total_wages_real_2020;
    }
    return std::nullopt;
}

// --- Panel ------------------------------------------------------------------

Panel::Panel(std::vector<QuarterId> quarters, std::vector<CellKey> cells, std::vector<PanelRow> rows,
             std::map<std::string, std::string> industry_names)
    : quarters_(std::move(quarters)),
      cells_(std::move(cells)),
      rows_(std::move(rows)),
      industry_names_(std::move(industry_names)) {
    if (rows_.size() != cells_.size() * quarters_.size()) {
        throw ValidationError("unbalanced_panel",
                              fmt::format("panel has {} rows, expected {} cells x {} quarters",
                                          rows_.size(), cells_.size(), quarters_.size()));
    }
    if (!std::is_sorted(cells_.begin(), cells_.end()) ||
        std::adjacent_find(cells_.begin(), cells_.end()) != cells_.end()) {
        throw ValidationError("unsorted_cells", "panel cells must be sorted and unique");
    }
    index();
}

void Panel::index() {
    std::set<std::string> g;
    std::set<std::string> k;
    for (const auto& c : cells_) {
        g.insert(c.geoid);
        k.insert(c.naics);
    }
    geoids_.assign(g.begin(), g.end());
    industries_.assign(k.begin(), k.end());
    geoid_of_cell_.clear();
    industry_of_cell_.clear();
    for (const auto& c : cells_) {
        geoid_of_cell_.push_back(static_cast<int>(
            std::lower_bound(geoids_.begin(), geoids_.end(), c.geoid) - geoids_.begin()));
        industry_of_cell_.push_back(static_cast<int>(
            std::lower_bound(industries_.begin(), industries_.end(), c.naics) -
            industries_.begin()));
    }
}

Eigen::MatrixXd Panel::outcome_matrix(Outcome outcome) const {
    const auto T = quarters_.size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(cells_.size()), static_cast<Eigen::Index>(T));
    for (std::size_t c = 0; c < cells_.size(); ++c) {
        for (std::size_t ti = 0; ti < T; ++ti) {
            const auto v = outcome_value(row(c, ti), outcome);
            m(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(ti)) =
                v ? *v : std::numeric_limits<double>::quiet_NaN();
        }
    }
    return m;
}

std::vector<std::optional<double>> Panel::establishments(std::size_t cell) const {
    std::vector<std::optional<double>> out(quarters_.size());
    for (std::size_t ti = 0; ti < quarters_.size(); ++ti) out[ti] = row(cell, ti).establishments;
    return out;
}

std::optional<std::size_t> Panel::find_cell(const CellKey& key) const {
    auto it = std::lower_bound(cells_.begin(), cells_.end(), key);
    if (it == cells_.end() || !(*it == key)) return std::nullopt;
    return static_cast<std::size_t>(it - cells_.begin());
}

Panel build_skeleton(std::span<const PanelRow> rows, std::span<const QuarterId> index) {
    if (index.empty()) throw ValidationError("empty_index", "quarter index is empty");
    std::set<CellKey> keys;
    for (const auto& r : rows) keys.insert(r.key);
    std::vector<CellKey> cells(keys.begin(), keys.end());
    const int first = index.front().ordinal();
    const auto T = index.size();

    std::vector<PanelRow> out(cells.size() * T);
    for (std::size_t c = 0; c < cells.size(); ++c) {
        for (std::size_t ti = 0; ti < T; ++ti) {
            auto& r = out[c * T + ti];
            r.key = cells[c];
            r.quarter = index[ti];
        }
    }
    std::map<std::string, std::map<std::string, int>> name_counts;
    for (const auto& r : rows) {
        const int ti = r.quarter.ordinal() - first;
        if (ti < 0 || ti >= static_cast<int>(T)) continue;
        const auto c = static_cast<std::size_t>(
            std::lower_bound(cells.begin(), cells.end(), r.key) - cells.begin());
        auto& slot = out[c * T + static_cast<std::size_t>(ti)];
        const auto quarter = slot.quarter;
        slot = r;
        slot.quarter = quarter;
        if (!r.industry_name.empty()) ++name_counts[r.key.naics][r.industry_name];
    }
    // Most frequent label per naics; std::map iteration order breaks ties
    // lexicographically because only a strictly larger count replaces.
    std::map<std::string, std::string> names;
    for (const auto& [naics, counts] : name_counts) {
        int best = 0;
        for (const auto& [name, n] : counts) {
            if (n > best) {
                best = n;
                names[naics] = name;
            }
        }
    }
    for (auto& r : out) {
        auto it = names.find(r.key.naics);
        r.industry_name = it == names.end() ? std::string() : it->second;
    }
    return Panel(std::vector<QuarterId>(index.begin(), index.end()), std::move(cells), std::move(out),
                 std::move(names));
}

// --- strata -----------------------------------------------------------------

std::string to_string(Tradable v) { return v == Tradable::tradable ? "tradable" : "nontradable"; }
std::string to_string(Metro v) { return v == Metro::metro ? "metro" : "nonmetro"; }
std::string to_string(WageStratum v) {
    switch (v) {
    case WageStratum::high:
        return "high";
    case WageStratum::low:
        return "low";
    case WageStratum::unknown:
        return "unknown";
    }
    return "unknown";
}

Tradable classify_tradable(std::string_view naics) {
    if (naics.size() < 2 || !std::isdigit(static_cast<unsigned char>(naics[0])) ||
        !std::isdigit(static_cast<unsigned char>(naics[1]))) {
        return Tradable::nontradable;
    }
    const int sector = (naics[0] - '0') * 10 + (naics[1] - '0');
    switch (sector) {
    case 11:
    case 21:
    case 31:
    case 32:
    case 33:
    case 42:
    case 48:
    case 49:
    case 51:
    case 52:
    case 54:
    case 55:
        return Tradable::tradable;
    default:
        return Tradable::nontradable;
    }
}

std::vector<StrataLabel> assign_strata(const Panel& panel, const std::map<std::string, bool>& metro,
                                       QuarterRange pre_period) {
    if (pre_period.last_t < pre_period.first_t) {
        throw ValidationError("invalid_range", "pre-period is empty");
    }
    const auto& industries = panel.industries();
    std::vector<std::vector<double>> wages(industries.size());
    for (std::size_t c = 0; c < panel.n_cells(); ++c) {
        const auto k = static_cast<std::size_t>(panel.industry_of_cell()[c]);
        for (std::size_t ti = 0; ti < panel.n_quarters(); ++ti) {
            const auto& r = panel.row(c, ti);
            if (!pre_period.contains(r.quarter.t)) continue;
            if (r.avg_wage_level_real_2020) wages[k].push_back(*r.avg_wage_level_real_2020);
        }
    }
    std::vector<std::optional<double>> industry_median(industries.size());
    std::vector<double> medians;
    for (std::size_t k = 0; k < industries.size(); ++k) {
        if (wages[k].empty()) continue;
        industry_median[k] = stats::median(wages[k]);
        medians.push_back(*industry_median[k]);
    }
    const std::optional<double> threshold =
        medians.empty() ? std::nullopt : std::optional(stats::median(medians));

    std::vector<StrataLabel> out(panel.n_cells());
    for (std::size_t c = 0; c < panel.n_cells(); ++c) {
        const auto& key = panel.cells()[c];
        auto& s = out[c];
        s.tradable = classify_tradable(key.naics);
        auto m = metro.find(key.geoid);
        s.metro = (m != metro.end() && m->second) ? Metro::metro : Metro::nonmetro;
        const auto& med = industry_median[static_cast<std::size_t>(panel.industry_of_cell()[c])];
        if (!med || !threshold) {
            s.wage = WageStratum::unknown;
        } else {
            s.wage = *med >= *threshold ? WageStratum::high : WageStratum::low;
        }
    }
    return out;
}

}  // namespace entryfx::panel
