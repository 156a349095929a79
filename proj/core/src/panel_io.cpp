#include "entryfx/csv.hpp"
#include "entryfx/error.hpp"
#include "entryfx/panel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <set>

namespace entryfx::panel {

namespace {

std::string opt_column(const csv::Table& t, std::size_t row, std::string_view name) {
    return t.has_column(name) ? t.cell(row, name) : std::string();
}

}  // namespace

std::vector<RawRecord> read_raw_records(const std::filesystem::path& path) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"geoid_raw", "naics", "year", "quarter", "establishments",
                             "covered_emp", "total_wages"},
                         path);
    std::vector<RawRecord> out;
    out.reserve(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) {
        RawRecord rec;
        rec.geoid_raw = t.cell(r, "geoid_raw");
        rec.naics = t.cell(r, "naics");
        rec.year = static_cast<int>(csv::parse_int(t.cell(r, "year"), "year"));
        rec.quarter = static_cast<int>(csv::parse_int(t.cell(r, "quarter"), "quarter"));
        QuarterId::make(rec.year, rec.quarter);
        rec.establishments = csv::parse_optional(t.cell(r, "establishments"), "establishments");
        rec.covered_emp = csv::parse_optional(t.cell(r, "covered_emp"), "covered_emp");
        rec.total_wages = csv::parse_optional(t.cell(r, "total_wages"), "total_wages");
        for (const auto& v : {rec.establishments, rec.covered_emp, rec.total_wages}) {
            if (v && *v < 0.0) {
                throw ValidationError("negative_level",
                                      fmt::format("{}: negative level on row {}", path.string(), r + 2));
            }
        }
        rec.industry_name = opt_column(t, r, "industry_name");
        rec.municipality_name = opt_column(t, r, "municipality_name");
        out.push_back(std::move(rec));
    }
    return out;
}

CpiSeries read_cpi(const std::filesystem::path& path) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"year", "month", "value"}, path);
    std::map<std::pair<int, int>, double> monthly;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        const int year = static_cast<int>(csv::parse_int(t.cell(r, "year"), "year"));
        const int month = static_cast<int>(csv::parse_int(t.cell(r, "month"), "month"));
        if (month < 1 || month > 12) {
            throw ValidationError("invalid_month", fmt::format("month {} out of range", month));
        }
        monthly[{year, month}] = csv::parse_double(t.cell(r, "value"), "value");
    }
    return CpiSeries(std::move(monthly));
}

std::map<std::string, bool> read_metro(const std::filesystem::path& path) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"geoid", "metro"}, path);
    std::map<std::string, bool> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        out[t.cell(r, "geoid")] = csv::parse_int(t.cell(r, "metro"), "metro") != 0;
    }
    return out;
}

void write_metro(const std::filesystem::path& path, const std::map<std::string, bool>& metro) {
    csv::Table t({"geoid", "metro"});
    for (const auto& [g, m] : metro) t.add_row({g, m ? "1" : "0"});
    csv::write(path, t);
}

void write_panel(const std::filesystem::path& path, const Panel& panel) {
    csv::Table t({"geoid", "naics", "industry_name", "year", "quarter", "t", "label",
                  "establishments", "covered_emp", "total_wages", "total_wages_real_2020",
                  "log_establishments", "log_covered_emp", "log_total_wages",
                  "log_total_wages_real_2020", "avg_wage_level_real_2020"});
    for (const auto& r : panel.rows()) {
        t.add_row({r.key.geoid, r.key.naics, r.industry_name, std::to_string(r.quarter.year),
                   std::to_string(r.quarter.quarter), std::to_string(r.quarter.t), r.quarter.label(),
                   csv::format(r.establishments), csv::format(r.covered_emp),
                   csv::format(r.total_wages), csv::format(r.total_wages_real_2020),
                   csv::format(r.log_establishments), csv::format(r.log_covered_emp),
                   csv::format(r.log_total_wages), csv::format(r.log_total_wages_real_2020),
                   csv::format(r.avg_wage_level_real_2020)});
    }
    csv::write(path, t);
}

Panel read_panel(const std::filesystem::path& path) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"geoid", "naics", "year", "quarter", "t", "establishments",
                             "covered_emp", "total_wages", "total_wages_real_2020",
                             "log_establishments", "log_covered_emp", "log_total_wages",
                             "log_total_wages_real_2020", "avg_wage_level_real_2020"},
                         path);
    std::vector<PanelRow> rows;
    rows.reserve(t.rows());
    std::map<int, QuarterId> quarters;
    std::set<CellKey> cells;
    std::map<std::string, std::string> names;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        PanelRow row;
        row.key = {t.cell(r, "geoid"), t.cell(r, "naics")};
        row.quarter = QuarterId::make(static_cast<int>(csv::parse_int(t.cell(r, "year"), "year")),
                                      static_cast<int>(csv::parse_int(t.cell(r, "quarter"), "quarter")));
        row.quarter.t = static_cast<int>(csv::parse_int(t.cell(r, "t"), "t"));
        auto p = [&](std::string_view col) { return csv::parse_optional(t.cell(r, col), col); };
        row.establishments = p("establishments");
        row.covered_emp = p("covered_emp");
        row.total_wages = p("total_wages");
        row.total_wages_real_2020 = p("total_wages_real_2020");
        row.log_establishments = p("log_establishments");
        row.log_covered_emp = p("log_covered_emp");
        row.log_total_wages = p("log_total_wages");
        row.log_total_wages_real_2020 = p("log_total_wages_real_2020");
        row.avg_wage_level_real_2020 = p("avg_wage_level_real_2020");
        row.industry_name = opt_column(t, r, "industry_name");
        if (!row.industry_name.empty()) names[row.key.naics] = row.industry_name;
        quarters[row.quarter.t] = row.quarter;
        cells.insert(row.key);
        rows.push_back(std::move(row));
    }
    std::vector<QuarterId> index;
    for (const auto& [tt, q] : quarters) {
        if (tt != static_cast<int>(index.size()) + 1) {
            throw ValidationError("invalid_range", fmt::format("{}: quarter index has a gap at t={}",
                                                               path.string(), index.size() + 1));
        }
        index.push_back(q);
    }
    std::vector<CellKey> keys(cells.begin(), cells.end());
    const auto T = index.size();
    std::vector<PanelRow> ordered(keys.size() * T);
    std::vector<char> seen(ordered.size(), 0);
    for (auto& row : rows) {
        const auto c = static_cast<std::size_t>(std::lower_bound(keys.begin(), keys.end(), row.key) -
                                                keys.begin());
        const auto slot = c * T + static_cast<std::size_t>(row.quarter.t - 1);
        if (seen[slot]) {
            throw ValidationError("duplicate_row",
                                  fmt::format("{}: duplicate row {} {} t={}", path.string(),
                                              row.key.geoid, row.key.naics, row.quarter.t));
        }
        seen[slot] = 1;
        ordered[slot] = std::move(row);
    }
    return Panel(std::move(index), std::move(keys), std::move(ordered), std::move(names));
}

void write_strata(const std::filesystem::path& path, const Panel& panel,
                  std::span<const StrataLabel> strata) {
    csv::Table t({"geoid", "naics", "tradable", "metro", "wage_stratum"});
    for (std::size_t c = 0; c < panel.n_cells(); ++c) {
        const auto& k = panel.cells()[c];
        t.add_row({k.geoid, k.naics, to_string(strata[c].tradable), to_string(strata[c].metro),
                   to_string(strata[c].wage)});
    }
    csv::write(path, t);
}

std::vector<StrataLabel> read_strata(const std::filesystem::path& path, const Panel& panel) {
    const auto t = csv::read(path);
    csv::require_columns(t, {"geoid", "naics", "tradable", "metro", "wage_stratum"}, path);
    std::vector<StrataLabel> out(panel.n_cells());
    std::vector<char> seen(panel.n_cells(), 0);
    for (std::size_t r = 0; r < t.rows(); ++r) {
        const auto c = panel.find_cell({t.cell(r, "geoid"), t.cell(r, "naics")});
        if (!c) continue;
        auto& s = out[*c];
        s.tradable = t.cell(r, "tradable") == "tradable" ? Tradable::tradable : Tradable::nontradable;
        s.metro = t.cell(r, "metro") == "metro" ? Metro::metro : Metro::nonmetro;
        const auto& w = t.cell(r, "wage_stratum");
        s.wage = w == "high" ? WageStratum::high : w == "low" ? WageStratum::low : WageStratum::unknown;
        seen[*c] = 1;
    }
    for (std::size_t c = 0; c < panel.n_cells(); ++c) {
        if (!seen[c]) {
            throw ValidationError("missing_strata",
                                  fmt::format("{}: no strata for cell {} {}", path.string(),
                                              panel.cells()[c].geoid, panel.cells()[c].naics));
        }
    }
    return out;
}

}  // namespace entryfx::panel
