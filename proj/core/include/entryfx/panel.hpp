#pragma once

#include <Eigen/Core>

#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace entryfx::panel {

/// Calendar quarter with its position `t` on the panel's sequential index.
/// Ordering and equality ignore `t`; two quarters are the same calendar
/// quarter regardless of which index they were placed on.
struct QuarterId {
    int year = 0;
    int quarter = 1;  // 1..4
    int t = 0;        // 1 at the first panel quarter; 0 when not yet indexed

    std::string label() const;  // "YYYYQn"
    int ordinal() const { return year * 4 + (quarter - 1); }

    static QuarterId parse(std::string_view label);
    static QuarterId make(int year, int quarter);

    friend bool operator==(const QuarterId& a, const QuarterId& b) {
        return a.ordinal() == b.ordinal();
    }
    friend std::strong_ordering operator<=>(const QuarterId& a, const QuarterId& b) {
        return a.ordinal() <=> b.ordinal();
    }
};

/// Contiguous quarter list from `start` to `end` inclusive, t = 1 at start.
std::vector<QuarterId> build_quarter_index(QuarterId start, QuarterId end);

/// Inclusive range of panel indices, used for the pre-period.
struct QuarterRange {
    int first_t = 1;
    int last_t = 1;
    bool contains(int t) const { return t >= first_t && t <= last_t; }
};

/// Maps calendar labels onto the indices of `index`; throws if either end
/// falls outside it.
QuarterRange resolve_range(std::span<const QuarterId> index, std::string_view first_label,
                           std::string_view last_label);

struct CellKey {
    std::string geoid;
    std::string naics;

    friend auto operator<=>(const CellKey&, const CellKey&) = default;
    friend bool operator==(const CellKey&, const CellKey&) = default;
};

/// One line of the raw delimited input, before exclusions and aggregation.
struct RawRecord {
    std::string geoid_raw;
    std::string naics;
    int year = 0;
    int quarter = 1;
    std::optional<double> establishments;
    std::optional<double> covered_emp;
    std::optional<double> total_wages;
    std::string industry_name;
    std::string municipality_name;
    std::string geoid;  // filled by apply_exclusions: "72" + last three digits
};

/// Drops multi-municipality / uncoded records (codes 995, 999 or matching
/// names) and NAICS 99 / 10, and normalizes the surviving geoids.
std::vector<RawRecord> apply_exclusions(std::span<const RawRecord> rows);

/// Monthly CPI with quarterly averaging and 2020 = 100 rebasing.
class CpiSeries {
public:
    CpiSeries() = default;
    explicit CpiSeries(std::map<std::pair<int, int>, double> monthly);

    /// Arithmetic mean of the quarter's three months (unrebased). Throws
    /// `missing_deflator` when any month is absent.
    double quarterly_mean(int year, int quarter) const;

    /// 100 / mean of the four 2020 quarterly means.
    double rebase_factor() const;

    /// Rebased quarterly index, so that 2020 averages 100.
    double quarterly_index(int year, int quarter) const;

    const std::map<std::pair<int, int>, double>& monthly() const { return monthly_; }

private:
    std::map<std::pair<int, int>, double> monthly_;
};

struct PanelRow {
    CellKey key;
    QuarterId quarter;
    std::optional<double> establishments;
    std::optional<double> covered_emp;
    std::optional<double> total_wages;
    std::optional<double> total_wages_real_2020;
    std::optional<double> log_establishments;
    std::optional<double> log_covered_emp;
    std::optional<double> log_total_wages;
    std::optional<double> log_total_wages_real_2020;
    std::optional<double> avg_wage_level_real_2020;
    std::string industry_name;
};

/// Sums reporting units into one row per (geoid, naics, quarter), deflates
/// wages and fills the log outcomes. Throws `missing_deflator` naming the
/// first quarter the CPI does not cover.
std::vector<PanelRow> deflate_and_log(std::span<const RawRecord> rows, const CpiSeries& cpi);

/// Recomputes the derived fields of a row from its level fields.
/// `deflator` is CPI_t / 100.
void fill_derived(PanelRow& row, double deflator);

enum class Outcome {
    log_establishments,
    log_covered_emp,
    log_total_wages,
    log_total_wages_real_2020,
};

std::string to_string(Outcome outcome);
Outcome parse_outcome(std::string_view name);
std::optional<double> outcome_value(const PanelRow& row, Outcome outcome);

/// Balanced cell x quarter panel. Cells are sorted by (geoid, naics) and rows
/// are stored cell-major, so row(c, ti) is rows[c * T + ti].
class Panel {
public:
    Panel() = default;
    Panel(std::vector<QuarterId> quarters, std::vector<CellKey> cells, std::vector<PanelRow> rows,
          std::map<std::string, std::string> industry_names = {});

    std::size_t n_cells() const { return cells_.size(); }
    std::size_t n_quarters() const { return quarters_.size(); }
    std::span<const CellKey> cells() const { return cells_; }
    std::span<const QuarterId> quarters() const { return quarters_; }
    std::span<const PanelRow> rows() const { return rows_; }

    /// `ti` is the 0-based quarter position (t - 1).
    const PanelRow& row(std::size_t cell, std::size_t ti) const {
        return rows_[cell * quarters_.size() + ti];
    }
    PanelRow& row(std::size_t cell, std::size_t ti) { return rows_[cell * quarters_.size() + ti]; }

    /// cells x T matrix of an outcome with NaN for missing.
    Eigen::MatrixXd outcome_matrix(Outcome outcome) const;

    /// Establishment series of one cell.
    std::vector<std::optional<double>> establishments(std::size_t cell) const;

    /// Distinct geoids in sorted order and each cell's index into that list.
    const std::vector<std::string>& geoids() const { return geoids_; }
    const std::vector<int>& geoid_of_cell() const { return geoid_of_cell_; }
    /// Distinct naics codes in sorted order and each cell's index into that list.
    const std::vector<std::string>& industries() const { return industries_; }
    const std::vector<int>& industry_of_cell() const { return industry_of_cell_; }

    const std::map<std::string, std::string>& industry_names() const { return industry_names_; }

    std::optional<std::size_t> find_cell(const CellKey& key) const;

private:
    void index();

    std::vector<QuarterId> quarters_;
    std::vector<CellKey> cells_;
    std::vector<PanelRow> rows_;
    std::map<std::string, std::string> industry_names_;
    std::vector<std::string> geoids_;
    std::vector<int> geoid_of_cell_;
    std::vector<std::string> industries_;
    std::vector<int> industry_of_cell_;
};

/// Crosses every observed (geoid, naics) pair with the full index. Absent
/// observations carry missing outcomes. Rows whose quarter falls outside the
/// index are dropped.
Panel build_skeleton(std::span<const PanelRow> rows, std::span<const QuarterId> index);

enum class Tradable { tradable, nontradable };
enum class Metro { metro, nonmetro };
enum class WageStratum { high, low, unknown };

struct StrataLabel {
    Tradable tradable = Tradable::nontradable;
    Metro metro = Metro::nonmetro;
    WageStratum wage = WageStratum::unknown;
};

std::string to_string(Tradable v);
std::string to_string(Metro v);
std::string to_string(WageStratum v);

/// Tradable iff the 2-digit sector is one of 11, 21, 31-33, 42, 48-49, 51,
/// 52, 54, 55. Anything else, including unmapped sectors, is nontradable.
Tradable classify_tradable(std::string_view naics);

/// One label per panel cell, in panel cell order.
std::vector<StrataLabel> assign_strata(const Panel& panel, const std::map<std::string, bool>& metro,
                                       QuarterRange pre_period);

// --- file formats -----------------------------------------------------------

std::vector<RawRecord> read_raw_records(const std::filesystem::path& path);
CpiSeries read_cpi(const std::filesystem::path& path);
std::map<std::string, bool> read_metro(const std::filesystem::path& path);
void write_metro(const std::filesystem::path& path, const std::map<std::string, bool>& metro);

void write_panel(const std::filesystem::path& path, const Panel& panel);
Panel read_panel(const std::filesystem::path& path);

void write_strata(const std::filesystem::path& path, const Panel& panel,
                  std::span<const StrataLabel> strata);
std::vector<StrataLabel> read_strata(const std::filesystem::path& path, const Panel& panel);

}  // namespace entryfx::panel
