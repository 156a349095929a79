#pragma once

#include "entryfx/panel.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace entryfx::events {

/// Declaration order is priority order.
enum class Trigger { T1_new_entry, T2_small_to_large, T3_top_decile_jump };

std::string to_string(Trigger trigger);
Trigger parse_trigger(std::string_view name);

/// Per-industry 90th percentile of pre-period quarter-over-quarter
/// establishment changes. Missing entries mean no valid differences.
struct T3Thresholds {
    std::map<std::string, std::optional<double>> by_naics;
    std::map<std::string, int> n_differences;

    std::optional<double> get(const std::string& naics) const;
};

T3Thresholds compute_t3_thresholds(const panel::Panel& panel, panel::QuarterRange pre_period);

struct Event {
    int t = 0;  // 1-based panel index
    Trigger trigger = Trigger::T1_new_entry;

    friend bool operator==(const Event&, const Event&) = default;
};

/// Clause checks at 1-based quarter `t`; missing values never satisfy a clause.
bool fires_t1(std::span<const std::optional<double>> series, int t);
bool fires_t2(std::span<const std::optional<double>> series, int t);
bool fires_t3(std::span<const std::optional<double>> series, int t, std::optional<double> threshold);

/// First quarter that satisfies any trigger, with T1 > T2 > T3 within a quarter.
std::optional<Event> detect_event(std::span<const std::optional<double>> series,
                                  std::optional<double> threshold);

struct Horizon {
    int lo = -8;
    int hi = 16;
};

struct CohortEntry {
    std::optional<int> g;  // 1-based panel index; empty for never-treated
    std::optional<Trigger> trigger;
    bool balanced_window = false;

    bool treated() const { return g.has_value(); }
};

/// One entry per panel cell, in panel cell order.
class CohortMap {
public:
    CohortMap() = default;
    CohortMap(std::vector<CohortEntry> entries, int n_quarters, Horizon horizon);

    std::size_t size() const { return entries_.size(); }
    const CohortEntry& operator[](std::size_t cell) const { return entries_[cell]; }
    std::span<const CohortEntry> entries() const { return entries_; }
    int n_quarters() const { return n_quarters_; }
    Horizon horizon() const { return horizon_; }

    /// Distinct treated cohorts in ascending order.
    std::vector<int> cohorts() const;

private:
    std::vector<CohortEntry> entries_;
    int n_quarters_ = 0;
    Horizon horizon_;
};

bool balanced_window(int g, int n_quarters, Horizon horizon);

CohortMap assign_cohorts(const panel::Panel& panel, const T3Thresholds& thresholds,
                         Horizon horizon = {});

/// Builds a cohort map directly from known cohort indices (simulation, tests).
CohortMap cohorts_from_schedule(std::span<const std::optional<int>> g, int n_quarters,
                                Horizon horizon = {},
                                std::span<const std::optional<Trigger>> triggers = {});

// --- file formats -----------------------------------------------------------

void write_cohorts(const std::filesystem::path& path, const panel::Panel& panel,
                   const CohortMap& cohorts);
CohortMap read_cohorts(const std::filesystem::path& path, const panel::Panel& panel,
                       Horizon horizon = {});

void write_thresholds(const std::filesystem::path& path, const T3Thresholds& thresholds);

}  // namespace entryfx::events
