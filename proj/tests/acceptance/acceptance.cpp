// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include "entryfx/config.hpp"
#include "entryfx/dgp.hpp"
#include "entryfx/did_direct.hpp"
#include "entryfx/drdid.hpp"
#include "entryfx/events.hpp"
#include "entryfx/exposure.hpp"
#include "entryfx/inference.hpp"
#include "entryfx/pipeline.hpp"
#include "entryfx/random.hpp"
#include "entryfx/sensitivity.hpp"
#include "entryfx/spatial.hpp"
#include "entryfx/stats.hpp"

#include "fixtures.hpp"

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

using namespace entryfx;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

double rel_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return max_abs(a - b) / std::max(1e-300, max_abs(b));
}

// ---------------------------------------------------------------------------
// 1. Trigger detection on planted panels

/// Establishment series with a known first event. Background series stay at
/// two or more establishments, with one-quarter spikes that revert, rare
/// permanent drops of one and a few missing quarters; none of these can fire
/// a trigger. Every positive change other than a planted T3 jump is at most 4
/// and every T3 jump is at least 5.
class SeriesBuilder {
public:
    SeriesBuilder(int T, Rng& rng) : s_(static_cast<std::size_t>(T) + 1, kNaN), T_(T), rng_(rng) {}

    void set(int t, double v) { s_[static_cast<std::size_t>(t)] = v; }

    double background(int from, int to, double level) {
        bool spiked = false;
        for (int t = from; t <= to; ++t) {
            if (level >= 3.0 && uniform01(rng_) < 0.03) level -= 1.0;
            double v = level;
            const bool spike = !spiked && uniform01(rng_) < 0.05;
            if (spike) v += 1.0 + static_cast<double>(uniform_index(rng_, 3));
            spiked = spike;
            if (missing_left_ > 0 && uniform01(rng_) < 0.02) {
                --missing_left_;
                v = kNaN;
            }
            set(t, v);
        }
        return level;
    }

    double level() { return 2.0 + static_cast<double>(uniform_index(rng_, 29)); }
    int draw(int lo, int hi) { return lo + static_cast<int>(uniform_index(rng_, static_cast<std::uint64_t>(hi - lo + 1))); }

    double at(int t) const { return s_[static_cast<std::size_t>(t)]; }
    int T() const { return T_; }

private:
    std::vector<double> s_;
    int T_;
    Rng& rng_;
    int missing_left_ = 2;
};

struct Planted {
    std::optional<int> g;
    std::optional<events::Trigger> trigger;
    std::vector<double> series;  // 1-based, NaN for missing
};

Planted plant(int T, Rng& rng) {
    SeriesBuilder b(T, rng);
    Planted p;
    const auto kind = uniform_index(rng, 5);  // 0, 1: never; 2: T1; 3: T2; 4: T3
    if (kind <= 1) {
        b.background(1, T, b.level());
    } else if (kind == 2) {
        const int g = b.draw(9, T - 1);
        int t0 = 1;
        if (g - 8 >= 2 && uniform01(rng) < 0.5) {
            t0 = b.draw(2, g - 8);
            b.background(1, t0 - 1, b.level());
        }
        for (int t = t0; t < g; ++t) b.set(t, 0.0);
        b.set(g, b.draw(1, 3));
        b.set(g + 1, b.draw(1, 3));
        b.background(g + 2, T, b.at(g + 1));
        p.g = g;
        p.trigger = events::Trigger::T1_new_entry;
    } else if (kind == 3) {
        const int g = b.draw(2, T - 1);
        for (int t = 1; t < g; ++t) b.set(t, 1.0);
        if (g > 3 && uniform01(rng) < 0.3) b.set(b.draw(1, g - 2), kNaN);
        b.set(g, b.draw(2, 5));
        b.set(g + 1, b.draw(2, 5));
        b.background(g + 2, T, b.at(g + 1));
        p.g = g;
        p.trigger = events::Trigger::T2_small_to_large;
    } else {
        const int g = b.draw(2, T - 1);
        double level = b.level();
        if (g >= 3) level = b.background(1, g - 2, level);
        const double jumped = level + b.draw(5, 20);
        b.set(g - 1, level);
        b.set(g, jumped);
        b.set(g + 1, jumped);
        b.background(g + 2, T, jumped);
        p.g = g;
        p.trigger = events::Trigger::T3_top_decile_jump;
    }
    p.series.resize(static_cast<std::size_t>(T) + 1);
    for (int t = 1; t <= T; ++t) p.series[static_cast<std::size_t>(t)] = b.at(t);
    return p;
}

/// Type-7 quantile, written out independently of the library.
double p90(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const double h = 0.9 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Verdict check_triggers(const fs::path&) {
    Stopwatch clock;
    const std::vector<std::string> all_naics = {"31", "44", "52"};
    long long mismatches = 0;
    long long cells = 0;
    long long threshold_gaps = 0;
    long long planted_counts[3] = {0, 0, 0};
    for (std::uint64_t rep = 0; rep < 1000; ++rep) {
        Rng rng(derive_seed(101, rep));
        const int T = 12 + static_cast<int>(uniform_index(rng, 34));
        const int n_munis = 8 + static_cast<int>(uniform_index(rng, 9));
        const std::vector<std::string> naics(all_naics.begin(),
                                             all_naics.begin() + 2 + static_cast<long>(uniform_index(rng, 2)));
        const auto keys = testing::cell_grid(n_munis, naics);
        std::vector<Planted> planted;
        for (std::size_t c = 0; c < keys.size(); ++c) planted.push_back(plant(T, rng));
        const auto panel = testing::outcome_panel(
            keys, T, [](std::size_t, int) { return 0.0; },
            [&](std::size_t c, int t) { return planted[c].series[static_cast<std::size_t>(t)]; });

        // Cells come out of the grid already in panel order.
        for (std::size_t c = 0; c < keys.size(); ++c) {
            if (panel.cells()[c] != keys[c]) throw std::logic_error("cell order differs from the panel");
        }

        // Independent threshold: every positive change outside the planted
        // jumps is at most 4, so the top decile has to stay below 5.
        const panel::QuarterRange pre{1, std::min(23, T)};
        const auto thresholds = events::compute_t3_thresholds(panel, pre);
        for (const auto& k : naics) {
            std::vector<double> d;
            for (std::size_t c = 0; c < keys.size(); ++c) {
                if (keys[c].naics != k) continue;
                const auto& s = planted[c].series;
                for (int t = 2; t <= pre.last_t; ++t) {
                    const double now = s[static_cast<std::size_t>(t)];
                    const double prev = s[static_cast<std::size_t>(t - 1)];
                    if (std::isfinite(now) && std::isfinite(prev)) d.push_back(now - prev);
                }
            }
            const double q = p90(d);
            const auto lib = thresholds.get(k);
            if (!lib || std::abs(*lib - q) > 1e-12 || q >= 5.0) ++threshold_gaps;
        }

        const auto found = events::assign_cohorts(panel, thresholds);
        for (std::size_t c = 0; c < panel.n_cells(); ++c) {
            const auto& want = planted[c];
            ++cells;
            if (want.trigger) ++planted_counts[static_cast<int>(*want.trigger)];
            if (found[c].g != want.g || found[c].trigger != want.trigger) ++mismatches;
        }
    }

    // Simultaneous fires resolve by priority; the earliest quarter wins overall.
    auto series = [](std::vector<double> v) {
        std::vector<std::optional<double>> s;
        for (double x : v) s.push_back(std::isfinite(x) ? std::optional(x) : std::nullopt);
        return s;
    };
    struct Case {
        std::vector<double> values;
        double threshold;
        events::Event expected;
        std::vector<events::Trigger> co_firing;
    };
    using events::Trigger;
    const std::vector<Case> cases = {
        {{0, 0, 0, 0, 0, 0, 0, 0, 3, 3}, 2.0, {9, Trigger::T1_new_entry},
         {Trigger::T1_new_entry, Trigger::T2_small_to_large, Trigger::T3_top_decile_jump}},
        {{0, 0, 0, 0, 0, 0, 0, 0, 1, 1}, 0.5, {9, Trigger::T1_new_entry},
         {Trigger::T1_new_entry, Trigger::T3_top_decile_jump}},
        {{1, 1, 1, 9, 9}, 2.0, {4, Trigger::T2_small_to_large},
         {Trigger::T2_small_to_large, Trigger::T3_top_decile_jump}},
        {{5, 5, 5, 15, 15}, 2.0, {4, Trigger::T3_top_decile_jump}, {Trigger::T3_top_decile_jump}},
        {{2, 9, 9, 9, 1, 4, 4}, 3.0, {2, Trigger::T3_top_decile_jump}, {Trigger::T3_top_decile_jump}},
    };
    int priority_failures = 0;
    for (const auto& c : cases) {
        const auto s = series(c.values);
        const auto ev = events::detect_event(s, c.threshold);
        if (!ev || !(*ev == c.expected)) ++priority_failures;
        const int t = c.expected.t;
        const std::set<Trigger> firing = [&] {
            std::set<Trigger> f;
            if (events::fires_t1(s, t)) f.insert(Trigger::T1_new_entry);
            if (events::fires_t2(s, t)) f.insert(Trigger::T2_small_to_large);
            if (events::fires_t3(s, t, c.threshold)) f.insert(Trigger::T3_top_decile_jump);
            return f;
        }();
        if (firing != std::set<Trigger>(c.co_firing.begin(), c.co_firing.end())) ++priority_failures;
    }

    const double secs = clock.seconds();
    Verdict v;
    v.pass = mismatches == 0 && threshold_gaps == 0 && priority_failures == 0 && secs < 30.0;
    v.detail = fmt::format(
        "1000 panels, {} cells (planted T1 {}, T2 {}, T3 {}), {} mismatches, {} threshold disagreements, "
        "{} priority-case failures, {:.1f} s",
        cells, planted_counts[0], planted_counts[1], planted_counts[2], mismatches, threshold_gaps,
        priority_failures, secs);
    return v;
}

// ---------------------------------------------------------------------------
// 2. CS and BJS paths

dgp::DgpConfig heterogeneous_design(std::uint64_t seed, int n_munis) {
    auto cfg = testing::small_design(seed);
    cfg.n_munis = n_munis;
    cfg.grid_columns = 10;
    cfg.direct = 0.2;
    cfg.direct_slope = 0.01;
    cfg.direct_cohort_slope = 0.01;
    cfg.direct_cell_sd = 0.05;
    cfg.anticipation = {0.03, 0.01};
    return cfg;
}

struct PathError {
    int worst_ell = 0;
    double worst = 0.0;
    int compared = 0;
};

PathError compare_path(const direct::EventStudyPath& path, const std::vector<double>& truth) {
    PathError e;
    for (const auto& p : path.points) {
        const double want = truth[static_cast<std::size_t>(p.ell + 8)];
        if (!p.available || p.reference || !std::isfinite(want)) continue;
        ++e.compared;
        const double err = std::abs(p.att - want);
        if (err > e.worst) {
            e.worst = err;
            e.worst_ell = p.ell;
        }
    }
    return e;
}

Verdict check_direct_paths(const fs::path&) {
    Stopwatch clock;
    const auto outcome = panel::Outcome::log_covered_emp;

    // Zero noise, one constant effect.
    auto flat = testing::small_design(7);
    flat.noise_sd = 0.0;
    flat.direct = 0.25;
    const auto sim0 = dgp::simulate(flat);
    const auto truth0 = dgp::true_event_path(sim0, {}, true);
    const auto cs0 = direct::aggregate_event_time(
        direct::cs_group_time(sim0.panel, sim0.cohorts, outcome, 2, direct::Mode::balanced));
    const auto bjs0 = direct::bjs_impute(sim0.panel, sim0.cohorts, outcome, 2, direct::Mode::balanced).path;
    const auto e_cs = compare_path(cs0, truth0);
    const auto e_bjs = compare_path(bjs0, truth0);
    const bool exact = e_cs.worst <= 1e-8 && e_bjs.worst <= 1e-8 && e_cs.compared > 0 && e_bjs.compared > 0;

    // Heterogeneous effects: per event time, the mean error across
    // replications against the Monte Carlo spread of the estimator.
    constexpr int R = 200;
    std::map<std::string, std::map<int, std::vector<double>>> errors;
    for (int r = 0; r < R; ++r) {
        const auto sim = dgp::simulate(heterogeneous_design(derive_seed(202, static_cast<std::uint64_t>(r)), 30));
        const auto truth = dgp::true_event_path(sim, {}, true);
        const auto cs = direct::aggregate_event_time(
            direct::cs_group_time(sim.panel, sim.cohorts, outcome, 2, direct::Mode::balanced));
        const auto bjs = direct::bjs_impute(sim.panel, sim.cohorts, outcome, 2, direct::Mode::balanced).path;
        for (const auto* path : {&cs, &bjs}) {
            for (const auto& p : path->points) {
                const double want = truth[static_cast<std::size_t>(p.ell + 8)];
                if (!p.available || p.reference || !std::isfinite(want)) continue;
                errors[path->estimator][p.ell].push_back(p.att - want);
            }
        }
    }
    bool unbiased = true;
    double worst_ratio = 0.0;
    std::string worst;
    int points = 0;
    for (const auto& [estimator, by_ell] : errors) {
        for (const auto& [ell, e] : by_ell) {
            ++points;
            if (e.size() < R / 2) {
                unbiased = false;
                continue;
            }
            const double ratio = std::abs(stats::mean(e)) / stats::sample_sd(e);
            if (ratio > worst_ratio) {
                worst_ratio = ratio;
                worst = fmt::format("{} ell {}", estimator, ell);
            }
            if (!(ratio < 0.5)) unbiased = false;
        }
    }

    const double secs = clock.seconds();
    Verdict v;
    v.pass = exact && unbiased && secs < 300.0;
    v.detail = fmt::format(
        "zero-noise max error CS {:.2e}, BJS {:.2e}; {} reps, {} event-time points, worst |mean bias|/MC SD "
        "{:.3f} ({}), {:.1f} s",
        e_cs.worst, e_bjs.worst, R, points, worst_ratio, worst, secs);
    return v;
}

// ---------------------------------------------------------------------------
// 3. Uniform bands

Verdict check_uniform_bands(const fs::path&) {
    Stopwatch clock;
    constexpr int R = 300;
    const double z = stats::normal_quantile(0.975);
    int covered = 0;
    int nested = 0;
    for (int r = 0; r < R; ++r) {
        const auto seed = derive_seed(303, static_cast<std::uint64_t>(r));
        // Reference grid with few enough industry x cohort groups that each
        // holds several treated cells; the influence-based variance of a
        // single-cell group mean is not identified.
        auto cfg = heterogeneous_design(seed, 78);
        cfg.n_industries = 3;
        cfg.g_max = 14;
        const auto sim = dgp::simulate(cfg);
        const auto truth = dgp::true_event_path(sim, {}, true);
        auto path = direct::aggregate_event_time(
            direct::cs_group_time(sim.panel, sim.cohorts, panel::Outcome::log_covered_emp, 2,
                                  direct::Mode::balanced));
        direct::multiplier_band(path, 999, 0.05, derive_seed(seed, "band"));
        bool inside = true;
        bool contains = true;
        for (const auto& p : path.points) {
            if (!p.available || p.reference) continue;
            const double tol = 1e-12 * (1.0 + std::abs(p.att));
            if (p.band_lo > p.att - z * p.se + tol || p.band_hi < p.att + z * p.se - tol) contains = false;
            if (!direct::in_sup_set(p)) continue;
            const double want = truth[static_cast<std::size_t>(p.ell + 8)];
            if (!(want >= p.band_lo && want <= p.band_hi)) inside = false;
        }
        covered += inside ? 1 : 0;
        nested += contains ? 1 : 0;
    }
    const double rate = static_cast<double>(covered) / R;
    Verdict v;
    v.pass = rate >= 0.92 && rate <= 0.98 && nested == R;
    v.detail = fmt::format("{} reps, joint coverage of the true path {:.3f}, band contains pointwise CI in {}/{}, {:.1f} s",
                           R, rate, nested, R, clock.seconds());
    return v;
}

// ---------------------------------------------------------------------------
// 4. DR-DiD recovery

dgp::DgpConfig full_design(std::uint64_t seed) {
    dgp::DgpConfig c;
    c.treated_share = 0.3;
    c.g_min = 10;
    c.g_max = 28;
    c.direct = 0.2;
    c.satt = {-0.1, 0.0, 0.0};
    c.seed = seed;
    return c;
}

Verdict check_drdid(const fs::path&) {
    Stopwatch clock;
    constexpr int R = 200;
    const std::array<double, 4> truth = {0.2, -0.1, 0.0, 0.0};
    const std::array<const char*, 4> names = {"DATT", "SATT_same", "SATT_cross", "SATT_nall"};
    std::array<std::vector<double>, 4> draws;
    int identity_failures = 0;
    double worst_identity = 0.0;
    for (int r = 0; r < R; ++r) {
        const auto seed = derive_seed(404, static_cast<std::uint64_t>(r));
        const auto sim = dgp::simulate(full_design(seed));
        const auto reg = drdid::build_slice_regressors(sim.panel, sim.cohorts, sim.exposure, {},
                                                       panel::Outcome::log_covered_emp, {0, 4},
                                                       drdid::SampleOptions{});
        const auto folds = drdid::make_folds(sim.panel.geoids(), 5, derive_seed(seed, "folds"));
        const auto est = drdid::estimate_slice(reg, folds, sim.panel, drdid::EstimateOptions{});
        const auto b = est.coefficients();
        for (int k = 0; k < 4; ++k) draws[static_cast<std::size_t>(k)].push_back(b(k));
        const double eps = std::numeric_limits<double>::epsilon();
        const double e1 = std::abs(est.tatt - (est.datt + est.satt));
        const double e2 = std::abs(est.satt - (est.satt_channel[0] + est.satt_channel[1] + est.satt_channel[2]));
        worst_identity = std::max({worst_identity, e1, e2});
        if (e1 > 4 * eps * (1.0 + std::abs(est.tatt)) || e2 > 4 * eps * (1.0 + std::abs(est.satt))) {
            ++identity_failures;
        }
    }
    bool recovered = true;
    std::string summary;
    for (std::size_t k = 0; k < 4; ++k) {
        const double mean = stats::mean(draws[k]);
        const double mcse = stats::sample_sd(draws[k]) / std::sqrt(static_cast<double>(R));
        const double z = (mean - truth[k]) / mcse;
        if (!(std::abs(z) <= 2.0)) recovered = false;
        summary += fmt::format("{}{} {:.4f} (truth {}, {:+.2f} MC SE)", k ? "; " : "", names[k], mean, truth[k], z);
    }
    Verdict v;
    v.pass = recovered && identity_failures == 0;
    v.detail = fmt::format("{} reps: {}; identity violations {} (max {:.1e}), {:.1f} s", R, summary,
                           identity_failures, worst_identity, clock.seconds());
    return v;
}

// ---------------------------------------------------------------------------
// 5. Exposure algebra

Verdict check_exposure(const fs::path&) {
    Stopwatch clock;
    const std::vector<std::string> all_naics = {"11", "23", "31", "44", "52", "72"};
    long long bound_failures = 0;
    long long sbar_failures = 0;
    long long monotone_failures = 0;
    long long sum_failures = 0;
    long long trim_failures = 0;
    constexpr int N = 10000;
    for (std::uint64_t rep = 0; rep < N; ++rep) {
        Rng rng(derive_seed(505, rep));
        const int cols = 2 + static_cast<int>(uniform_index(rng, 4));
        const int n = 2 + static_cast<int>(uniform_index(rng, 11));
        const int T = 4 + static_cast<int>(uniform_index(rng, 17));
        const auto n_ind = 1 + uniform_index(rng, all_naics.size());
        const std::vector<std::string> naics(all_naics.begin(), all_naics.begin() + static_cast<long>(n_ind));
        std::vector<panel::CellKey> keys;
        for (const auto& k : testing::cell_grid(n, naics)) {
            if (uniform01(rng) < 0.8) keys.push_back(k);
        }
        if (keys.empty()) keys.push_back(testing::cell_grid(n, naics).front());
        const auto panel = testing::outcome_panel(keys, T, [](std::size_t, int) { return 0.0; });
        const auto weights = spatial::build_weights(spatial::grid_graph(cols, n, 10000.0), std::min(3, n - 1));
        std::vector<std::optional<int>> g(panel.n_cells());
        for (auto& x : g) {
            if (uniform01(rng) < 0.5) x = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(T)));
        }
        const auto cohorts = events::cohorts_from_schedule(g, T);
        const exposure::Layout layout(panel, weights);
        const auto series = exposure::compute_exposure(layout, cohorts);

        auto in_unit = [](double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; };
        for (auto form : {exposure::Form::any, exposure::Form::early}) {
            for (auto ch : exposure::kChannels) {
                const auto& m = series.matrix(ch, form);
                for (Eigen::Index i = 0; i < m.size(); ++i) bound_failures += in_unit(m(i)) ? 0 : 1;
            }
            const auto& own = series.own(form);
            for (Eigen::Index i = 0; i < own.size(); ++i) bound_failures += in_unit(own(i)) ? 0 : 1;
        }
        for (auto ch : exposure::kChannels) {
            const auto& m = series.matrix(ch, exposure::Form::any);
            for (Eigen::Index c = 0; c < m.rows(); ++c) {
                for (Eigen::Index t = 1; t < m.cols(); ++t) monotone_failures += m(c, t) < m(c, t - 1) ? 1 : 0;
            }
        }

        const int a = static_cast<int>(uniform_index(rng, 9));
        const exposure::Slice slice{a, a + static_cast<int>(uniform_index(rng, 9))};
        const double L = slice.length();
        const double epsilon = 0.01 + 0.1 * uniform01(rng);
        for (auto ch : exposure::kChannels) {
            const auto S = exposure::slice_sums(series, ch, slice);
            for (std::size_t c = 0; c < panel.n_cells(); ++c) {
                for (int t = 1; t <= T; ++t) {
                    std::vector<double> values;
                    double brute = 0.0;
                    for (int l = slice.a; l <= slice.b; ++l) {
                        const double e = series.share(ch, exposure::Form::any, c, t - l);
                        values.push_back(e);
                        brute += e;
                    }
                    const double s = S(static_cast<Eigen::Index>(c), t - 1);
                    if (!(s >= 0.0 && s <= L)) ++bound_failures;
                    if (std::abs(s - brute) > 1e-12 * L) ++sum_failures;
                    const auto summary = exposure::slice_summary(values, slice, epsilon);
                    if (summary.S_bar != summary.S / L || std::abs(summary.S - brute) > 1e-12 * L) ++sbar_failures;
                    const bool interior = summary.S_bar >= epsilon && summary.S_bar <= 1.0 - epsilon;
                    if (summary.keep != interior) ++trim_failures;
                }
            }
        }
        for (double s : {epsilon, 1.0 - epsilon, std::nextafter(epsilon, 0.0),
                         std::nextafter(1.0 - epsilon, 2.0), uniform01(rng)}) {
            if (exposure::keep_rule(s, epsilon) != (s >= epsilon && s <= 1.0 - epsilon)) ++trim_failures;
        }
    }
    Verdict v;
    v.pass = bound_failures + sbar_failures + monotone_failures + sum_failures + trim_failures == 0;
    v.detail = fmt::format(
        "{} cases: bound violations {}, S_bar != S/L {}, any-share decreases {}, slice-sum mismatches {}, "
        "trim-rule disagreements {}, {:.1f} s",
        N, bound_failures, sbar_failures, monotone_failures, sum_failures, trim_failures, clock.seconds());
    return v;
}

// ---------------------------------------------------------------------------
// 6. Moran's I

Verdict check_moran(const fs::path&) {
    Stopwatch clock;
    const auto square = testing::lattice(2, 4);
    Eigen::VectorXd checker(4);
    checker << 1, -1, -1, 1;
    const double I = spatial::morans_i(checker, square.weights);

    const auto grid = spatial::grid_graph(10, 78, 10000.0);
    const auto w = spatial::build_weights(grid, 3);
    // Moderate signal: factor and idiosyncratic noise have equal variance.
    const auto field = dgp::make_spatial_field(grid.centroids, 30.0, 1.0);
    constexpr int R = 200;
    constexpr int quarters = 6;
    std::vector<double> null_p;
    int detected = 0;
    for (int r = 0; r < R; ++r) {
        Rng rng(derive_seed(606, static_cast<std::uint64_t>(r)));
        const Eigen::VectorXd factor = field.draw(rng);
        std::vector<sensitivity::ResidualPoint> null_pts;
        std::vector<sensitivity::ResidualPoint> planted;
        for (int t = 1; t <= quarters; ++t) {
            for (int i = 0; i < 78; ++i) {
                const double e = standard_normal(rng);
                null_pts.push_back({i, t, e});
                planted.push_back({i, t, factor(i) + standard_normal(rng)});
            }
        }
        const auto seed = derive_seed(607, static_cast<std::uint64_t>(r));
        null_p.push_back(sensitivity::moran_gate("null", null_pts, w.weights, 999, seed).p_value);
        detected += sensitivity::moran_gate("planted", planted, w.weights, 999, seed).p_value < 0.05 ? 1 : 0;
    }
    const auto ks = stats::ks_uniform(null_p);
    const double power = static_cast<double>(detected) / R;
    Verdict v;
    v.pass = I == -1.0 && ks.p_value > 0.01 && power > 0.8;
    v.detail = fmt::format("checkerboard I = {}, null KS D = {:.3f} (p = {:.3f}) over {} panels, power {:.3f}, {:.1f} s",
                           I, ks.statistic, ks.p_value, R, power, clock.seconds());
    return v;
}

// ---------------------------------------------------------------------------
// 7. FDR q-values

/// Step-up q-values by direct search: the smallest m p_(k) / k over every
/// rank k whose p-value is at least p_i, with k counting ties upward.
std::vector<double> brute_step_up(const std::vector<double>& p, double scale) {
    const auto m = p.size();
    std::vector<double> q(m, 1.0);
    for (std::size_t i = 0; i < m; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
            if (p[j] < p[i]) continue;
            std::size_t rank = 0;
            for (double x : p) rank += x <= p[j] ? 1 : 0;
            best = std::min(best, static_cast<double>(m) * p[j] / static_cast<double>(rank));
        }
        q[i] = std::min(1.0, best * scale);
    }
    return q;
}

Verdict check_fdr(const fs::path&) {
    Stopwatch clock;
    int mismatched = 0;
    for (std::uint64_t rep = 0; rep < 1000; ++rep) {
        Rng rng(derive_seed(707, rep));
        const auto m = 1 + uniform_index(rng, 50);
        std::vector<double> p(m);
        const bool coarse = rep % 4 == 0;  // ties
        for (auto& x : p) {
            x = coarse ? static_cast<double>(uniform_index(rng, 11)) / 10.0 : std::pow(uniform01(rng), 3.0);
        }
        double harmonic = 0.0;
        for (std::size_t k = 1; k <= m; ++k) harmonic += 1.0 / static_cast<double>(k);
        const auto got = inference::fdr_adjust(p, "random");
        if (got.bh != brute_step_up(p, 1.0) || got.by != brute_step_up(p, harmonic)) ++mismatched;
    }
    const std::vector<double> worked = {0.01, 0.02, 0.03, 0.04};
    const auto w = inference::fdr_adjust(worked, "worked");
    const bool example = std::all_of(w.bh.begin(), w.bh.end(), [](double q) { return std::abs(q - 0.04) < 1e-15; });
    Verdict v;
    v.pass = mismatched == 0 && example;
    v.detail = fmt::format("1000 random vectors (m <= 50), {} mismatches; worked example BH q = {:.4f}, {:.4f}, {:.4f}, {:.4f}, {:.1f} s",
                           mismatched, w.bh[0], w.bh[1], w.bh[2], w.bh[3], clock.seconds());
    return v;
}

// ---------------------------------------------------------------------------
// 8. Inference family

Verdict check_inference(const fs::path&) {
    Stopwatch clock;
    Rng rng(808);
    const Eigen::Index n = 120;
    Eigen::MatrixXd X(n, 3);
    Eigen::VectorXd u(n);
    std::vector<int> singleton(static_cast<std::size_t>(n));
    std::vector<int> groups(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = standard_normal(rng);
        X(i, 2) = standard_normal(rng) + 0.5 * X(i, 1);
        u(i) = standard_normal(rng) * (1.0 + std::abs(X(i, 1)));
        singleton[static_cast<std::size_t>(i)] = static_cast<int>(i);
        groups[static_cast<std::size_t>(i)] = static_cast<int>(i % 15);
    }
    const double N = static_cast<double>(n);
    const double k = 3.0;

    const auto cl = inference::cluster_se(X, u, singleton);
    const auto hc = inference::hc0_se(X, u);
    const double d_singleton = rel_diff(cl.vcov, hc.vcov * (N / (N - k)));

    const auto two = inference::twoway_cluster_se(X, u, groups, groups);
    const auto one = inference::cluster_se(X, u, groups);
    const double d_twoway = rel_diff(two.vcov, one.vcov);

    // SHAC with a vanishing cutoff keeps only the (municipality, quarter)
    // score sums; build that sandwich directly.
    const auto grid = spatial::grid_graph(6, 30, 10000.0);
    const auto dist = spatial::pairwise_distances_km(grid);
    std::vector<int> muni(static_cast<std::size_t>(n));
    std::vector<int> quarter(static_cast<std::size_t>(n));
    std::map<std::pair<int, int>, Eigen::Vector3d> sums;
    for (Eigen::Index i = 0; i < n; ++i) {
        muni[static_cast<std::size_t>(i)] = static_cast<int>(uniform_index(rng, 30));
        quarter[static_cast<std::size_t>(i)] = static_cast<int>(uniform_index(rng, 4));
        auto [it, fresh] = sums.try_emplace({muni[static_cast<std::size_t>(i)], quarter[static_cast<std::size_t>(i)]},
                                            Eigen::Vector3d::Zero());
        it->second += u(i) * X.row(i).transpose();
    }
    Eigen::Matrix3d meat = Eigen::Matrix3d::Zero();
    for (const auto& [key, s] : sums) meat += s * s.transpose();
    const Eigen::Matrix3d bread = (X.transpose() * X).inverse();
    const auto shac = inference::shac_se(X, u, muni, quarter, dist, 1e-6);
    const double d_shac = rel_diff(shac.vcov, bread * meat * bread);

    // Coverage with spatially correlated regressor and error, one
    // observation per municipality.
    const auto world = spatial::grid_graph(10, 78, 10000.0);
    const auto world_dist = spatial::pairwise_distances_km(world);
    const auto field = dgp::make_spatial_field(world.centroids, 40.0, 1.0);
    constexpr int R = 300;
    int cover_cluster = 0;
    int cover_scpc = 0;
    std::vector<int> ids(78);
    for (int i = 0; i < 78; ++i) ids[static_cast<std::size_t>(i)] = i;
    for (int r = 0; r < R; ++r) {
        Rng draw_rng(derive_seed(809, static_cast<std::uint64_t>(r)));
        const Eigen::VectorXd x = field.draw(draw_rng);
        const Eigen::VectorXd e = field.draw(draw_rng);
        Eigen::MatrixXd Z(78, 2);
        Z.col(0).setOnes();
        Z.col(1) = x;
        const Eigen::VectorXd y = 1.0 + 0.5 * x.array() + e.array();
        const Eigen::VectorXd beta = Z.colPivHouseholderQr().solve(y);
        const Eigen::VectorXd res = y - Z * beta;
        const auto vc = inference::cluster_se(Z, res, ids);
        const auto vs = inference::scpc_se(Z, res, ids, world_dist, 0.03, std::nullopt);
        cover_cluster += std::abs(beta(1) - 0.5) <= vc.critical_value(0.05) * vc.se(1) ? 1 : 0;
        cover_scpc += std::abs(beta(1) - 0.5) <= vs.critical_value(0.05) * vs.se(1) ? 1 : 0;
    }
    const double c_cluster = static_cast<double>(cover_cluster) / R;
    const double c_scpc = static_cast<double>(cover_scpc) / R;

    Verdict v;
    v.pass = d_singleton < 1e-10 && d_twoway < 1e-10 && d_shac < 1e-10 && c_scpc >= c_cluster;
    v.detail = fmt::format(
        "singleton vs HC0 rel diff {:.1e}; two-way identical ids {:.1e}; SHAC cutoff limit {:.1e}; "
        "coverage over {} reps SCPC {:.3f} vs cluster {:.3f}, {:.1f} s",
        d_singleton, d_twoway, d_shac, R, c_scpc, c_cluster, clock.seconds());
    return v;
}

// ---------------------------------------------------------------------------
// 9. Smoothness bounds

/// Identified set for l'(beta_post - delta_post) when the trend delta matches
/// the pre-period coefficients and its second differences are bounded by M.
/// Two post periods give a two-dimensional feasible region, solved by
/// enumerating intersections of constraint boundaries.
std::pair<double, double> lp_bounds(const std::array<double, 3>& pre, const std::array<double, 2>& post,
                                    const std::array<double, 2>& l, double M) {
    // Rows: a0 d0 + a1 d1 + c, bounded in [-M, M].
    struct Row {
        double a0, a1, c;
    };
    const std::vector<Row> rows = {
        {1.0, 0.0, -2.0 * pre[2] + pre[1]},  // d0 - 2 d(-1) + d(-2)
        {-2.0, 1.0, pre[2]},                 // d1 - 2 d0 + d(-1)
    };
    std::vector<std::array<double, 3>> lines;  // a0 d0 + a1 d1 = rhs
    for (const auto& r : rows) {
        lines.push_back({r.a0, r.a1, M - r.c});
        lines.push_back({r.a0, r.a1, -M - r.c});
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        for (std::size_t j = i + 1; j < lines.size(); ++j) {
            const double det = lines[i][0] * lines[j][1] - lines[i][1] * lines[j][0];
            if (std::abs(det) < 1e-14) continue;
            const double d0 = (lines[i][2] * lines[j][1] - lines[i][1] * lines[j][2]) / det;
            const double d1 = (lines[i][0] * lines[j][2] - lines[i][2] * lines[j][0]) / det;
            bool feasible = true;
            for (const auto& r : rows) feasible = feasible && std::abs(r.a0 * d0 + r.a1 * d1 + r.c) <= M + 1e-12;
            if (!feasible) continue;
            const double value = l[0] * (post[0] - d0) + l[1] * (post[1] - d1);
            lo = std::min(lo, value);
            hi = std::max(hi, value);
        }
    }
    return {lo, hi};
}

Verdict check_honest(const fs::path&) {
    Stopwatch clock;
    const RunConfig defaults;
    const auto& grid = defaults.m_grid;
    double worst_baseline = 0.0;
    int nesting_failures = 0;
    double worst_lp = 0.0;
    for (std::uint64_t rep = 0; rep < 200; ++rep) {
        Rng rng(derive_seed(909, rep));
        const std::vector<int> ells = {-4, -3, -2, -1, 0, 1, 2, 3};
        Eigen::MatrixXd A(8, 8);
        for (Eigen::Index i = 0; i < A.size(); ++i) A(i) = 0.05 * standard_normal(rng);
        const Eigen::MatrixXd cov = A * A.transpose() + 1e-4 * Eigen::MatrixXd::Identity(8, 8);
        Eigen::VectorXd target = Eigen::VectorXd::Zero(8);
        for (int i = 4; i < 8; ++i) target(i) = uniform01(rng);

        Eigen::VectorXd flat = Eigen::VectorXd::Zero(8);
        for (int i = 4; i < 8; ++i) flat(i) = 0.3 * standard_normal(rng);
        const auto b0 = sensitivity::honest_sd_bounds(ells, flat, cov, target, -1, grid, 0.05);
        worst_baseline = std::max({worst_baseline, std::abs(b0.rows[0].lo - b0.baseline_lo),
                                   std::abs(b0.rows[0].hi - b0.baseline_hi)});

        Eigen::VectorXd trended(8);
        for (int i = 0; i < 8; ++i) trended(i) = 0.1 * standard_normal(rng);
        const auto bt = sensitivity::honest_sd_bounds(ells, trended, cov, target, -1, grid, 0.05);
        for (std::size_t i = 1; i < bt.rows.size(); ++i) {
            if (bt.rows[i].lo > bt.rows[i - 1].lo || bt.rows[i].hi < bt.rows[i - 1].hi) ++nesting_failures;
        }

        // Toy path: three leads on a line, two post periods, no sampling noise.
        const double level = 0.1 * standard_normal(rng);
        const double slope = 0.05 * standard_normal(rng);
        const std::vector<int> toy_ells = {-3, -2, -1, 0, 1};
        Eigen::VectorXd beta(5);
        for (int i = 0; i < 5; ++i) beta(i) = level + slope * toy_ells[static_cast<std::size_t>(i)];
        beta(3) += 0.2 * standard_normal(rng);
        beta(4) += 0.2 * standard_normal(rng);
        Eigen::VectorXd l = Eigen::VectorXd::Zero(5);
        l(3) = rep % 2 ? 1.0 : uniform01(rng);
        l(4) = rep % 2 ? 1.0 : uniform01(rng);
        const auto toy = sensitivity::honest_sd_bounds(toy_ells, beta, Eigen::MatrixXd::Zero(5, 5), l, -1, grid, 0.05);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const auto [lo, hi] = lp_bounds({beta(0), beta(1), beta(2)}, {beta(3), beta(4)}, {l(3), l(4)}, grid[i]);
            worst_lp = std::max({worst_lp, std::abs(toy.rows[i].lo - lo), std::abs(toy.rows[i].hi - hi)});
        }
    }
    Verdict v;
    v.pass = worst_baseline <= 1e-8 && nesting_failures == 0 && worst_lp <= 1e-6;
    v.detail = fmt::format(
        "200 cases: M = 0 vs baseline max diff {:.1e}; nesting violations {}; toy path vs LP max diff {:.1e}, {:.1f} s",
        worst_baseline, nesting_failures, worst_lp, clock.seconds());
    return v;
}

// ---------------------------------------------------------------------------
// 10. End-to-end determinism

Verdict check_pipeline(const fs::path& work) {
    const auto dgp_path = work / "e2e_dgp.json";
    testing::write_text(dgp_path, dgp::to_json(full_design(31)));
    std::vector<double> secs;
    std::vector<fs::path> dirs;
    for (const char* name : {"e2e_a", "e2e_b"}) {
        const auto out = work / name;
        fs::remove_all(out);
        RunConfig c;
        c.out_dir = out;
        c.dgp_config = dgp_path;
        c.seed = 1010;
        Stopwatch clock;
        pipeline::run_stage("simulate", c);
        pipeline::run_all(c);
        secs.push_back(clock.seconds());
        dirs.push_back(out);
    }
    int files = 0;
    std::vector<std::string> differing;
    for (const auto& e : fs::directory_iterator(dirs[0])) {
        if (e.path().extension() != ".csv") continue;
        ++files;
        const auto other = dirs[1] / e.path().filename();
        if (!fs::exists(other) || testing::read_text(e.path()) != testing::read_text(other)) {
            differing.push_back(e.path().filename().string());
        }
    }
    Verdict v;
    v.pass = files > 0 && differing.empty() && secs[0] < 600.0 && secs[1] < 600.0;
    v.detail = fmt::format("78 x 12 x 45 panel, {} numeric files compared, {} differ{}, runs took {:.1f} s and {:.1f} s",
                           files, differing.size(),
                           differing.empty() ? "" : fmt::format(" ({})", fmt::join(differing, ", ")), secs[0],
                           secs[1]);
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app("entryfx acceptance checks");
    std::string work_dir = (fs::temp_directory_path() / "entryfx_acceptance").string();
    std::vector<int> only;
    app.add_option("--work-dir", work_dir, "Scratch directory for end-to-end runs");
    app.add_option("--only", only, "Run only the listed criteria");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work_dir);

    const std::vector<std::pair<std::string, std::function<Verdict(const fs::path&)>>> criteria = {
        {"trigger detection", check_triggers},
        {"CS/BJS correctness", check_direct_paths},
        {"uniform bands", check_uniform_bands},
        {"DR-DiD recovery", check_drdid},
        {"exposure algebra", check_exposure},
        {"Moran's I", check_moran},
        {"FDR q-values", check_fdr},
        {"inference family", check_inference},
        {"smoothness bounds", check_honest},
        {"pipeline determinism", check_pipeline},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Verdict v;
        try {
            v = criteria[i].second(work_dir);
        } catch (const std::exception& e) {
            v = {false, fmt::format("error: {}", e.what())};
        }
        failed += v.pass ? 0 : 1;
        fmt::print("{} [{}] {}: {}\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
