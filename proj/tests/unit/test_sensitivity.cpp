#include "entryfx/dgp.hpp"
#include "entryfx/error.hpp"
#include "entryfx/random.hpp"
#include "entryfx/sensitivity.hpp"
#include "entryfx/stats.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>

using namespace entryfx;
using namespace entryfx::sensitivity;

namespace {

const std::vector<double> kGrid = {0.0, 0.01, 0.02, 0.05, 0.10};

/// Event times -4..3 with the anchor at -1.
struct Path {
    std::vector<int> ells = {-4, -3, -2, -1, 0, 1, 2, 3};
    Eigen::VectorXd beta;
    Eigen::VectorXd target = Eigen::VectorXd::Zero(8);

    Path(double slope, double effect) : beta(8) {
        for (int i = 0; i < 8; ++i) {
            const int ell = ells[static_cast<std::size_t>(i)];
            beta(i) = slope * (ell + 1) + (ell >= 0 ? effect : 0.0);
            if (ell >= 0) target(i) = 1.0;
        }
    }
};

direct::EventStudyPath event_path(double slope, double effect) {
    direct::EventStudyPath p;
    p.estimator = "cs";
    p.outcome = "log_covered_emp";
    p.delta = 2;
    for (int ell = -8; ell <= 16; ++ell) {
        direct::PathPoint pt;
        pt.ell = ell;
        pt.reference = ell == p.reference_ell();
        pt.available = !pt.reference;
        pt.att = slope * (ell + 3) + (ell >= 0 ? effect : 0.0);
        p.points.push_back(pt);
    }
    return p;
}

}  // namespace

TEST_SUITE("sensitivity") {

TEST_CASE("without a pre-trend and M = 0 the bounds equal the baseline interval") {
    const Path p(0.0, 0.25);
    const Eigen::MatrixXd cov = 0.01 * Eigen::MatrixXd::Identity(8, 8);
    const auto b = honest_sd_bounds(p.ells, p.beta, cov, p.target, -1, kGrid, 0.05);
    CHECK(b.estimate == doctest::Approx(1.0));
    CHECK(b.se == doctest::Approx(0.2));
    CHECK(b.rows[0].lo == doctest::Approx(b.baseline_lo));
    CHECK(b.rows[0].hi == doctest::Approx(b.baseline_hi));
}

TEST_CASE("a linear pre-trend is extrapolated and removed") {
    const Path p(0.03, 0.25);
    const Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(8, 8);
    const auto b = honest_sd_bounds(p.ells, p.beta, cov, p.target, -1, kGrid, 0.05);
    // bias = sum over m = 1..4 of m * slope
    CHECK(b.extrapolated_bias == doctest::Approx(10 * 0.03));
    CHECK(b.rows[0].lo == doctest::Approx(1.0));
    CHECK(b.rows[0].hi == doctest::Approx(1.0));
    CHECK(b.pre_curvature == doctest::Approx(0.0).scale(1.0));
    // loadings: sum over m of (m - k + 1) for k <= m, m = 1..4 -> 10 + 6 + 3 + 1
    CHECK(b.curvature_loading == doctest::Approx(20.0));
    CHECK(b.rows[3].hi - b.rows[3].lo == doctest::Approx(2 * 0.05 * 20.0));
}

TEST_CASE("bounds widen with M and nest") {
    const Path p(0.01, 0.1);
    const Eigen::MatrixXd cov = 0.004 * Eigen::MatrixXd::Identity(8, 8);
    const auto b = honest_sd_bounds(p.ells, p.beta, cov, p.target, -1, kGrid, 0.05);
    for (std::size_t i = 1; i < b.rows.size(); ++i) {
        CHECK(b.rows[i].lo <= b.rows[i - 1].lo);
        CHECK(b.rows[i].hi >= b.rows[i - 1].hi);
    }
}

TEST_CASE("pre-period curvature marks small M as inconsistent") {
    Path p(0.0, 0.0);
    p.beta(1) = 0.03;  // ell = -3 bump: second differences of 0.03 and 0.06
    const Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(8, 8);
    const auto b = honest_sd_bounds(p.ells, p.beta, cov, p.target, -1, kGrid, 0.05);
    CHECK(b.pre_curvature == doctest::Approx(0.06));
    CHECK_FALSE(b.rows[0].consistent);
    CHECK_FALSE(b.rows[3].consistent);
    CHECK(b.rows[4].consistent);
}

TEST_CASE("smoothness bounds reject bad inputs") {
    const Path p(0.0, 0.1);
    const Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(8, 8);
    CHECK_THROWS_AS(honest_sd_bounds(p.ells, p.beta, cov, p.target, -3, kGrid, 0.05), ValidationError);
    Eigen::VectorXd early = p.target;
    early(2) = 1.0;
    CHECK_THROWS_AS(honest_sd_bounds(p.ells, p.beta, cov, early, -1, kGrid, 0.05), ValidationError);
    Eigen::MatrixXd bad = cov;
    bad(0, 0) = -1.0;
    CHECK_THROWS_AS(honest_sd_bounds(p.ells, p.beta, bad, p.target, -1, kGrid, 0.05), NumericalError);
    const std::vector<double> negative = {-0.1};
    CHECK_THROWS_AS(honest_sd_bounds(p.ells, p.beta, cov, p.target, -1, negative, 0.05), ValidationError);
}

TEST_CASE("bounds for a path slice anchor at the reference bin") {
    const auto path = event_path(0.02, 0.1);
    const Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(25, 25);
    const auto b = honest_for_path(path, cov, {0, 4}, kGrid, 0.05);
    // anchor -3 with level 0 and slope 0.02; target ells 0..4 are m = 3..7
    CHECK(b.extrapolated_bias == doctest::Approx(0.02 * (3 + 4 + 5 + 6 + 7)));
    CHECK(b.rows[0].lo == doctest::Approx(0.5));
    CHECK(b.target == "cs:0-4");

    auto gap = path;
    gap.points[10].available = false;  // ell = 2
    try {
        honest_for_path(gap, cov, {0, 4}, kGrid, 0.05);
        FAIL("expected unavailable_event_times");
    } catch (const ValidationError& e) {
        CHECK(e.code() == "unavailable_event_times");
        CHECK(std::string(e.what()).find('2') != std::string::npos);
    }
}

TEST_CASE("heterogeneity regressions recover tradable and nontradable effects") {
    auto cfg = testing::small_design(41);
    cfg.n_munis = 60;
    cfg.grid_columns = 10;
    cfg.n_industries = 8;
    cfg.direct_by_tradable = std::array<double, 2>{0.3, 0.1};
    const auto sim = dgp::simulate(cfg);
    const auto strata = panel::assign_strata(sim.panel, sim.metro, {1, 8});
    const std::vector<exposure::Slice> slices = {{0, 4}};
    const auto rows = heterogeneity_twfe(sim.panel, sim.cohorts, sim.exposure, strata,
                                         panel::Outcome::log_covered_emp, slices, 2);
    // 3 variables x 2 levels x 3 parameters
    CHECK(rows.size() == 18);
    int found = 0;
    for (const auto& r : rows) {
        if (r.variable != "tradable" || r.parameter != "DATT") continue;
        REQUIRE(r.available);
        const double truth = r.level == "tradable" ? 0.3 : 0.1;
        CHECK(std::abs(r.estimate - truth) < 4.0 * r.se + 0.02);
        CHECK(r.bh >= 0.0);
        CHECK(r.by >= r.bh);
        ++found;
    }
    CHECK(found == 2);

    testing::TempDir dir("het");
    write_heterogeneity(dir / "h.csv", rows);
    const auto back = read_heterogeneity(dir / "h.csv");
    REQUIRE(back.size() == rows.size());
    CHECK(back[0].estimate == doctest::Approx(rows[0].estimate).epsilon(1e-12));
}

TEST_CASE("method selection rule") {
    CHECK(select_method(0.01) == "scpc");
    CHECK(select_method(0.05) == "cluster");
    CHECK(select_method(0.2) == "cluster");
    CHECK(select_method(0.08, 0.1) == "scpc");
}

TEST_CASE("Moran gate triggers on a spatially smooth residual field") {
    const auto lat = testing::lattice(10, 80);
    Rng rng(3);
    std::vector<ResidualPoint> smooth;
    std::vector<ResidualPoint> noise;
    for (int t = 1; t <= 6; ++t) {
        for (int i = 0; i < 80; ++i) {
            for (int rep = 0; rep < 2; ++rep) {
                const double e = standard_normal(rng);
                smooth.push_back({i, t, 0.5 * (i % 10) + 0.3 * (i / 10) + e});
                noise.push_back({i, t, e});
            }
        }
    }
    const auto a = moran_gate("smooth", smooth, lat.weights, 199, 9);
    CHECK(a.triggered);
    CHECK(a.selected == "scpc");
    CHECK(a.quarters == 6);
    CHECK(a.share_significant > 0.5);
    const auto b = moran_gate("noise", noise, lat.weights, 199, 9);
    CHECK(b.p_value > 0.05);
    CHECK(b.selected == "cluster");

    const auto again = moran_gate("smooth", smooth, lat.weights, 199, 9);
    CHECK(again.p_value == a.p_value);

    testing::TempDir dir("moran");
    const std::vector<MoranTrigger> rows = {a, b};
    write_moran(dir / "m.csv", rows);
    const auto back = read_moran(dir / "m.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].selected == "scpc");
    CHECK(back[1].quarters == 6);
}

TEST_CASE("Moran gate rejects residuals off the graph and constant fields") {
    const auto lat = testing::lattice(4, 8);
    const std::vector<ResidualPoint> off = {{9, 1, 0.5}};
    CHECK_THROWS_AS(moran_gate("m", off, lat.weights, 99, 1), ValidationError);
    std::vector<ResidualPoint> flat;
    for (int i = 0; i < 8; ++i) flat.push_back({i, 1, 2.0});
    CHECK_THROWS_AS(moran_gate("m", flat, lat.weights, 99, 1), NumericalError);
}

}  // TEST_SUITE
