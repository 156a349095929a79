#include "entryfx/error.hpp"
#include "entryfx/exposure.hpp"
#include "entryfx/random.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>

using namespace entryfx;
using namespace entryfx::exposure;

namespace {

/// Three municipalities on a path 0 - 1 - 2, so node 1 has two
/// equal-weight neighbors.
struct PathWorld {
    spatial::WeightsResult weights;
    panel::Panel panel;

    explicit PathWorld(const std::vector<std::string>& naics, int T = 6) {
        auto g = spatial::grid_graph(3, 3, 1000.0);
        weights = spatial::build_weights(g, 1);
        panel = testing::outcome_panel(testing::cell_grid(3, naics), T, [](std::size_t, int) { return 0.0; });
    }
    Layout layout() const { return Layout(panel, weights); }
    std::size_t cell(int muni, const std::string& naics) const {
        return *panel.find_cell({weights.graph.nodes[static_cast<std::size_t>(muni)], naics});
    }
    events::CohortMap cohorts(const std::map<std::size_t, int>& g) const {
        std::vector<std::optional<int>> sched(panel.n_cells());
        for (auto [c, gc] : g) sched[c] = gc;
        return events::cohorts_from_schedule(sched, static_cast<int>(panel.n_quarters()));
    }
};

}  // namespace

TEST_SUITE("exposure") {

TEST_CASE("same-industry neighbor share") {
    const PathWorld w({"31"});
    const auto L = w.layout();
    const auto mid = w.cell(1, "31");
    CHECK(same_industry_exposure(L, w.cohorts({}), mid, 5, Form::any) == 0.0);
    CHECK(same_industry_exposure(L, w.cohorts({{w.cell(0, "31"), 2}}), mid, 5, Form::any) == 0.5);
    CHECK(same_industry_exposure(L, w.cohorts({{w.cell(0, "31"), 2}, {w.cell(2, "31"), 3}}), mid, 5,
                                 Form::any) == 1.0);
    // before the neighbor's g there is no exposure
    CHECK(same_industry_exposure(L, w.cohorts({{w.cell(0, "31"), 4}}), mid, 3, Form::any) == 0.0);
    // own treatment does not count
    CHECK(same_industry_exposure(L, w.cohorts({{mid, 2}}), mid, 5, Form::any) == 0.0);
}

TEST_CASE("early form covers l = 0..4 only") {
    const PathWorld w({"31"}, 12);
    const auto cm = w.cohorts({{w.cell(0, "31"), 2}});
    const auto L = w.layout();
    const auto mid = w.cell(1, "31");
    CHECK(same_industry_exposure(L, cm, mid, 6, Form::early) == 0.5);
    CHECK(same_industry_exposure(L, cm, mid, 7, Form::early) == 0.0);
    CHECK(same_industry_exposure(L, cm, mid, 7, Form::any) == 0.5);
}

TEST_CASE("within-municipality cross-industry share") {
    const PathWorld w({"31", "42", "44", "52", "72"});
    const auto L = w.layout();
    const auto c = w.cell(1, "31");
    CHECK(cross_industry_exposure(L, w.cohorts({}), c, 4, Form::any).value == 0.0);
    const auto one = cross_industry_exposure(L, w.cohorts({{w.cell(1, "42"), 2}}), c, 4, Form::any);
    CHECK(one.value == 0.25);
    CHECK_FALSE(one.degenerate);

    const PathWorld w4({"31", "42", "44", "52"});
    const auto L4 = w4.layout();
    const auto all = w4.cohorts({{w4.cell(1, "42"), 2}, {w4.cell(1, "44"), 2}, {w4.cell(1, "52"), 2}});
    CHECK(cross_industry_exposure(L4, all, w4.cell(1, "31"), 4, Form::any).value == 1.0);

    const PathWorld single({"31"});
    const auto d = cross_industry_exposure(single.layout(), single.cohorts({}), single.cell(1, "31"), 4, Form::any);
    CHECK(d.degenerate);
    CHECK(d.value == 0.0);
}

TEST_CASE("neighbor all-industries share") {
    const PathWorld w({"31", "42"});
    const auto L = w.layout();
    const auto edge = w.cell(0, "31");  // node 0 has the single neighbor node 1
    CHECK(neighbor_all_exposure(L, w.cohorts({}), edge, 4, Form::any) == 0.0);
    CHECK(neighbor_all_exposure(L, w.cohorts({{w.cell(1, "42"), 2}}), edge, 4, Form::any) == 0.5);
    std::map<std::size_t, int> everything;
    for (std::size_t c = 0; c < w.panel.n_cells(); ++c) everything[c] = 1;
    CHECK(neighbor_all_exposure(L, w.cohorts(everything), w.cell(1, "31"), 4, Form::any) == 1.0);
}

TEST_CASE("slice summaries") {
    const std::vector<double> ones(5, 1.0);
    auto s = slice_summary(ones, {0, 4}, 0.02);
    CHECK(s.S == 5.0);
    CHECK(s.S_bar == 1.0);
    CHECK_FALSE(s.keep);
    const std::vector<double> zeros(5, 0.0);
    s = slice_summary(zeros, {0, 4}, 0.02);
    CHECK(s.S == 0.0);
    CHECK_FALSE(s.keep);
    const std::vector<double> half(17, 0.5);
    s = slice_summary(half, {0, 16}, 0.02);
    CHECK(s.S == doctest::Approx(8.5));
    CHECK(s.S_bar == doctest::Approx(0.5));
    CHECK(s.keep);
    CHECK_THROWS_AS(slice_summary(half, {0, 4}, 0.02), ValidationError);
}

TEST_CASE("slice labels") {
    CHECK(Slice::parse("0-16") == Slice{0, 16});
    CHECK(Slice{5, 8}.label() == "5-8");
    CHECK(Slice{9, 16}.length() == 8);
    CHECK_THROWS_AS(Slice::parse("4-1"), ValidationError);
    CHECK_THROWS_AS(Slice::parse("4"), ValidationError);
}

TEST_CASE("overlap report counts") {
    const std::vector<int> geo = {0, 1};
    Eigen::MatrixXd interior = Eigen::MatrixXd::Constant(2, 10, 2.5);  // S_bar 0.5 on [0,4]
    auto r = overlap_report(interior, {0, 4}, Channel::same_industry_neighbor, 0.02, geo);
    CHECK(r.raw == 20);
    CHECK(r.kept == 20);
    CHECK(r.pct_trimmed == 0.0);
    CHECK(r.munis_retained == 2);
    r = overlap_report(Eigen::MatrixXd::Zero(2, 10), {0, 4}, Channel::same_industry_neighbor, 0.02, geo);
    CHECK(r.kept == 0);
    CHECK(r.pct_trimmed == 100.0);
    Eigen::MatrixXd mixed = interior;
    mixed.leftCols(6).setZero();
    r = overlap_report(mixed, {0, 4}, Channel::same_industry_neighbor, 0.02, geo);
    CHECK(r.pct_trimmed == doctest::Approx(60.0));
    long long total = 0;
    for (auto h : r.histogram) total += h;
    CHECK(total == r.raw);
    CHECK(r.ecdf.back() == doctest::Approx(1.0));
}

TEST_CASE("batch exposure agrees with the per-cell definitions") {
    const auto weights = testing::lattice(4, 10, 1000.0);
    const std::vector<std::string> naics = {"31", "44", "72"};
    auto cells = testing::cell_grid(10, naics);
    // drop a few cells so municipalities have unequal industry counts
    cells.erase(cells.begin() + 4);
    cells.erase(cells.begin() + 10);
    cells.erase(cells.begin() + 11);
    const auto p = testing::outcome_panel(cells, 14, [](std::size_t, int) { return 0.0; });
    const Layout L(p, weights);
    Rng rng(12);
    std::vector<std::optional<int>> g(p.n_cells());
    for (auto& x : g) {
        if (uniform01(rng) < 0.4) x = 1 + static_cast<int>(uniform_index(rng, 14));
    }
    const auto cm = events::cohorts_from_schedule(g, 14);
    const auto series = compute_exposure(L, cm);
    for (std::size_t c = 0; c < p.n_cells(); ++c) {
        for (int t = 1; t <= 14; ++t) {
            for (auto form : {Form::any, Form::early}) {
                CHECK(series.share(Channel::same_industry_neighbor, form, c, t) ==
                      doctest::Approx(same_industry_exposure(L, cm, c, t, form)));
                CHECK(series.share(Channel::within_muni_cross_industry, form, c, t) ==
                      doctest::Approx(cross_industry_exposure(L, cm, c, t, form).value));
                CHECK(series.share(Channel::neighbor_all_industries, form, c, t) ==
                      doctest::Approx(neighbor_all_exposure(L, cm, c, t, form)));
            }
        }
    }
    // slice sums are the trailing sums of the per-quarter shares
    const Slice s{1, 3};
    const auto sums = slice_sums(series, Channel::neighbor_all_industries, s);
    for (std::size_t c = 0; c < p.n_cells(); ++c) {
        for (int t = 1; t <= 14; ++t) {
            double expect = 0.0;
            for (int l = s.a; l <= s.b; ++l) expect += series.share(Channel::neighbor_all_industries, Form::any, c, t - l);
            CHECK(sums(static_cast<Eigen::Index>(c), t - 1) == doctest::Approx(expect));
        }
    }
}

TEST_CASE("exposure file round trip") {
    testing::TempDir dir;
    const PathWorld w({"31", "42"});
    const auto cm = w.cohorts({{w.cell(0, "31"), 2}, {w.cell(2, "42"), 4}});
    const auto series = compute_exposure(w.layout(), cm);
    write_exposure_long(dir / "e.csv", w.panel, series);
    const auto back = read_exposure_long(dir / "e.csv", w.panel, cm);
    for (auto ch : kChannels) {
        for (auto form : {Form::any, Form::early}) {
            CHECK((back.matrix(ch, form) - series.matrix(ch, form)).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

}  // TEST_SUITE
