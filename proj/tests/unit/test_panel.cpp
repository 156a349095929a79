#include "entryfx/error.hpp"
#include "entryfx/panel.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>

using namespace entryfx;
using namespace entryfx::panel;

namespace {

CpiSeries flat_cpi(double level, int first_year = 2014, int last_year = 2025) {
    std::map<std::pair<int, int>, double> m;
    for (int y = first_year; y <= last_year; ++y) {
        for (int mo = 1; mo <= 12; ++mo) m[{y, mo}] = level;
    }
    return CpiSeries(m);
}

RawRecord raw(std::string geoid, std::string naics, int year, int q, double est, double emp, double wages) {
    RawRecord r;
    r.geoid_raw = std::move(geoid);
    r.naics = std::move(naics);
    r.year = year;
    r.quarter = q;
    r.establishments = est;
    r.covered_emp = emp;
    r.total_wages = wages;
    return r;
}

}  // namespace

TEST_SUITE("panel") {

TEST_CASE("quarter index") {
    const auto full = build_quarter_index(QuarterId::parse("2014Q1"), QuarterId::parse("2025Q1"));
    CHECK(full.size() == 45);
    CHECK(full.back().t == 45);
    CHECK(full.back().label() == "2025Q1");

    const auto one = build_quarter_index(QuarterId::parse("2020Q2"), QuarterId::parse("2020Q2"));
    REQUIRE(one.size() == 1);
    CHECK(one[0].t == 1);

    const auto pre = build_quarter_index(QuarterId::parse("2014Q1"), QuarterId::parse("2018Q3"));
    CHECK(pre.size() == 19);
    CHECK(pre.back().t == 19);

    try {
        build_quarter_index(QuarterId::parse("2015Q1"), QuarterId::parse("2014Q4"));
        FAIL("expected an error");
    } catch (const ValidationError& e) {
        CHECK(e.code() == "invalid_range");
    }
    CHECK_THROWS_AS(QuarterId::parse("2014Q5"), ValidationError);
    CHECK_THROWS_AS(QuarterId::parse("14-1"), ValidationError);
}

TEST_CASE("resolve_range maps labels onto the index") {
    const auto idx = build_quarter_index(QuarterId::parse("2014Q1"), QuarterId::parse("2025Q1"));
    const auto r = resolve_range(idx, "2014Q1", "2019Q3");
    CHECK(r.first_t == 1);
    CHECK(r.last_t == 23);
    CHECK_THROWS_AS(resolve_range(idx, "2013Q4", "2019Q3"), ValidationError);
}

TEST_CASE("exclusions and geoid normalization") {
    std::vector<RawRecord> rows = {
        raw("72999", "31", 2014, 1, 1, 1, 1),
        raw("72001", "10", 2014, 1, 1, 1, 1),
        raw("031", "31", 2014, 1, 1, 1, 1),
        raw("72995", "44", 2014, 1, 1, 1, 1),
        raw("72002", "99", 2014, 1, 1, 1, 1),
    };
    rows.push_back(raw("72003", "44", 2014, 1, 1, 1, 1));
    rows.back().municipality_name = " Multi Municipio ";
    const auto kept = apply_exclusions(rows);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].geoid == "72031");
    CHECK(kept[0].naics == "31");
}

TEST_CASE("CPI averaging and rebasing") {
    std::map<std::pair<int, int>, double> m;
    for (int mo = 1; mo <= 12; ++mo) m[{2020, mo}] = 100.0 + mo;  // 2020 average 106.5
    m[{2021, 1}] = 110;
    m[{2021, 2}] = 111;
    m[{2021, 3}] = 112;
    const CpiSeries cpi(m);
    CHECK(cpi.quarterly_mean(2020, 1) == doctest::Approx(102.0));
    CHECK(cpi.rebase_factor() == doctest::Approx(100.0 / 106.5));
    CHECK(cpi.quarterly_index(2021, 1) == doctest::Approx(111.0 * 100.0 / 106.5));
    double avg = 0.0;
    for (int q = 1; q <= 4; ++q) avg += cpi.quarterly_index(2020, q) / 4.0;
    CHECK(avg == doctest::Approx(100.0));
    try {
        cpi.quarterly_mean(2021, 2);
        FAIL("expected an error");
    } catch (const ValidationError& e) {
        CHECK(e.code() == "missing_deflator");
        CHECK(std::string(e.what()).find("2021Q2") != std::string::npos);
    }
}

TEST_CASE("deflation and logs") {
    SUBCASE("identity deflator") {
        const auto cpi = flat_cpi(100.0);
        const std::vector<RawRecord> rows = {raw("72001", "31", 2016, 2, 3, 10, 100)};
        const auto out = deflate_and_log(rows, cpi);
        REQUIRE(out.size() == 1);
        CHECK(*out[0].total_wages_real_2020 == doctest::Approx(100.0));
        CHECK(*out[0].avg_wage_level_real_2020 == doctest::Approx(10.0));
        CHECK(*out[0].log_establishments == doctest::Approx(std::log(3.0)));
    }
    SUBCASE("deflator of 0.8 gives real 125") {
        PanelRow r;
        r.total_wages = 100.0;
        r.covered_emp = 4.0;
        fill_derived(r, 0.8);
        CHECK(*r.total_wages_real_2020 == doctest::Approx(125.0));
        CHECK(*r.log_total_wages_real_2020 == doctest::Approx(std::log(125.0)));
    }
    SUBCASE("zero employment leaves the log and average wage missing") {
        PanelRow r;
        r.total_wages = 100.0;
        r.covered_emp = 0.0;
        r.establishments = 1.0;
        fill_derived(r, 1.0);
        CHECK_FALSE(r.log_covered_emp.has_value());
        CHECK_FALSE(r.avg_wage_level_real_2020.has_value());
    }
    SUBCASE("reporting units are summed") {
        const auto cpi = flat_cpi(100.0);
        const std::vector<RawRecord> rows = {raw("72001", "31", 2016, 2, 1, 10, 100),
                                             raw("72001", "31", 2016, 2, 2, 5, 50)};
        const auto out = deflate_and_log(rows, cpi);
        REQUIRE(out.size() == 1);
        CHECK(*out[0].establishments == 3.0);
        CHECK(*out[0].covered_emp == 15.0);
    }
    SUBCASE("uncovered quarter names the quarter") {
        const auto cpi = flat_cpi(100.0, 2014, 2015);
        const std::vector<RawRecord> rows = {raw("72001", "31", 2016, 2, 1, 1, 1)};
        try {
            deflate_and_log(rows, cpi);
            FAIL("expected an error");
        } catch (const ValidationError& e) {
            CHECK(e.code() == "missing_deflator");
            CHECK(std::string(e.what()).find("2016Q2") != std::string::npos);
        }
    }
}

TEST_CASE("deflation is linear in nominal wages") {
    for (double w : {1.0, 37.5, 1e6}) {
        PanelRow a;
        a.total_wages = w;
        PanelRow b;
        b.total_wages = 3.0 * w;
        fill_derived(a, 1.07);
        fill_derived(b, 1.07);
        CHECK(*b.total_wages_real_2020 == doctest::Approx(3.0 * *a.total_wages_real_2020));
    }
}

TEST_CASE("skeleton crosses cells with the full index") {
    const auto idx = build_quarter_index(QuarterId::parse("2014Q1"), QuarterId::parse("2014Q3"));
    std::vector<PanelRow> rows(4);
    const CellKey a{"72001", "31"};
    const CellKey b{"72002", "31"};
    rows[0].key = a;
    rows[0].quarter = QuarterId::parse("2014Q1");
    rows[1].key = a;
    rows[1].quarter = QuarterId::parse("2014Q3");
    rows[2].key = b;
    rows[2].quarter = QuarterId::parse("2014Q2");
    rows[3].key = b;
    rows[3].quarter = QuarterId::parse("2014Q3");
    for (auto& r : rows) {
        r.covered_emp = 2.0;
        fill_derived(r, 1.0);
    }
    const auto p = build_skeleton(rows, idx);
    CHECK(p.n_cells() == 2);
    CHECK(p.rows().size() == 6);
    int missing = 0;
    for (const auto& r : p.rows()) missing += r.log_covered_emp ? 0 : 1;
    CHECK(missing == 2);
    CHECK(p.row(0, 1).quarter.t == 2);
    CHECK_FALSE(p.row(0, 1).log_covered_emp.has_value());

    const auto empty = build_skeleton(std::vector<PanelRow>{}, idx);
    CHECK(empty.n_cells() == 0);
    CHECK(empty.rows().empty());
}

TEST_CASE("tradable classification") {
    CHECK(classify_tradable("3111") == Tradable::tradable);
    CHECK(classify_tradable("31") == Tradable::tradable);
    CHECK(classify_tradable("4811") == Tradable::tradable);
    CHECK(classify_tradable("72") == Tradable::nontradable);
    CHECK(classify_tradable("7225") == Tradable::nontradable);
    CHECK(classify_tradable("44") == Tradable::nontradable);
    CHECK(classify_tradable("x") == Tradable::nontradable);
}

TEST_CASE("strata: wage median of medians, metro lookup") {
    // Industry 31 pays 10 per worker, 72 pays 20, 44 has no wage data.
    const auto cells = testing::cell_grid(2, {"31", "44", "72"});
    const auto p = testing::make_panel(cells, 4, [](PanelRow& r, std::size_t, int) {
        r.establishments = 1.0;
        if (r.key.naics == "31") {
            r.covered_emp = 2.0;
            r.total_wages = 20.0;
        } else if (r.key.naics == "72") {
            r.covered_emp = 2.0;
            r.total_wages = 40.0;
        }
    });
    const std::map<std::string, bool> metro = {{"72001", true}};
    const auto s = assign_strata(p, metro, QuarterRange{1, 4});
    REQUIRE(s.size() == cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto& k = cells[c];
        CHECK(s[c].metro == (k.geoid == "72001" ? Metro::metro : Metro::nonmetro));
        if (k.naics == "31") CHECK(s[c].wage == WageStratum::low);
        if (k.naics == "72") CHECK(s[c].wage == WageStratum::high);
        if (k.naics == "44") CHECK(s[c].wage == WageStratum::unknown);
    }
}

TEST_CASE("panel csv round trip") {
    testing::TempDir dir;
    const auto cells = testing::cell_grid(2, {"31", "72"});
    const auto p = testing::outcome_panel(cells, 5, [](std::size_t c, int t) {
        return c == 1 && t == 3 ? std::nan("") : 0.1 * static_cast<double>(c) + 0.01 * t;
    });
    write_panel(dir / "p.csv", p);
    const auto back = read_panel(dir / "p.csv");
    REQUIRE(back.n_cells() == p.n_cells());
    REQUIRE(back.n_quarters() == p.n_quarters());
    for (std::size_t c = 0; c < p.n_cells(); ++c) {
        for (std::size_t ti = 0; ti < p.n_quarters(); ++ti) {
            CHECK(back.row(c, ti).log_covered_emp == p.row(c, ti).log_covered_emp);
            CHECK(back.row(c, ti).quarter.t == static_cast<int>(ti + 1));
        }
    }
}

TEST_CASE("unsorted or unbalanced panels are rejected") {
    const auto idx = build_quarter_index(QuarterId::parse("2014Q1"), QuarterId::parse("2014Q2"));
    std::vector<CellKey> cells = {{"72002", "31"}, {"72001", "31"}};
    std::vector<PanelRow> rows(4);
    CHECK_THROWS_AS(Panel(idx, cells, rows), ValidationError);
    rows.resize(3);
    std::swap(cells[0], cells[1]);
    CHECK_THROWS_AS(Panel(idx, cells, rows), ValidationError);
}

}  // TEST_SUITE
