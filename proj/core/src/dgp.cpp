#include "entryfx/dgp.hpp"

#include "entryfx/csv.hpp"
#include "entryfx/error.hpp"
#include "entryfx/random.hpp"

#include <Eigen/Cholesky>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <sstream>

namespace entryfx::dgp {

namespace {

struct IndustryInfo {
    const char* naics;
    const char* name;
};

constexpr std::array<IndustryInfo, 12> kIndustries = {{
    {"11", "Agriculture, Forestry, Fishing and Hunting"},
    {"21", "Mining"},
    {"31", "Manufacturing"},
    {"42", "Wholesale Trade"},
    {"44", "Retail Trade"},
    {"52", "Finance and Insurance"},
    {"54", "Professional and Technical Services"},
    {"62", "Health Care and Social Assistance"},
    {"72", "Accommodation and Food Services"},
    {"81", "Other Services"},
    {"23", "Construction"},
    {"56", "Administrative and Waste Services"},
}};

template <typename T>
void get(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

DgpConfig parse_config(const std::string& json_text) {
    DgpConfig c;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
        get(j, "n_munis", c.n_munis);
        get(j, "n_industries", c.n_industries);
        get(j, "n_quarters", c.n_quarters);
        get(j, "grid_columns", c.grid_columns);
        get(j, "spacing_km", c.spacing_km);
        get(j, "knn", c.knn);
        get(j, "start_year", c.start_year);
        get(j, "treated_share", c.treated_share);
        get(j, "g_min", c.g_min);
        get(j, "g_max", c.g_max);
        get(j, "trigger_mix", c.trigger_mix);
        get(j, "direct", c.direct);
        get(j, "direct_slope", c.direct_slope);
        get(j, "direct_cohort_slope", c.direct_cohort_slope);
        get(j, "direct_cell_sd", c.direct_cell_sd);
        if (j.contains("direct_by_tradable")) c.direct_by_tradable = j.at("direct_by_tradable").get<std::array<double, 2>>();
        get(j, "anticipation", c.anticipation);
        if (j.contains("satt")) {
            const auto& s = j.at("satt");
            get(s, "same", c.satt[0]);
            get(s, "cross", c.satt[1]);
            get(s, "nall", c.satt[2]);
        }
        if (j.contains("spill_slice")) c.spill_slice = exposure::Slice::parse(j.at("spill_slice").get<std::string>());
        get(j, "unit_sd", c.unit_sd);
        get(j, "time_sd", c.time_sd);
        get(j, "noise_sd", c.noise_sd);
        get(j, "spatial_sd", c.spatial_sd);
        get(j, "spatial_range_km", c.spatial_range_km);
        get(j, "metro_share", c.metro_share);
        get(j, "seed", c.seed);
        if (j.contains("schedule")) {
            for (const auto& e : j.at("schedule")) {
                ScheduledCohort s;
                s.muni = e.at("muni").get<int>();
                s.industry = e.at("industry").get<int>();
                s.g = e.at("g").get<int>();
                s.trigger = events::parse_trigger(e.value("trigger", std::string("T1_new_entry")));
                c.schedule.push_back(s);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("invalid_config", fmt::format("DGP config: {}", e.what()));
    }
    c.source = json_text;
    return c;
}

DgpConfig read_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("missing_artifact", fmt::format("{} does not exist", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string to_json(const DgpConfig& c) {
    if (!c.source.empty()) return c.source;
    nlohmann::ordered_json j;
    j["n_munis"] = c.n_munis;
    j["n_industries"] = c.n_industries;
    j["n_quarters"] = c.n_quarters;
    j["grid_columns"] = c.grid_columns;
    j["spacing_km"] = c.spacing_km;
    j["knn"] = c.knn;
    j["start_year"] = c.start_year;
    j["treated_share"] = c.treated_share;
    j["g_min"] = c.g_min;
    j["g_max"] = c.g_max;
    j["trigger_mix"] = c.trigger_mix;
    j["direct"] = c.direct;
    j["direct_slope"] = c.direct_slope;
    j["direct_cohort_slope"] = c.direct_cohort_slope;
    j["direct_cell_sd"] = c.direct_cell_sd;
    if (c.direct_by_tradable) j["direct_by_tradable"] = *c.direct_by_tradable;
    j["anticipation"] = c.anticipation;
    j["satt"] = {{"same", c.satt[0]}, {"cross", c.satt[1]}, {"nall", c.satt[2]}};
    j["spill_slice"] = c.spill_slice.label();
    j["unit_sd"] = c.unit_sd;
    j["time_sd"] = c.time_sd;
    j["noise_sd"] = c.noise_sd;
    j["spatial_sd"] = c.spatial_sd;
    j["spatial_range_km"] = c.spatial_range_km;
    j["metro_share"] = c.metro_share;
    j["seed"] = c.seed;
    auto& s = j["schedule"] = nlohmann::ordered_json::array();
    for (const auto& e : c.schedule) {
        s.push_back({{"muni", e.muni}, {"industry", e.industry}, {"g", e.g},
                     {"trigger", events::to_string(e.trigger)}});
    }
    return j.dump(2) + "\n";
}

// --- spatial noise ----------------------------------------------------------

Eigen::VectorXd SpatialField::draw(Rng& rng) const {
    const auto n = chol.rows();
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = standard_normal(rng);
    if (iid) return sd * z;
    return chol * z;
}

SpatialField make_spatial_field(const std::vector<spatial::Point>& centroids, double range_km, double sd) {
    if (range_km < 0.0 || sd < 0.0) {
        throw ValidationError("invalid_noise", "spatial range and sd must be nonnegative");
    }
    const auto n = static_cast<Eigen::Index>(centroids.size());
    SpatialField f;
    f.sd = sd;
    f.chol = Eigen::MatrixXd::Identity(n, n);
    if (range_km == 0.0) return f;
    f.iid = false;
    Eigen::MatrixXd cov(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double dx = centroids[static_cast<std::size_t>(i)].x - centroids[static_cast<std::size_t>(j)].x;
            const double dy = centroids[static_cast<std::size_t>(i)].y - centroids[static_cast<std::size_t>(j)].y;
            cov(i, j) = sd * sd * std::exp(-std::hypot(dx, dy) / 1000.0 / range_km);
        }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
        cov.diagonal().array() += 1e-10;
        llt.compute(cov);
        f.jittered = true;
        if (llt.info() != Eigen::Success) {
            throw NumericalError("not_positive_definite", "spatial covariance is not positive definite");
        }
    }
    f.chol = llt.matrixL();
    return f;
}

Eigen::VectorXd spatial_noise(const std::vector<spatial::Point>& centroids, double range_km, double sd,
                              std::uint64_t seed, bool* jittered) {
    const auto f = make_spatial_field(centroids, range_km, sd);
    if (jittered) *jittered = f.jittered;
    Rng rng(seed);
    return f.draw(rng);
}

// --- simulation -------------------------------------------------------------

namespace {

void validate(const DgpConfig& c) {
    if (c.n_munis < 2 || c.n_industries < 1 || c.n_quarters < 3 || c.grid_columns < 1) {
        throw ValidationError("invalid_config", "counts must be positive (at least 2 municipalities, 3 quarters)");
    }
    if (c.n_industries > static_cast<int>(kIndustries.size())) {
        throw ValidationError("invalid_config",
                              fmt::format("at most {} industries are available", kIndustries.size()));
    }
    if (c.noise_sd < 0.0 || c.unit_sd < 0.0 || c.time_sd < 0.0 || c.spatial_sd < 0.0 || c.direct_cell_sd < 0.0) {
        throw ValidationError("invalid_config", "standard deviations must be nonnegative");
    }
    auto check_g = [&](int g, events::Trigger trigger) {
        const int earliest = trigger == events::Trigger::T1_new_entry ? 9 : 2;
        if (g < earliest) {
            throw ValidationError("cohort_too_early",
                                  fmt::format("cohort g = {} cannot fire {} (needs g >= {})", g,
                                              events::to_string(trigger), earliest));
        }
        if (g > c.n_quarters - 1) {
            throw ValidationError("cohort_too_late",
                                  fmt::format("cohort g = {} needs a following quarter (T = {})", g, c.n_quarters));
        }
    };
    for (const auto& s : c.schedule) {
        if (s.muni < 0 || s.muni >= c.n_munis || s.industry < 0 || s.industry >= c.n_industries) {
            throw ValidationError("invalid_config", "scheduled cohort refers to an unknown cell");
        }
        check_g(s.g, s.trigger);
    }
    if (c.schedule.empty() && c.treated_share > 0.0) {
        if (c.g_min > c.g_max) throw ValidationError("invalid_config", "g_min exceeds g_max");
        for (int k = 0; k < 3; ++k) {
            if (c.trigger_mix[static_cast<std::size_t>(k)] < 0.0) {
                throw ValidationError("invalid_config", "trigger weights must be nonnegative");
            }
            if (c.trigger_mix[static_cast<std::size_t>(k)] > 0.0) check_g(c.g_min, static_cast<events::Trigger>(k));
        }
        check_g(c.g_max, events::Trigger::T2_small_to_large);
    }
}

/// Establishment count of a cell at quarter t (1-based).
double establishments(const std::optional<int>& g, std::optional<events::Trigger> trigger, int t) {
    if (!g) return 5.0;
    const bool after = t >= *g;
    switch (*trigger) {
    case events::Trigger::T1_new_entry:
        return after ? 1.0 : 0.0;
    case events::Trigger::T2_small_to_large:
        return after ? 3.0 : 1.0;
    case events::Trigger::T3_top_decile_jump:
        return after ? 9.0 : 5.0;
    }
    return 5.0;
}

}  // namespace

Simulation simulate(const DgpConfig& config) {
    validate(config);
    Simulation sim;
    sim.config = config;
    const int T = config.n_quarters;
    const auto seed = config.seed;

    sim.graph = spatial::grid_graph(config.grid_columns, config.n_munis, config.spacing_km * 1000.0);
    sim.weights = spatial::build_weights(sim.graph, config.knn);

    // Cells in (geoid, naics) order.
    std::vector<panel::CellKey> cells;
    std::map<std::string, std::string> names;
    for (int i = 0; i < config.n_industries; ++i) names[kIndustries[static_cast<std::size_t>(i)].naics] = kIndustries[static_cast<std::size_t>(i)].name;
    for (int m = 0; m < config.n_munis; ++m) {
        for (const auto& [naics, name] : names) cells.push_back({sim.graph.nodes[static_cast<std::size_t>(m)], naics});
    }
    std::sort(cells.begin(), cells.end());
    auto cell_index = [&](int muni, int industry) {
        const panel::CellKey key{sim.graph.nodes[static_cast<std::size_t>(muni)],
                                 kIndustries[static_cast<std::size_t>(industry)].naics};
        return static_cast<std::size_t>(std::lower_bound(cells.begin(), cells.end(), key) - cells.begin());
    };

    std::vector<std::optional<int>> g(cells.size());
    std::vector<std::optional<events::Trigger>> trig(cells.size());
    if (!config.schedule.empty()) {
        for (const auto& s : config.schedule) {
            const auto c = cell_index(s.muni, s.industry);
            g[c] = s.g;
            trig[c] = s.trigger;
        }
    } else if (config.treated_share > 0.0) {
        Rng rng(derive_seed(seed, "cohorts"));
        const double total = config.trigger_mix[0] + config.trigger_mix[1] + config.trigger_mix[2];
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (uniform01(rng) >= config.treated_share) continue;
            g[c] = config.g_min + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(config.g_max - config.g_min + 1)));
            double u = uniform01(rng) * total;
            int k = 0;
            while (k < 2 && u >= config.trigger_mix[static_cast<std::size_t>(k)]) u -= config.trigger_mix[static_cast<std::size_t>(k++)];
            trig[c] = static_cast<events::Trigger>(k);
        }
    }
    sim.cohorts = events::cohorts_from_schedule(g, T, {}, trig);

    auto quarters = panel::build_quarter_index(panel::QuarterId::make(config.start_year, 1),
                                               panel::QuarterId::make(config.start_year + (T - 1) / 4, (T - 1) % 4 + 1));
    std::vector<panel::PanelRow> rows;
    rows.reserve(cells.size() * static_cast<std::size_t>(T));
    for (std::size_t c = 0; c < cells.size(); ++c) {
        for (int t = 1; t <= T; ++t) {
            panel::PanelRow r;
            r.key = cells[c];
            r.quarter = quarters[static_cast<std::size_t>(t - 1)];
            r.establishments = establishments(g[c], trig[c], t);
            r.industry_name = names[cells[c].naics];
            rows.push_back(std::move(r));
        }
    }
    sim.panel = panel::Panel(quarters, cells, std::move(rows), names);
    const exposure::Layout layout(sim.panel, sim.weights);
    sim.exposure = exposure::compute_exposure(layout, sim.cohorts);

    // Effect components.
    const auto n = static_cast<Eigen::Index>(cells.size());
    auto& truth = sim.truth;
    truth.untreated = Eigen::MatrixXd::Zero(n, T);
    truth.direct = Eigen::MatrixXd::Zero(n, T);
    truth.anticipation = Eigen::MatrixXd::Zero(n, T);
    truth.noise = Eigen::MatrixXd::Zero(n, T);
    for (std::size_t k = 0; k < 3; ++k) {
        truth.spill[k] = config.satt[k] * exposure::slice_sums(sim.exposure, exposure::kChannels[k], config.spill_slice);
    }
    const auto n_ind = static_cast<Eigen::Index>(sim.panel.industries().size());
    Rng unit_rng(derive_seed(seed, "unit"));
    Rng time_rng(derive_seed(seed, "time"));
    Rng cell_rng(derive_seed(seed, "direct_cell"));
    Rng noise_rng(derive_seed(seed, "noise"));
    Rng field_rng(derive_seed(seed, "spatial"));
    Eigen::VectorXd alpha(n);
    for (Eigen::Index c = 0; c < n; ++c) alpha(c) = config.unit_sd * standard_normal(unit_rng);
    Eigen::MatrixXd lambda(n_ind, T);
    for (Eigen::Index i = 0; i < n_ind; ++i) {
        for (int t = 0; t < T; ++t) lambda(i, t) = config.time_sd * standard_normal(time_rng);
    }
    Eigen::VectorXd shift(n);
    for (Eigen::Index c = 0; c < n; ++c) shift(c) = config.direct_cell_sd * standard_normal(cell_rng);
    const auto field = make_spatial_field(sim.graph.centroids, config.spatial_range_km, config.spatial_sd);
    if (field.jittered) sim.flags.push_back("spatial_covariance_jittered");

    for (int t = 1; t <= T; ++t) {
        const Eigen::VectorXd common = config.spatial_sd > 0.0 ? field.draw(field_rng)
                                                              : Eigen::VectorXd::Zero(config.n_munis);
        for (Eigen::Index c = 0; c < n; ++c) {
            const auto cu = static_cast<std::size_t>(c);
            const int ind = sim.panel.industry_of_cell()[cu];
            truth.untreated(c, t - 1) = alpha(c) + lambda(ind, t - 1);
            const int muni = *sim.graph.find(cells[cu].geoid);
            truth.noise(c, t - 1) = config.noise_sd * standard_normal(noise_rng) + common(muni);
            if (!g[cu]) continue;
            const int ell = t - *g[cu];
            if (ell >= 0) {
                double base = config.direct;
                if (config.direct_by_tradable) {
                    base = panel::classify_tradable(cells[cu].naics) == panel::Tradable::tradable
                               ? (*config.direct_by_tradable)[0]
                               : (*config.direct_by_tradable)[1];
                }
                truth.direct(c, t - 1) = base + config.direct_slope * ell +
                                         config.direct_cohort_slope * (*g[cu] - config.g_min) + shift(c);
            } else if (-ell <= static_cast<int>(config.anticipation.size())) {
                truth.anticipation(c, t - 1) = config.anticipation[static_cast<std::size_t>(-ell - 1)];
            }
        }
    }
    truth.outcome = truth.untreated + truth.direct + truth.anticipation + truth.spill[0] + truth.spill[1] +
                    truth.spill[2] + truth.noise;

    for (std::size_t c = 0; c < cells.size(); ++c) {
        const double wage = 1000.0 * (1.0 + sim.panel.industry_of_cell()[c]);
        for (int t = 1; t <= T; ++t) {
            auto& r = sim.panel.row(c, static_cast<std::size_t>(t - 1));
            const double y = truth.outcome(static_cast<Eigen::Index>(c), t - 1);
            r.covered_emp = std::exp(y);
            r.total_wages = std::exp(y) * wage;
            panel::fill_derived(r, 1.0);
            r.log_covered_emp = y;
        }
    }

    Rng metro_rng(derive_seed(seed, "metro"));
    for (const auto& node : sim.graph.nodes) sim.metro[node] = uniform01(metro_rng) < config.metro_share;
    return sim;
}

std::vector<double> true_event_path(const Simulation& sim, events::Horizon horizon, bool balanced) {
    const int T = static_cast<int>(sim.panel.n_quarters());
    std::vector<double> out;
    for (int ell = horizon.lo; ell <= horizon.hi; ++ell) {
        double sum = 0.0;
        int count = 0;
        for (std::size_t c = 0; c < sim.cohorts.size(); ++c) {
            const auto& e = sim.cohorts[c];
            if (!e.treated() || (balanced && !e.balanced_window)) continue;
            const int t = *e.g + ell;
            if (t < 1 || t > T) continue;
            const auto ci = static_cast<Eigen::Index>(c);
            sum += sim.truth.direct(ci, t - 1) + sim.truth.anticipation(ci, t - 1);
            ++count;
        }
        out.push_back(count > 0 ? sum / count : std::numeric_limits<double>::quiet_NaN());
    }
    return out;
}

void write_simulation(const std::filesystem::path& dir, const Simulation& sim) {
    std::filesystem::create_directories(dir);
    const auto& p = sim.panel;
    const int T = static_cast<int>(p.n_quarters());

    csv::Table raw({"geoid_raw", "naics", "year", "quarter", "establishments", "covered_emp", "total_wages",
                    "industry_name", "municipality_name"});
    for (std::size_t c = 0; c < p.n_cells(); ++c) {
        for (int t = 1; t <= T; ++t) {
            const auto& r = p.row(c, static_cast<std::size_t>(t - 1));
            raw.add_row({r.key.geoid, r.key.naics, std::to_string(r.quarter.year), std::to_string(r.quarter.quarter),
                         csv::format(r.establishments), csv::format(r.covered_emp), csv::format(r.total_wages),
                         r.industry_name, fmt::format("Municipio {}", r.key.geoid.substr(2))});
        }
    }
    csv::write(dir / "panel.csv", raw);

    // Flat CPI at 100 over the panel years and 2020, so real and nominal coincide.
    csv::Table cpi({"year", "month", "value"});
    const int y0 = std::min(p.quarters().front().year, 2020);
    const int y1 = std::max(p.quarters().back().year, 2020);
    for (int y = y0; y <= y1; ++y) {
        for (int m = 1; m <= 12; ++m) cpi.add_row({std::to_string(y), std::to_string(m), "100"});
    }
    csv::write(dir / "cpi.csv", cpi);
    panel::write_metro(dir / "metro.csv", sim.metro);
    spatial::write_graph(dir, sim.graph);

    csv::Table planted({"geoid", "naics", "g", "trigger"});
    for (std::size_t c = 0; c < p.n_cells(); ++c) {
        const auto& e = sim.cohorts[c];
        if (!e.treated()) continue;
        planted.add_row({p.cells()[c].geoid, p.cells()[c].naics, std::to_string(*e.g), events::to_string(*e.trigger)});
    }
    csv::write(dir / "planted_cohorts.csv", planted);

    csv::Table truth({"geoid", "naics", "t", "untreated", "direct", "anticipation", "same", "cross", "nall",
                      "noise", "outcome"});
    const auto& tr = sim.truth;
    for (std::size_t c = 0; c < p.n_cells(); ++c) {
        const auto ci = static_cast<Eigen::Index>(c);
        for (int t = 1; t <= T; ++t) {
            truth.add_row({p.cells()[c].geoid, p.cells()[c].naics, std::to_string(t), csv::format(tr.untreated(ci, t - 1)),
                           csv::format(tr.direct(ci, t - 1)), csv::format(tr.anticipation(ci, t - 1)),
                           csv::format(tr.spill[0](ci, t - 1)), csv::format(tr.spill[1](ci, t - 1)),
                           csv::format(tr.spill[2](ci, t - 1)), csv::format(tr.noise(ci, t - 1)),
                           csv::format(tr.outcome(ci, t - 1))});
        }
    }
    csv::write(dir / "truth.csv", truth);

    std::ofstream json(dir / "dgp_config.json", std::ios::binary);
    json << to_json(sim.config);
}

}  // namespace entryfx::dgp
