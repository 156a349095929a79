#include "entryfx/pipeline.hpp"

#include "entryfx/csv.hpp"
#include "entryfx/dgp.hpp"
#include "entryfx/did_direct.hpp"
#include "entryfx/drdid.hpp"
#include "entryfx/error.hpp"
#include "entryfx/events.hpp"
#include "entryfx/exposure.hpp"
#include "entryfx/inference.hpp"
#include "entryfx/panel.hpp"
#include "entryfx/random.hpp"
#include "entryfx/report.hpp"
#include "entryfx/sensitivity.hpp"
#include "entryfx/spatial.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

namespace entryfx::pipeline {

namespace fs = std::filesystem;

std::string_view version() { return "0.1.0"; }

std::uint64_t stage_seed(std::uint64_t master, std::string_view stage) { return derive_seed(master, stage); }

std::string hash_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("missing_artifact", fmt::format("{} does not exist", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return fmt::format("{:016x}", fnv1a64(ss.str()));
}

namespace {

/// Bookkeeping shared by every stage.
class Context {
public:
    Context(std::string stage, const RunConfig& config) : config(config), stage_(std::move(stage)) {
        fs::create_directories(config.out_dir);
        seed = stage_seed(config.seed, stage_);
    }

    const RunConfig& config;
    std::uint64_t seed = 0;
    StageResult result;

    /// Run-directory artifact produced by `producer`.
    fs::path artifact(const std::string& name, std::string_view producer) {
        const auto p = config.out_dir / name;
        if (!fs::exists(p)) {
            throw MissingArtifactError("missing_artifact",
                                       fmt::format("stage '{}' needs {} (run the '{}' stage first)", stage_,
                                                   p.string(), producer));
        }
        inputs_.push_back(p);
        check_stale(p, producer);
        return p;
    }

    /// External input file.
    fs::path input(const fs::path& p) {
        if (!fs::exists(p)) {
            throw MissingArtifactError("missing_artifact",
                                       fmt::format("stage '{}' needs input file {}", stage_, p.string()));
        }
        inputs_.push_back(p);
        return p;
    }

    fs::path output(const std::string& name) {
        const auto p = config.out_dir / name;
        result.outputs.push_back(p);
        return p;
    }

    void warn(std::string message) { result.warnings.push_back(std::move(message)); }

    StageResult finish() {
        nlohmann::ordered_json j;
        j["stage"] = stage_;
        j["version"] = std::string(version());
        j["master_seed"] = config.seed;
        j["stage_seed"] = seed;
        j["config"] = nlohmann::ordered_json::parse(to_json(config));
        auto list = [](const std::vector<fs::path>& files) {
            auto arr = nlohmann::ordered_json::array();
            for (const auto& f : files) {
                arr.push_back({{"file", f.filename().generic_string()}, {"fnv1a64", hash_file(f)}});
            }
            return arr;
        };
        j["inputs"] = list(inputs_);
        j["outputs"] = list(result.outputs);
        j["warnings"] = result.warnings;
        std::ofstream out(config.out_dir / fmt::format("manifest_{}.json", stage_), std::ios::binary);
        out << j.dump(2) << "\n";
        result.stage = stage_;
        return result;
    }

private:
    void check_stale(const fs::path& p, std::string_view producer) {
        const auto manifest = config.out_dir / fmt::format("manifest_{}.json", producer);
        if (!fs::exists(manifest)) return;
        std::ifstream in(manifest);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception&) {
            warn(fmt::format("manifest {} is unreadable", manifest.filename().string()));
            return;
        }
        for (const auto& o : j.value("outputs", nlohmann::json::array())) {
            if (o.value("file", "") != p.filename().generic_string()) continue;
            if (o.value("fnv1a64", "") != hash_file(p)) {
                warn(fmt::format("{} changed since stage '{}' wrote it (stale hash)", p.filename().string(), producer));
            }
        }
    }

    std::string stage_;
    std::vector<fs::path> inputs_;
};

panel::QuarterRange pre_period(std::span<const panel::QuarterId> index, const RunConfig& config) {
    if (index.empty()) throw ValidationError("empty_panel", "the panel has no quarters");
    const auto first = panel::QuarterId::parse(config.pre_first);
    const auto last = panel::QuarterId::parse(config.pre_last);
    const int base = index.front().ordinal();
    const int lo = std::max(first.ordinal() - base + 1, 1);
    const int hi = std::min(last.ordinal() - base + 1, static_cast<int>(index.size()));
    if (lo > hi) {
        throw ValidationError("invalid_range", fmt::format("pre-period {}..{} does not overlap the panel ({}..{})",
                                                           config.pre_first, config.pre_last, index.front().label(),
                                                           index.back().label()));
    }
    return {lo, hi};
}

panel::Panel load_panel(Context& ctx) { return panel::read_panel(ctx.artifact("panel_built.csv", "ingest")); }

events::CohortMap load_cohorts(Context& ctx, const panel::Panel& p) {
    return events::read_cohorts(ctx.artifact("cohorts.csv", "events"), p);
}

spatial::WeightsResult load_weights(Context& ctx) {
    ctx.artifact("nodes.csv", "weights");
    ctx.artifact("weights.csv", "weights");
    return spatial::read_weights(ctx.config.out_dir);
}

/// Distances between the panel's municipalities, in panel geoid order.
Eigen::MatrixXd panel_distances(const panel::Panel& p, const spatial::WeightsResult& w) {
    const auto full = spatial::pairwise_distances_km(w.graph);
    const auto n = static_cast<Eigen::Index>(p.geoids().size());
    std::vector<int> node(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto found = w.graph.find(p.geoids()[static_cast<std::size_t>(i)]);
        if (!found) {
            throw ValidationError("unknown_geoid",
                                  fmt::format("municipality {} has no centroid", p.geoids()[static_cast<std::size_t>(i)]));
        }
        node[static_cast<std::size_t>(i)] = *found;
    }
    Eigen::MatrixXd d(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) d(i, j) = full(node[static_cast<std::size_t>(i)], node[static_cast<std::size_t>(j)]);
    }
    return d;
}

// --- stages -----------------------------------------------------------------

void ingest(Context& ctx) {
    const auto dir = ctx.config.inputs();
    const auto raw = panel::read_raw_records(ctx.input(dir / "panel.csv"));
    const auto cpi = panel::read_cpi(ctx.input(dir / "cpi.csv"));
    std::map<std::string, bool> metro;
    if (fs::exists(dir / "metro.csv")) {
        metro = panel::read_metro(ctx.input(dir / "metro.csv"));
    } else {
        ctx.warn("metro.csv not found; every municipality is labelled nonmetro");
    }
    const auto kept = panel::apply_exclusions(raw);
    const auto rows = panel::deflate_and_log(kept, cpi);
    if (rows.empty()) throw ValidationError("empty_panel", "no records survive the exclusions");
    auto [lo, hi] = std::minmax_element(rows.begin(), rows.end(),
                                        [](const auto& a, const auto& b) { return a.quarter < b.quarter; });
    const auto first = ctx.config.first_quarter ? panel::QuarterId::parse(*ctx.config.first_quarter) : lo->quarter;
    const auto last = ctx.config.last_quarter ? panel::QuarterId::parse(*ctx.config.last_quarter) : hi->quarter;
    const auto index = panel::build_quarter_index(first, last);
    const auto p = panel::build_skeleton(rows, index);
    const auto strata = panel::assign_strata(p, metro, pre_period(p.quarters(), ctx.config));
    panel::write_panel(ctx.output("panel_built.csv"), p);
    panel::write_strata(ctx.output("strata.csv"), p, strata);
}

void weights(Context& ctx) {
    const auto dir = ctx.config.inputs();
    const auto graph = spatial::read_graph(ctx.input(dir / "centroids.csv"), ctx.input(dir / "edges.csv"));
    const auto w = spatial::build_weights(graph, ctx.config.knn);
    long long repaired = 0;
    for (const auto& e : w.graph.edges) repaired += e.knn ? 1 : 0;
    if (repaired > 0) ctx.warn(fmt::format("{} nearest-neighbour links added for isolated municipalities", repaired));
    spatial::write_weights(ctx.config.out_dir, w);
    ctx.output("weights.csv");
    ctx.output("nodes.csv");
}

void detect(Context& ctx) {
    const auto p = load_panel(ctx);
    const auto thresholds = events::compute_t3_thresholds(p, pre_period(p.quarters(), ctx.config));
    const auto cohorts = events::assign_cohorts(p, thresholds);
    events::write_cohorts(ctx.output("cohorts.csv"), p, cohorts);
    events::write_thresholds(ctx.output("t3_thresholds.csv"), thresholds);
}

void exposures(Context& ctx) {
    const auto p = load_panel(ctx);
    const auto cohorts = load_cohorts(ctx, p);
    const auto w = load_weights(ctx);
    const exposure::Layout layout(p, w);
    const auto series = exposure::compute_exposure(layout, cohorts);
    long long degenerate = 0;
    for (bool d : series.degenerate_cross) degenerate += d ? 1 : 0;
    if (degenerate > 0) ctx.warn(fmt::format("{} cells sit in single-industry municipalities (cross exposure 0)", degenerate));
    exposure::write_exposure_long(ctx.output("exposure_long.csv"), p, series);
    exposure::write_exposure_slices(ctx.output("exposure_slices.csv"), p, series, ctx.config.slices,
                                    ctx.config.epsilon);
    std::vector<exposure::OverlapRow> overlap;
    for (const auto& slice : ctx.config.slices) {
        for (auto ch : exposure::kChannels) {
            overlap.push_back(exposure::overlap_report(exposure::slice_sums(series, ch, slice), slice, ch,
                                                       ctx.config.epsilon, p.geoid_of_cell()));
        }
    }
    exposure::write_overlap(ctx.output("overlap.csv"), overlap);
}

void direct_effects(Context& ctx) {
    const auto& cfg = ctx.config;
    const auto p = load_panel(ctx);
    const auto cohorts = load_cohorts(ctx, p);
    std::vector<direct::EventStudyPath> paths;
    std::vector<direct::LeadLagRow> lead_lag;
    for (auto outcome : cfg.outcomes) {
        const auto name = panel::to_string(outcome);
        for (auto mode : {direct::Mode::balanced, direct::Mode::unbalanced}) {
            const auto tag = fmt::format("{}:{}", name, direct::to_string(mode));
            auto cs = direct::aggregate_event_time(direct::cs_group_time(p, cohorts, outcome, cfg.delta, mode));
            direct::multiplier_band(cs, cfg.bootstrap, cfg.alpha, derive_seed(ctx.seed, "cs:" + tag));
            auto bjs = direct::bjs_impute(p, cohorts, outcome, cfg.delta, mode);
            direct::bjs_bootstrap(bjs, cfg.bootstrap, cfg.alpha, derive_seed(ctx.seed, "bjs:" + tag));
            paths.push_back(std::move(cs));
            paths.push_back(std::move(bjs.path));
        }
        const auto iw = direct::sun_abraham_iw(p, cohorts, outcome);
        const auto twfe = direct::pooled_twfe_event_study(p, cohorts, outcome);
        lead_lag.insert(lead_lag.end(), iw.begin(), iw.end());
        lead_lag.insert(lead_lag.end(), twfe.begin(), twfe.end());
    }
    std::vector<direct::CumulativeRow> cumulative;
    for (const auto& path : paths) {
        for (const auto& w : path.warnings) ctx.warn(fmt::format("{} {}: {}", path.estimator, path.outcome, w));
        for (const auto& slice : cfg.slices) {
            try {
                cumulative.push_back({path.estimator, path.outcome, path.mode, direct::cumulative_slice(path, slice)});
            } catch (const ValidationError& e) {
                ctx.warn(fmt::format("{} {} {} slice {}: {}", path.estimator, path.outcome,
                                     direct::to_string(path.mode), slice.label(), e.what()));
            }
        }
    }
    direct::write_paths(ctx.output("es_path.csv"), paths);
    direct::write_path_covariances(ctx.output("es_cov.csv"), paths);
    direct::write_cumulative(ctx.output("cumulative.csv"), cumulative);
    direct::write_lead_lag(ctx.output("lead_lag.csv"), lead_lag);
}

/// Variance of (DATT, SATT_same, SATT_cross, SATT_nall, SATT, TATT).
inference::VarianceEstimate expand(const inference::VarianceEstimate& v) {
    Eigen::Matrix<double, 6, 4> L;
    L << 1, 0, 0, 0,  //
        0, 1, 0, 0,   //
        0, 0, 1, 0,   //
        0, 0, 0, 1,   //
        0, 1, 1, 1,   //
        1, 1, 1, 1;
    auto out = v;
    out.vcov = L * v.vcov * L.transpose();
    out.se = out.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
    return out;
}

void dr_did(Context& ctx) {
    const auto& cfg = ctx.config;
    const auto p = load_panel(ctx);
    const auto cohorts = load_cohorts(ctx, p);
    const auto series = exposure::read_exposure_long(ctx.artifact("exposure_long.csv", "exposure"), p, cohorts);
    const auto strata = panel::read_strata(ctx.artifact("strata.csv", "ingest"), p);
    const auto w = load_weights(ctx);
    const auto dist = panel_distances(p, w);
    const auto folds = drdid::make_folds(p.geoids(), cfg.folds, ctx.seed);

    drdid::SampleOptions sample;
    sample.delta = cfg.delta;
    sample.epsilon = cfg.epsilon;
    sample.flavor = cfg.history_flavor;
    drdid::EstimateOptions options;
    options.min_n = cfg.min_n;

    std::vector<drdid::SliceEstimate> estimates;
    std::vector<inference::InferenceRow> rows;
    for (auto outcome : cfg.outcomes) {
        for (const auto& slice : cfg.slices) {
            const auto reg = drdid::build_slice_regressors(p, cohorts, series, strata, outcome, slice, sample);
            auto est = drdid::estimate_slice(reg, folds, p, options);
            est.outcome = panel::to_string(outcome);
            const auto id = fmt::format("drdid:{}:{}", est.outcome, slice.label());
            auto attempt = [&](const std::string& method, const std::function<inference::VarianceEstimate()>& fn) {
                try {
                    est.variance.emplace(method, fn());
                } catch (const Error& e) {
                    ctx.warn(fmt::format("{} {} variance unavailable: {}", id, method, e.what()));
                }
            };
            attempt("twoway", [&] { return inference::twoway_cluster_se(est.X, est.u, est.muni, est.time); });
            attempt("twoway_serial",
                    [&] { return inference::twoway_serial_se(est.X, est.u, est.muni, est.time, cfg.serial_lag); });
            attempt("shac",
                    [&] { return inference::shac_se(est.X, est.u, est.muni, est.time, dist, cfg.shac_cutoff_km); });
            attempt("scpc", [&] { return inference::scpc_se(est.X, est.u, est.muni, dist, cfg.rho_bar, cfg.scpc_q); });
            const Eigen::Vector4d b = est.coefficients();
            const std::array<double, 6> values = {b(0), b(1), b(2), b(3), est.satt, est.tatt};
            for (const auto& [method, v] : est.variance) {
                const auto full = expand(v);
                for (Eigen::Index k = 0; k < 6; ++k) {
                    rows.push_back({id, drdid::kParameters[static_cast<std::size_t>(k)],
                                    values[static_cast<std::size_t>(k)], full, k});
                }
            }
            estimates.push_back(std::move(est));
        }
    }
    drdid::write_slices(ctx.output("drdid_slices.csv"), estimates,
                        {cfg.history_flavor, cfg.epsilon, cfg.min_n});
    drdid::write_residuals(ctx.output("drdid_residuals.csv"), p, estimates);
    inference::write_inference(ctx.output("inference.csv"), rows);
    csv::Table f({"geoid", "fold"});
    for (std::size_t i = 0; i < folds.geoids.size(); ++i) f.add_row({folds.geoids[i], std::to_string(folds.fold[i])});
    csv::write(ctx.output("folds.csv"), f);
}

void heterogeneity(Context& ctx) {
    const auto& cfg = ctx.config;
    const auto p = load_panel(ctx);
    const auto cohorts = load_cohorts(ctx, p);
    const auto series = exposure::read_exposure_long(ctx.artifact("exposure_long.csv", "exposure"), p, cohorts);
    const auto strata = panel::read_strata(ctx.artifact("strata.csv", "ingest"), p);
    std::vector<sensitivity::HeterogeneityRow> rows;
    for (auto outcome : cfg.outcomes) {
        auto part = sensitivity::heterogeneity_twfe(p, cohorts, series, strata, outcome, cfg.slices, cfg.delta, cfg.alpha);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    sensitivity::write_heterogeneity(ctx.output("heterogeneity.csv"), rows);
}

void diagnose(Context& ctx) {
    const auto& cfg = ctx.config;
    const auto w = load_weights(ctx);
    const auto residuals = drdid::read_residuals(ctx.artifact("drdid_residuals.csv", "drdid"));
    std::map<std::pair<std::string, std::string>, std::vector<sensitivity::ResidualPoint>> models;
    for (const auto& r : residuals) {
        const auto node = w.graph.find(r.geoid);
        if (!node) throw ValidationError("unknown_geoid", fmt::format("residual municipality {} has no weights row", r.geoid));
        models[{r.outcome, r.slice}].push_back({*node, r.t, r.residual});
    }
    std::vector<sensitivity::MoranTrigger> moran;
    for (const auto& [key, points] : models) {
        const auto model = fmt::format("drdid:{}:{}", key.first, key.second);
        try {
            moran.push_back(sensitivity::moran_gate(model, points, w.weights, cfg.n_perm, derive_seed(ctx.seed, model)));
        } catch (const NumericalError& e) {
            // Residuals with no variation carry no spatial signal; keep the cluster default.
            sensitivity::MoranTrigger m;
            m.model = model;
            m.statistic = std::numeric_limits<double>::quiet_NaN();
            m.p_value = std::numeric_limits<double>::quiet_NaN();
            m.selected = "cluster";
            moran.push_back(m);
            ctx.warn(fmt::format("Moran gate skipped for {}: {}", model, e.what()));
        }
    }
    sensitivity::write_moran(ctx.output("moran.csv"), moran);

    const auto paths = direct::read_paths(ctx.artifact("es_path.csv", "direct"));
    const auto cov_file = ctx.artifact("es_cov.csv", "direct");
    std::vector<sensitivity::HonestBounds> bounds;
    for (const auto& path : paths) {
        try {
            const auto cov = direct::read_path_covariance(cov_file, path);
            auto b = sensitivity::honest_for_path(path, cov, cfg.honest_target, cfg.m_grid, cfg.alpha);
            b.target = fmt::format("{}:{}:{}", path.estimator, direct::to_string(path.mode), cfg.honest_target.label());
            bounds.push_back(std::move(b));
        } catch (const ValidationError& e) {
            ctx.warn(fmt::format("honest bounds skipped for {} {} {}: {}", path.estimator, path.outcome,
                                 direct::to_string(path.mode), e.what()));
        }
    }
    sensitivity::write_honest(ctx.output("honest_bounds.csv"), bounds);
}

void simulate(Context& ctx) {
    if (ctx.config.dgp_config.empty()) {
        throw ValidationError("invalid_config", "the simulate stage needs dgp_config in the run config");
    }
    auto dgp_cfg = dgp::read_config(ctx.input(ctx.config.dgp_config));
    if (nlohmann::json::parse(dgp_cfg.source).count("seed") == 0) dgp_cfg.seed = ctx.seed;
    const auto sim = dgp::simulate(dgp_cfg);
    for (const auto& f : sim.flags) ctx.warn(f);
    dgp::write_simulation(ctx.config.out_dir, sim);
    for (const char* name : {"panel.csv", "cpi.csv", "metro.csv", "centroids.csv", "edges.csv",
                             "planted_cohorts.csv", "truth.csv", "dgp_config.json"}) {
        ctx.output(name);
    }
}

void report(Context& ctx) {
    for (const auto& [file, producer] : std::vector<std::pair<std::string, std::string>>{
             {"es_path.csv", "direct"},
             {"cumulative.csv", "direct"},
             {"drdid_slices.csv", "drdid"},
             {"inference.csv", "drdid"},
             {"overlap.csv", "exposure"},
             {"heterogeneity.csv", "heterogeneity"},
             {"moran.csv", "diagnose"},
             {"honest_bounds.csv", "diagnose"}}) {
        ctx.artifact(file, producer);
    }
    std::ofstream out(ctx.output("report.md"), std::ios::binary);
    out << report::render(ctx.config.out_dir);
}

}  // namespace

StageResult run_stage(std::string_view stage, const RunConfig& config) {
    validate(config);
    static const std::map<std::string_view, void (*)(Context&)> table = {
        {"ingest", ingest},         {"weights", weights},   {"events", detect},
        {"exposure", exposures},    {"direct", direct_effects}, {"drdid", dr_did},
        {"heterogeneity", heterogeneity}, {"diagnose", diagnose}, {"simulate", simulate},
        {"report", report},
    };
    const auto it = table.find(stage);
    if (it == table.end()) throw ValidationError("unknown_stage", fmt::format("unknown stage '{}'", stage));
    Context ctx(std::string(stage), config);
    std::ofstream(config.out_dir / "config_resolved.json", std::ios::binary) << to_json(config);
    it->second(ctx);
    return ctx.finish();
}

std::vector<StageResult> run_all(const RunConfig& config) {
    std::vector<StageResult> out;
    for (auto stage : kChain) out.push_back(run_stage(stage, config));
    return out;
}

}  // namespace entryfx::pipeline
