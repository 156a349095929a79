#include "entryfx/config.hpp"

#include "entryfx/error.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace entryfx {

namespace {

const std::set<std::string> kKeys = {
    "input_dir", "out_dir",      "dgp_config", "first_quarter", "last_quarter", "pre_period",
    "outcomes",  "delta",        "epsilon",    "slices",        "folds",        "bootstrap",
    "n_perm",    "history_flavor", "min_n",    "shac_cutoff_km", "rho_bar",     "scpc_q",
    "serial_lag", "knn",         "alpha",      "m_grid",        "honest_target", "seed",
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir) {
    RunConfig c;
    try {
        const auto j = nlohmann::json::parse(json_text);
        if (!j.is_object()) throw ValidationError("invalid_config", "run config must be a JSON object");
        for (const auto& [key, value] : j.items()) {
            if (!kKeys.count(key)) throw ValidationError("invalid_config", fmt::format("unknown config key '{}'", key));
        }
        if (j.contains("input_dir")) c.input_dir = resolve(base_dir, j["input_dir"].get<std::string>());
        if (j.contains("out_dir")) c.out_dir = resolve(base_dir, j["out_dir"].get<std::string>());
        if (j.contains("dgp_config")) c.dgp_config = resolve(base_dir, j["dgp_config"].get<std::string>());
        if (j.contains("first_quarter") && !j["first_quarter"].is_null()) c.first_quarter = j["first_quarter"].get<std::string>();
        if (j.contains("last_quarter") && !j["last_quarter"].is_null()) c.last_quarter = j["last_quarter"].get<std::string>();
        if (j.contains("pre_period")) {
            const auto pre = j["pre_period"].get<std::vector<std::string>>();
            if (pre.size() != 2) throw ValidationError("invalid_config", "pre_period takes [first, last]");
            c.pre_first = pre[0];
            c.pre_last = pre[1];
        }
        if (j.contains("outcomes")) {
            c.outcomes.clear();
            for (const auto& o : j["outcomes"]) c.outcomes.push_back(panel::parse_outcome(o.get<std::string>()));
        }
        if (j.contains("slices")) {
            c.slices.clear();
            for (const auto& s : j["slices"]) c.slices.push_back(exposure::Slice::parse(s.get<std::string>()));
        }
        if (j.contains("history_flavor")) {
            c.history_flavor = exposure::parse_history_flavor(j["history_flavor"].get<std::string>());
        }
        if (j.contains("honest_target")) c.honest_target = exposure::Slice::parse(j["honest_target"].get<std::string>());
        if (j.contains("scpc_q") && !j["scpc_q"].is_null()) c.scpc_q = j["scpc_q"].get<int>();
        if (j.contains("serial_lag") && !j["serial_lag"].is_null()) c.serial_lag = j["serial_lag"].get<int>();
        c.delta = j.value("delta", c.delta);
        c.epsilon = j.value("epsilon", c.epsilon);
        c.folds = j.value("folds", c.folds);
        c.bootstrap = j.value("bootstrap", c.bootstrap);
        c.n_perm = j.value("n_perm", c.n_perm);
        c.min_n = j.value("min_n", c.min_n);
        c.shac_cutoff_km = j.value("shac_cutoff_km", c.shac_cutoff_km);
        c.rho_bar = j.value("rho_bar", c.rho_bar);
        c.knn = j.value("knn", c.knn);
        c.alpha = j.value("alpha", c.alpha);
        c.m_grid = j.value("m_grid", c.m_grid);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("invalid_config", fmt::format("run config: {}", e.what()));
    }
    validate(c);
    return c;
}

RunConfig read_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("missing_artifact", fmt::format("config file {} does not exist", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path.parent_path());
}

std::string to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["input_dir"] = c.inputs().generic_string();
    j["out_dir"] = c.out_dir.generic_string();
    j["dgp_config"] = c.dgp_config.generic_string();
    j["first_quarter"] = c.first_quarter ? nlohmann::ordered_json(*c.first_quarter) : nlohmann::ordered_json(nullptr);
    j["last_quarter"] = c.last_quarter ? nlohmann::ordered_json(*c.last_quarter) : nlohmann::ordered_json(nullptr);
    j["pre_period"] = {c.pre_first, c.pre_last};
    auto& outcomes = j["outcomes"] = nlohmann::ordered_json::array();
    for (auto o : c.outcomes) outcomes.push_back(panel::to_string(o));
    j["delta"] = c.delta;
    j["epsilon"] = c.epsilon;
    auto& slices = j["slices"] = nlohmann::ordered_json::array();
    for (const auto& s : c.slices) slices.push_back(s.label());
    j["folds"] = c.folds;
    j["bootstrap"] = c.bootstrap;
    j["n_perm"] = c.n_perm;
    j["history_flavor"] = exposure::to_string(c.history_flavor);
    j["min_n"] = c.min_n;
    j["shac_cutoff_km"] = c.shac_cutoff_km;
    j["rho_bar"] = c.rho_bar;
    j["scpc_q"] = c.scpc_q ? nlohmann::ordered_json(*c.scpc_q) : nlohmann::ordered_json(nullptr);
    j["serial_lag"] = c.serial_lag ? nlohmann::ordered_json(*c.serial_lag) : nlohmann::ordered_json(nullptr);
    j["knn"] = c.knn;
    j["alpha"] = c.alpha;
    j["m_grid"] = c.m_grid;
    j["honest_target"] = c.honest_target.label();
    j["seed"] = c.seed;
    return j.dump(2) + "\n";
}

void validate(const RunConfig& c) {
    auto fail = [](const std::string& msg) { throw ValidationError("invalid_config", msg); };
    if (c.delta < 0) fail("delta must be nonnegative");
    if (!(c.epsilon >= 0.0 && c.epsilon < 0.5)) fail("epsilon must lie in [0, 0.5)");
    if (c.folds < 2) fail("at least two folds are needed");
    if (c.bootstrap < 1 || c.n_perm < 1) fail("bootstrap and permutation counts must be positive");
    if (c.min_n < 1) fail("min_n must be positive");
    if (!(c.shac_cutoff_km > 0.0)) fail("shac cutoff must be positive");
    if (!(c.rho_bar > 0.0 && c.rho_bar < 1.0)) fail("rho_bar must lie in (0, 1)");
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) fail("alpha must lie in (0, 1)");
    if (c.knn < 1) fail("knn must be positive");
    if (c.outcomes.empty() || c.slices.empty()) fail("at least one outcome and one slice are needed");
    for (const auto& s : c.slices) {
        if (s.a < 0 || s.b < s.a) fail(fmt::format("invalid slice {}", s.label()));
    }
    for (double m : c.m_grid) {
        if (!(m >= 0.0)) fail("M grid values must be nonnegative");
    }
}

}  // namespace entryfx
