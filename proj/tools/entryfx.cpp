// entryfx: stage runner for the entry-effects pipeline.
//
//   entryfx simulate --config run.json
//   entryfx all --config run.json --seed 7
//   entryfx drdid --out-dir run/

#include "entryfx/config.hpp"
#include "entryfx/error.hpp"
#include "entryfx/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <optional>
#include <string>

namespace {

void print(const entryfx::pipeline::StageResult& r) {
    for (const auto& w : r.warnings) fmt::print(stderr, "warning [{}]: {}\n", r.stage, w);
    fmt::print("{}: wrote {} file(s)\n", r.stage, r.outputs.size());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Direct and spillover effects of large entry events"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    app.add_option("--config", config_path, "Run configuration (JSON)");
    app.add_option("--seed", seed, "Master seed; overrides the config file");
    app.add_option("--out-dir", out_dir, "Run directory; overrides the config file");

    for (auto stage : entryfx::pipeline::kStages) {
        app.add_subcommand(std::string(stage), fmt::format("Run the {} stage", stage))->fallthrough();
    }
    app.add_subcommand("all", "Run every stage from ingest to report")->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        entryfx::RunConfig config;
        if (!config_path.empty()) config = entryfx::read_run_config(config_path);
        if (seed) config.seed = *seed;
        if (!out_dir.empty()) config.out_dir = out_dir;
        entryfx::validate(config);

        const auto name = app.get_subcommands().front()->get_name();
        if (name == "all") {
            for (const auto& r : entryfx::pipeline::run_all(config)) print(r);
        } else {
            print(entryfx::pipeline::run_stage(name, config));
        }
    } catch (const entryfx::Error& e) {
        fmt::print(stderr, "error [{}]: {}\n", e.code(), e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return 0;
}
