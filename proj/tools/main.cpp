// Command-line driver for the reflection-recommendation pipeline. Each
// subcommand runs one pipeline stage against a run directory; `run` executes
// the full sequence with resume semantics.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "morerec/pipeline.hpp"

namespace {

struct GlobalOpts {
    std::string config_file;
    std::string run_dir;
    std::string backend;
    long long seed = -1;
};

morerec::RunConfig resolve_config(const GlobalOpts& opts) {
    morerec::RunConfig config;
    if (!opts.config_file.empty())
        config = morerec::RunConfig::from_file(opts.config_file);
    if (!opts.run_dir.empty()) config.run_dir = opts.run_dir;
    if (!opts.backend.empty()) {
        if (opts.backend == "mock") config.backend = morerec::BackendKind::Mock;
        else if (opts.backend == "http") config.backend = morerec::BackendKind::Http;
        else throw morerec::ConfigError("unknown backend: " + opts.backend);
    }
    if (opts.seed >= 0) config.master_seed = static_cast<std::uint64_t>(opts.seed);
    config.validate();
    return config;
}

void print_report(const morerec::fs::path& run_dir) {
    const auto path = run_dir / "eval_report.json";
    if (!morerec::fs::exists(path)) {
        std::cerr << "no eval report at " << path << " (run the eval stage first)\n";
        std::exit(1);
    }
    morerec::Json report = morerec::Json::parse(morerec::read_file(path));
    std::cout << "mode: " << report.at("mode").get<std::string>() << "\n";
    std::cout << "evaluated users: " << report.at("evaluated_users") << "  excluded: "
              << report.at("excluded_users") << "  no-reflection fallbacks: "
              << report.at("fallback_users") << "\n";
    for (const auto& m : report.at("metrics"))
        std::printf("%s@%llu = %.4f\n", m.at("metric").get<std::string>().c_str(),
                    static_cast<unsigned long long>(m.at("k").get<std::size_t>()),
                    m.at("value").get<double>());
    std::cout << "config hash: " << report.at("provenance").at("config_hash").get<std::string>()
              << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-perspective reflection pipeline for LLM-based sequential recommendation"};
    app.require_subcommand(1);

    GlobalOpts opts;
    app.add_option("--config", opts.config_file, "TOML run configuration")->check(CLI::ExistingFile);
    app.add_option("--run-dir", opts.run_dir, "run directory (overrides config)");
    app.add_option("--backend", opts.backend, "LLM backend: mock | http (overrides config)");
    app.add_option("--seed", opts.seed, "master seed (overrides config)");

    // one subcommand per pipeline stage, plus `run` and `report`; global
    // flags may appear before or after the subcommand
    for (const auto& stage : morerec::pipeline_stages())
        app.add_subcommand(stage)->fallthrough();
    auto* run_cmd = app.add_subcommand("run", "run all stages in order (resumable)");
    run_cmd->fallthrough();
    std::string stop_after;
    run_cmd->add_option("--stop-after", stop_after, "stop after the named stage");
    app.add_subcommand("report", "print the evaluation report summary")->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        const std::string sub = app.get_subcommands().front()->get_name();
        morerec::RunConfig config = resolve_config(opts);
        if (sub == "report") {
            print_report(config.run_dir);
            return 0;
        }
        morerec::Pipeline pipeline(config);
        if (sub == "run") {
            pipeline.run(stop_after);
            std::cout << "run complete: " << pipeline.run_dir().string() << "\n";
            if (morerec::fs::exists(pipeline.run_dir() / "eval_report.json"))
                print_report(pipeline.run_dir());
        } else {
            // stages before this one must already be completed
            pipeline.run_stage(sub);
            std::cout << "stage " << sub << " done (run dir " << pipeline.run_dir().string()
                      << ")\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
