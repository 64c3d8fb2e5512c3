#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qmed/commands.hpp"

namespace {

// --out redirection for the report-producing commands
int with_output(const std::string& out_path, const std::function<int(std::ostream&)>& fn) {
    if (out_path.empty()) return fn(std::cout);
    std::ofstream file(out_path);
    if (!file) {
        std::cerr << "cannot write output file: " << out_path << '\n';
        return qmed::commands::kUsage;
    }
    return fn(file);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"query mediation toolkit: simulate a federation, analyze traces, "
                 "backtest predictors, and run mediation sessions"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_path;
    std::string format = "text";
    app.add_option("--seed", seed, "override the scenario seed")
        ->each([&](const std::string&) { seed_set = true; });
    app.add_option("--out", out_path,
                   "output destination (simulate: trace file prefix; analyze/backtest: "
                   "report file; mediate: qm report file)");
    app.add_option("--format", format, "output format: text or records")
        ->check(CLI::IsMember({"text", "records"}));

    auto* simulate = app.add_subcommand("simulate", "run a scenario and write trace files");
    simulate->fallthrough();
    std::string scenario_path;
    simulate->add_option("scenario", scenario_path, "scenario file")->required();

    auto* analyze = app.add_subcommand(
        "analyze", "per-(qm, indexer) response ratios or mean response times from a trace");
    analyze->fallthrough();
    std::string trace_path;
    std::string kind = "ratios";
    analyze->add_option("trace", trace_path, "QM-view trace file")->required();
    analyze->add_option("--kind", kind, "ratios or times")
        ->check(CLI::IsMember({"ratios", "times"}));

    auto* backtest = app.add_subcommand(
        "backtest", "one-step-ahead prediction error (MSE) per method over a trace");
    backtest->fallthrough();
    std::string bt_trace;
    std::vector<std::string> methods;
    std::string metric = "availability";
    std::string params;
    bool optimize = false;
    std::string alpha_grid, tau_grid, lambda_grid;
    backtest->add_option("trace", bt_trace, "QM-view trace file")->required();
    backtest->add_option("--methods", methods,
                         "prediction methods (default: all six)")
        ->delimiter(',');
    backtest->add_option("--metric", metric, "availability or response-time")
        ->check(CLI::IsMember({"availability", "response-time"}));
    backtest->add_option("--params", params, "fixed constants, e.g. alpha=0.3,tau=60");
    backtest->add_flag("--optimize", optimize, "grid-search constants per pair");
    backtest->add_option("--alpha-grid", alpha_grid, "comma list for --optimize");
    backtest->add_option("--tau-grid", tau_grid, "comma list for --optimize");
    backtest->add_option("--lambda-grid", lambda_grid, "comma list for --optimize");

    auto* mediate = app.add_subcommand(
        "mediate", "replay a query script through a mediator against the simulated network");
    mediate->fallthrough();
    std::string med_scenario, med_collection, med_script, med_config;
    mediate->add_option("scenario", med_scenario, "scenario file")->required();
    mediate->add_option("collection", med_collection, "collection metadata file")->required();
    mediate->add_option("script", med_script, "query script file")->required();
    mediate->add_option("--config", med_config, "mediator config file (key=value lines)");

    auto* validate = app.add_subcommand("validate-metadata", "check a collection metadata file");
    validate->fallthrough();
    std::string meta_path;
    validate->add_option("metadata", meta_path, "collection metadata file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return qmed::commands::kUsage;
    }

    std::optional<std::uint64_t> seed_opt;
    if (seed_set) seed_opt = seed;

    if (simulate->parsed()) {
        qmed::commands::SimulateArgs args;
        args.scenario_path = scenario_path;
        args.seed = seed_opt;
        if (!out_path.empty()) args.out_prefix = out_path;
        return qmed::commands::cmd_simulate(args, std::cout, std::cerr);
    }
    if (analyze->parsed()) {
        qmed::commands::AnalyzeArgs args;
        args.trace_path = trace_path;
        args.kind = kind;
        args.format = format;
        return with_output(out_path,
                           [&](std::ostream& out) { return cmd_analyze(args, out, std::cerr); });
    }
    if (backtest->parsed()) {
        qmed::commands::BacktestArgs args;
        args.trace_path = bt_trace;
        args.methods = methods;
        args.metric = metric;
        args.params = params;
        args.optimize = optimize;
        args.alpha_grid = alpha_grid;
        args.tau_grid = tau_grid;
        args.lambda_grid = lambda_grid;
        args.format = format;
        return with_output(out_path,
                           [&](std::ostream& out) { return cmd_backtest(args, out, std::cerr); });
    }
    if (mediate->parsed()) {
        qmed::commands::MediateArgs args;
        args.scenario_path = med_scenario;
        args.collection_path = med_collection;
        args.script_path = med_script;
        args.config_path = med_config;
        args.seed = seed_opt;
        args.format = format;
        args.report_path = out_path;
        return qmed::commands::cmd_mediate(args, std::cout, std::cerr);
    }
    if (validate->parsed()) {
        qmed::commands::ValidateMetadataArgs args;
        args.path = meta_path;
        return qmed::commands::cmd_validate_metadata(args, std::cout, std::cerr);
    }
    return qmed::commands::kUsage;
}
