#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace qmed::commands {

// 0 success; 1 analysis-level warnings (skipped lines/pairs, failed
// validation); 2 usage or IO errors
inline constexpr int kOk = 0;
inline constexpr int kWarnings = 1;
inline constexpr int kUsage = 2;

struct SimulateArgs {
    std::string scenario_path;
    std::optional<std::uint64_t> seed;  // overrides the scenario's seed
    std::string out_prefix = "sim";     // writes <prefix>.qm.trace, <prefix>.indexer.trace
};

int cmd_simulate(const SimulateArgs& args, std::ostream& out, std::ostream& err);

struct AnalyzeArgs {
    std::string trace_path;
    std::string kind = "ratios";  // ratios | times
    std::string format = "text";  // text | records
};

int cmd_analyze(const AnalyzeArgs& args, std::ostream& out, std::ostream& err);

struct BacktestArgs {
    std::string trace_path;
    std::vector<std::string> methods;      // empty = all six
    std::string metric = "availability";   // availability | response-time
    std::string params;                    // fixed constants, e.g. "alpha=0.3,tau=60"
    bool optimize = false;                 // per-pair grid search instead of fixed params
    std::string alpha_grid;                // comma lists; built-in defaults when empty
    std::string tau_grid;
    std::string lambda_grid;
    std::string format = "text";
};

int cmd_backtest(const BacktestArgs& args, std::ostream& out, std::ostream& err);

struct MediateArgs {
    std::string scenario_path;
    std::string collection_path;
    std::string script_path;
    std::string config_path;            // optional mediator config; defaults otherwise
    std::optional<std::uint64_t> seed;  // overrides the scenario's seed
    std::string format = "text";
    std::string report_path;  // QM report destination; empty = append to the log
};

int cmd_mediate(const MediateArgs& args, std::ostream& out, std::ostream& err);

struct ValidateMetadataArgs {
    std::string path;
};

int cmd_validate_metadata(const ValidateMetadataArgs& args, std::ostream& out,
                          std::ostream& err);

}  // namespace qmed::commands
