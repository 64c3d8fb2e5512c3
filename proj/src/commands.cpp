#include "qmed/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <vector>

#include "qmed/collection.hpp"
#include "qmed/domain.hpp"
#include "qmed/mediator.hpp"
#include "qmed/predictors.hpp"
#include "qmed/report.hpp"
#include "qmed/simnet.hpp"

namespace qmed::commands {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        std::size_t next = s.find(sep, pos);
        if (next == std::string::npos) next = s.size();
        if (next > pos) out.push_back(s.substr(pos, next - pos));
        pos = next + 1;
    }
    return out;
}

std::string join(const std::vector<std::string>& items, char sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

std::string join(const std::set<std::string>& items, char sep) {
    return join(std::vector<std::string>(items.begin(), items.end()), sep);
}

// A trace whose first data line parses as a service record is the indexer-view
// companion file; analyzing or backtesting it would only yield a warning per line.
bool looks_like_indexer_view(const std::string& path) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        try {
            simnet::parse_service_record_line(line);
            return true;
        } catch (...) {
            return false;
        }
    }
    return false;
}

// Re-render a "k=v,k=v" constants string at display precision for the text
// tables; records output keeps the round-trippable form.
std::string display_params(const std::string& formatted) {
    std::vector<std::string> parts;
    for (const auto& part : split(formatted, ',')) {
        auto eq = part.find('=');
        if (eq == std::string::npos) {
            parts.push_back(part);
            continue;
        }
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6g", parse_double(part.substr(eq + 1), TraceErrorCode::MalformedNumber));
        parts.push_back(part.substr(0, eq + 1) + buf);
    }
    return join(parts, ',');
}

}  // namespace

int cmd_simulate(const SimulateArgs& args, std::ostream& out, std::ostream& err) {
    simnet::ScenarioConfig config;
    try {
        config = simnet::load_scenario_file(args.scenario_path);
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return kUsage;
    }
    if (args.seed) config.seed = *args.seed;

    simnet::SimulationOutput sim = simnet::run_simulation(config);

    std::string qm_path = args.out_prefix + ".qm.trace";
    std::string ix_path = args.out_prefix + ".indexer.trace";
    try {
        write_trace_file(qm_path, sim.qm_view);
        simnet::write_service_file(ix_path, sim.indexer_view);
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return kUsage;
    }

    std::uint64_t responded = 0;
    for (const auto& rec : sim.qm_view) {
        if (rec.obs.responded) ++responded;
    }
    out << "scenario " << args.scenario_path << " seed=" << config.seed
        << " horizon_s=" << format_double(config.horizon_s) << '\n';
    out << "qm-view records: " << sim.qm_view.size() << " (responded " << responded << ")\n";
    out << "indexer-view records: " << sim.indexer_view.size() << '\n';
    for (const auto& [key, tally] : pair_stats(sim.qm_view)) {
        out << "pair qm=" << key.qm << " indexer=" << key.indexer
            << " attempts=" << tally.attempts << " responses=" << tally.responses << '\n';
    }
    out << "wrote " << qm_path << '\n';
    out << "wrote " << ix_path << '\n';
    return kOk;
}

int cmd_analyze(const AnalyzeArgs& args, std::ostream& out, std::ostream& err) {
    report::ReportMatrix::Kind kind;
    if (args.kind == "ratios") {
        kind = report::ReportMatrix::Kind::Ratios;
    } else if (args.kind == "times") {
        kind = report::ReportMatrix::Kind::Times;
    } else {
        err << "unknown analysis kind \"" << args.kind << "\" (expected ratios or times)\n";
        return kUsage;
    }
    if (args.format != "text" && args.format != "records") {
        err << "unknown format \"" << args.format << "\" (expected text or records)\n";
        return kUsage;
    }

    TraceReadResult trace;
    try {
        trace = read_trace_file(args.trace_path);
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return kUsage;
    }
    if (trace.records.empty() && looks_like_indexer_view(args.trace_path)) {
        err << args.trace_path
            << ": this is an indexer-view trace (responses only, no attempt outcomes); "
               "analysis needs the QM-view trace\n";
        return kUsage;
    }
    for (const auto& [line_no, message] : trace.bad_lines) {
        err << args.trace_path << " line " << line_no << ": " << message << '\n';
    }

    report::ReportMatrix matrix = report::build_matrix(pair_stats(trace.records), kind);
    out << (args.format == "text" ? report::render_text(matrix)
                                  : report::render_records(matrix));
    return trace.bad_lines.empty() ? kOk : kWarnings;
}

namespace {

std::vector<double> parse_grid_list(const std::string& text, std::vector<double> fallback) {
    if (text.empty()) return fallback;
    std::vector<double> out;
    for (const auto& item : split(text, ',')) {
        out.push_back(parse_double(item, TraceErrorCode::MalformedNumber));
    }
    return out;
}

std::vector<predictors::Params> build_grid(predictors::Method method,
                                           const std::vector<double>& alphas,
                                           const std::vector<double>& taus,
                                           const std::vector<double>& lambdas) {
    using predictors::Method;
    std::vector<predictors::Params> grid;
    switch (method) {
        case Method::SingleLastObs:
        case Method::RunningAverage:
            break;  // nothing tunable
        case Method::LowPass:
            for (double a : alphas) {
                predictors::Params p;
                p.alpha = a;
                grid.push_back(p);
            }
            break;
        case Method::TlpfValue:
        case Method::TlpfMethodA:
            for (double t : taus) {
                predictors::Params p;
                p.tau = t;
                grid.push_back(p);
            }
            break;
        case Method::TlpfMethodB:
            for (double t : taus) {
                for (double l : lambdas) {
                    predictors::Params p;
                    p.tau = t;
                    p.lambda = l;
                    grid.push_back(p);
                }
            }
            break;
    }
    return grid;
}

}  // namespace

int cmd_backtest(const BacktestArgs& args, std::ostream& out, std::ostream& err) {
    using predictors::Method;
    using predictors::Metric;

    if (args.format != "text" && args.format != "records") {
        err << "unknown format \"" << args.format << "\" (expected text or records)\n";
        return kUsage;
    }
    Metric metric;
    try {
        metric = predictors::metric_from_name(args.metric);
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return kUsage;
    }

    std::vector<Method> methods;
    if (args.methods.empty()) {
        methods.assign(std::begin(predictors::kAllMethods), std::end(predictors::kAllMethods));
    } else {
        for (const auto& name : args.methods) {
            try {
                methods.push_back(predictors::method_from_name(name));
            } catch (const std::exception& e) {
                err << e.what() << '\n';
                return kUsage;
            }
        }
    }

    predictors::Params fixed;
    try {
        fixed = predictors::parse_params(args.params);
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return kUsage;
    }

    std::vector<double> alphas, taus, lambdas;
    try {
        alphas = parse_grid_list(args.alpha_grid,
                                 {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0});
        taus = parse_grid_list(args.tau_grid, {10, 30, 60, 120, 300, 600, 1800, 3600});
        lambdas = parse_grid_list(args.lambda_grid,
                                  {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0});
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return kUsage;
    }

    TraceReadResult trace;
    try {
        trace = read_trace_file(args.trace_path);
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return kUsage;
    }
    if (trace.records.empty() && looks_like_indexer_view(args.trace_path)) {
        err << args.trace_path
            << ": this is an indexer-view trace (responses only, no attempt outcomes); "
               "backtesting needs the QM-view trace\n";
        return kUsage;
    }
    for (const auto& [line_no, message] : trace.bad_lines) {
        err << args.trace_path << " line " << line_no << ": " << message << '\n';
    }
    if (trace.records.empty()) {
        err << args.trace_path << ": no parseable trace records\n";
        return kUsage;
    }

    struct MethodRun {
        Method method;
        predictors::MseReport report;
        std::map<PairKey, predictors::Params> chosen;  // optimize mode only
    };
    std::vector<MethodRun> runs;
    for (Method m : methods) {
        MethodRun run;
        run.method = m;
        try {
            if (args.optimize) {
                auto opt = predictors::per_indexer_mse_optimized(
                    trace.records, m, build_grid(m, alphas, taus, lambdas), metric);
                run.report = std::move(opt.report);
                run.chosen = std::move(opt.chosen);
            } else {
                predictors::Params p = fixed;
                if (m != Method::RunningAverage) p.window.reset();
                run.report = predictors::per_indexer_mse(trace.records, m, p, metric);
            }
        } catch (const std::exception& e) {
            err << predictors::method_name(m) << ": " << e.what() << '\n';
            return kUsage;
        }
        runs.push_back(std::move(run));
    }

    // observation counts per QM for the metric (every attempt for
    // availability, responded records for response time)
    std::map<QmId, std::uint64_t> n_obs;
    for (const auto& rec : trace.records) {
        if (metric == Metric::Availability || rec.obs.responded) ++n_obs[rec.obs.qm];
    }
    std::vector<QmId> qms;
    for (const auto& [qm, n] : n_obs) qms.push_back(qm);
    std::sort(qms.begin(), qms.end(), [&](const QmId& a, const QmId& b) {
        if (n_obs[a] != n_obs[b]) return n_obs[a] > n_obs[b];  // volume first, like the tables
        return a < b;
    });

    int decimals = metric == Metric::Availability ? 2 : 1;
    const auto& base = runs.front().report;

    if (args.format == "records") {
        for (const auto& run : runs) {
            std::string method(predictors::method_name(run.method));
            for (const auto& [qm, r] : run.report.per_qm) {
                out << "granularity=per-qm metric=" << args.metric << " method=" << method
                    << " qm=" << qm << " n_obs=" << n_obs[qm]
                    << " n_predictions=" << r.n_predictions << " mse=" << format_double(r.mse)
                    << " rms=" << format_double(r.rms) << '\n';
            }
            for (const auto& [qm, worst] : run.report.per_qm_max) {
                out << "granularity=per-qm-max metric=" << args.metric << " method=" << method
                    << " qm=" << qm << " mse=" << format_double(worst) << '\n';
            }
            for (const auto& [key, r] : run.report.per_pair) {
                out << "granularity=per-pair metric=" << args.metric << " method=" << method
                    << " qm=" << key.qm << " indexer=" << key.indexer
                    << " n_predictions=" << r.n_predictions << " mse=" << format_double(r.mse)
                    << " rms=" << format_double(r.rms);
                if (args.optimize) {
                    auto it = run.chosen.find(key);
                    std::string params =
                        it == run.chosen.end()
                            ? std::string()
                            : predictors::format_params(run.method, it->second);
                    out << " params=" << (params.empty() ? "-" : params);
                }
                out << '\n';
            }
        }
        for (const auto& key : base.skipped) {
            out << "granularity=skipped qm=" << key.qm << " indexer=" << key.indexer << '\n';
        }
    } else {
        auto method_header = [&] {
            std::vector<std::string> h;
            for (const auto& run : runs) h.emplace_back(predictors::method_name(run.method));
            return h;
        }();

        report::TextTable pooled;
        pooled.header = {"qm", "n_obs"};
        pooled.header.insert(pooled.header.end(), method_header.begin(), method_header.end());
        for (const auto& qm : qms) {
            std::vector<std::string> row{qm, std::to_string(n_obs[qm])};
            for (const auto& run : runs) {
                auto it = run.report.per_qm.find(qm);
                row.push_back(it == run.report.per_qm.end()
                                  ? "-"
                                  : report::fixed(it->second.mse, decimals));
            }
            pooled.rows.push_back(std::move(row));
        }
        out << "MSE for all " << args.metric << " predictions by QM\n"
            << report::render_table(pooled) << '\n';

        report::TextTable worst;
        worst.header = {"qm"};
        worst.header.insert(worst.header.end(), method_header.begin(), method_header.end());
        for (const auto& qm : qms) {
            std::vector<std::string> row{qm};
            for (const auto& run : runs) {
                auto it = run.report.per_qm_max.find(qm);
                row.push_back(it == run.report.per_qm_max.end()
                                  ? "-"
                                  : report::fixed(it->second, decimals));
            }
            worst.rows.push_back(std::move(row));
        }
        out << "Maximum " << args.metric << " prediction MSE for an individual indexer, by QM\n"
            << report::render_table(worst) << '\n';

        report::TextTable pairs;
        pairs.header = {"qm", "indexer", "n_predictions"};
        pairs.header.insert(pairs.header.end(), method_header.begin(), method_header.end());
        for (const auto& [key, r] : base.per_pair) {
            std::vector<std::string> row{key.qm, key.indexer,
                                         std::to_string(r.n_predictions)};
            for (const auto& run : runs) {
                auto it = run.report.per_pair.find(key);
                row.push_back(it == run.report.per_pair.end()
                                  ? "-"
                                  : report::fixed(it->second.mse, decimals));
            }
            pairs.rows.push_back(std::move(row));
        }
        out << "Per-pair " << args.metric << " prediction MSE\n"
            << report::render_table(pairs);

        if (args.optimize) {
            report::TextTable chosen;
            chosen.header = {"qm", "indexer"};
            for (const auto& run : runs) {
                if (predictors::method_tunable(run.method)) {
                    chosen.header.emplace_back(predictors::method_name(run.method));
                }
            }
            for (const auto& [key, r] : base.per_pair) {
                std::vector<std::string> row{key.qm, key.indexer};
                for (const auto& run : runs) {
                    if (!predictors::method_tunable(run.method)) continue;
                    auto it = run.chosen.find(key);
                    row.push_back(it == run.chosen.end() ? "-"
                                                         : display_params(predictors::format_params(
                                                               run.method, it->second)));
                }
                chosen.rows.push_back(std::move(row));
            }
            out << "\nConstants chosen per pair (best in grid, in-sample)\n"
                << report::render_table(chosen);
        }

        if (!base.skipped.empty()) {
            std::vector<std::string> names;
            for (const auto& key : base.skipped) names.push_back(key.qm + "/" + key.indexer);
            out << "\nskipped (fewer than 2 usable points): " << join(names, ' ') << '\n';
        }

        if (metric == Metric::ResponseTime) {
            for (const auto& run : runs) {
                double worst_mse = 0.0;
                bool any = false;
                for (const auto& [qm, r] : run.report.per_qm) {
                    if (!any || r.mse > worst_mse) worst_mse = r.mse;
                    any = true;
                }
                if (any) {
                    out << "rms: " << predictors::method_name(run.method) << ": sqrt("
                        << report::fixed(worst_mse, 1) << ") = "
                        << report::fixed(std::sqrt(worst_mse), 1)
                        << " s average error for the worst per-QM pooled MSE\n";
                }
            }
        } else {
            out << "note: with binary availability data, MSE is the misprediction rate\n";
        }
    }

    return (trace.bad_lines.empty() && base.skipped.empty()) ? kOk : kWarnings;
}

namespace {

struct ScriptQuery {
    Query query;
    std::optional<double> at;
};

// one query per line: id=q1 scope=r1,r2 [terms=author:lagoze;title:dienst] [at=12.5]
ScriptQuery parse_script_line(const std::string& line) {
    RawRecord raw = parse_record_line(line);
    std::map<std::string, std::string> fields(raw.begin(), raw.end());
    ScriptQuery sq;
    auto id = fields.find("id");
    if (id == fields.end() || id->second.empty()) {
        throw std::runtime_error("query line needs id=");
    }
    sq.query.query_id = id->second;
    auto scope = fields.find("scope");
    if (scope == fields.end() || scope->second.empty()) {
        throw std::runtime_error("query line needs scope=");
    }
    for (const auto& repo : split(scope->second, ',')) sq.query.scope.insert(repo);
    if (auto terms = fields.find("terms"); terms != fields.end()) {
        for (const auto& item : split(terms->second, ';')) {
            std::size_t colon = item.find(':');
            if (colon == std::string::npos) {
                throw std::runtime_error("term is not field:value: \"" + item + "\"");
            }
            sq.query.terms.emplace_back(item.substr(0, colon), item.substr(colon + 1));
        }
    }
    if (auto at = fields.find("at"); at != fields.end()) {
        sq.at = parse_double(at->second, TraceErrorCode::MalformedTimestamp);
    }
    return sq;
}

}  // namespace

int cmd_mediate(const MediateArgs& args, std::ostream& out, std::ostream& err) {
    if (args.format != "text" && args.format != "records") {
        err << "unknown format \"" << args.format << "\" (expected text or records)\n";
        return kUsage;
    }

    simnet::ScenarioConfig scenario;
    collection::CollectionMetadata meta;
    mediator::MediatorConfig cfg;
    try {
        scenario = simnet::load_scenario_file(args.scenario_path);
        meta = collection::load_collection_file(args.collection_path);
        if (!args.config_path.empty()) {
            cfg = mediator::load_mediator_config_file(args.config_path);
        }
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return kUsage;
    }
    if (args.seed) scenario.seed = *args.seed;

    std::ifstream script(args.script_path);
    if (!script) {
        err << "cannot open query script: " << args.script_path << '\n';
        return kUsage;
    }

    auto snapshot = std::make_shared<const collection::CollectionMetadata>(std::move(meta));
    auto transport = std::make_shared<simnet::SimTransport>(scenario, cfg.qm, snapshot);
    mediator::Mediator m(cfg, snapshot, transport);

    bool records = args.format == "records";
    bool warned = false;
    bool header_written = false;
    auto session_header = [&] {
        if (header_written) return;
        header_written = true;
        if (records) {
            out << "event=config qm=" << cfg.qm << " predictor="
                << predictors::method_name(cfg.predictor.method)
                << " protocol=" << cfg.protocol << " max_failovers=" << cfg.max_failovers
                << " seed=" << scenario.seed << '\n';
        } else {
            out << "session qm=" << cfg.qm << " predictor="
                << predictors::method_name(cfg.predictor.method)
                << " protocol=" << cfg.protocol << " max_failovers=" << cfg.max_failovers
                << " seed=" << scenario.seed << '\n';
        }
    };

    double clock = 0.0;
    double total_wall = 0.0;
    double total_wait = 0.0;
    std::size_t n_queries = 0;
    std::string line;
    std::size_t line_no = 0;
    std::string indent = records ? "" : "  ";
    while (std::getline(script, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        ScriptQuery sq;
        try {
            sq = parse_script_line(line);
        } catch (const std::exception& e) {
            err << args.script_path << " line " << line_no << ": " << e.what() << '\n';
            warned = true;
            continue;
        }
        session_header();

        double at = std::max(sq.at.value_or(clock), clock);
        ++n_queries;
        if (records) {
            out << "event=query id=" << sq.query.query_id << " at=" << format_double(at)
                << " scope=" << join(sq.query.scope, ',')
                << '\n';
        } else {
            out << "query " << sq.query.query_id << " at=" << format_double(at)
                << " scope=" << join(sq.query.scope, ',')
                << '\n';
        }

        for (const auto& repo : sq.query.scope) {
            if (!snapshot->repositories.count(repo)) {
                if (records) {
                    out << "event=warn id=" << sq.query.query_id
                        << " unknown_repository=" << repo << '\n';
                } else {
                    out << indent << "warn: unknown repository " << repo << '\n';
                }
                warned = true;
            }
        }

        mediator::RoutingPlan plan = m.plan(sq.query, at);
        for (const auto& [repo, chain] : plan.assignments) {
            std::vector<std::string> timeouts;
            for (const auto& id : chain) timeouts.push_back(format_double(plan.timeout_s.at(id)));
            if (records) {
                out << "event=plan id=" << sq.query.query_id << " repo=" << repo
                    << " chain=" << join(chain, ',') << " timeouts=" << join(timeouts, ',')
                    << '\n';
            } else {
                out << indent << "plan repo=" << repo << " chain=" << join(chain, ',')
                    << " timeouts=" << join(timeouts, ',') << '\n';
            }
        }
        for (const auto& repo : plan.uncovered) {
            if (records) {
                out << "event=plan id=" << sq.query.query_id << " repo=" << repo
                    << " uncovered=1\n";
            } else {
                out << indent << "plan repo=" << repo << " uncovered\n";
            }
        }

        mediator::ExecutionResult result = mediator::execute(
            plan, sq.query, *transport, m.store(), cfg.qm, cfg.max_failovers, cfg.protocol, at);

        for (const auto& obs : result.observations) {
            if (records) {
                out << "event=attempt id=" << sq.query.query_id;
            } else {
                out << indent << "attempt";
            }
            out << " at=" << format_double(obs.at) << " indexer=" << obs.indexer
                << " responded=" << (obs.responded ? '1' : '0') << " elapsed_s="
                << (obs.elapsed_s ? format_double(*obs.elapsed_s) : std::string("null"))
                << " timeout_s=" << format_double(obs.timeout_s) << '\n';
        }

        std::vector<std::string> covered(result.covered.begin(), result.covered.end());
        std::vector<std::string> uncov = result.uncovered;
        std::sort(uncov.begin(), uncov.end());
        if (records) {
            out << "event=outcome id=" << sq.query.query_id;
        } else {
            out << indent << "outcome";
        }
        out << " covered=" << join(covered, ',') << " uncovered=" << join(uncov, ',')
            << " failovers=" << result.failovers << " results=" << result.results.results.size()
            << " wall_s=" << format_double(result.wall_s)
            << " wait_s=" << format_double(result.wait_s) << '\n';

        total_wall += result.wall_s;
        total_wait += result.wait_s;
        clock = at + result.wall_s + 1.0;
    }

    if (n_queries > 0) {
        double wait_fraction = total_wall > 0.0 ? total_wait / total_wall : 0.0;
        out << (records ? "event=session" : "session") << " queries=" << n_queries
            << " total_wall_s=" << format_double(total_wall)
            << " total_wait_s=" << format_double(total_wait)
            << " wait_fraction=" << format_double(wait_fraction) << '\n';
    }

    std::string report_text = collection::format_qm_report(m.report());
    if (!args.report_path.empty()) {
        std::ofstream rep(args.report_path);
        if (!rep) {
            err << "cannot write qm report: " << args.report_path << '\n';
            return kUsage;
        }
        rep << report_text;
        if (n_queries > 0) out << "wrote qm report " << args.report_path << '\n';
    } else if (!report_text.empty()) {
        if (!records) out << "qm report:\n";
        out << report_text;
    }

    return warned ? kWarnings : kOk;
}

int cmd_validate_metadata(const ValidateMetadataArgs& args, std::ostream& out,
                          std::ostream& err) {
    std::ifstream in(args.path);
    if (!in) {
        err << "cannot open collection metadata file: " << args.path << '\n';
        return kUsage;
    }
    collection::CollectionMetadata meta;
    try {
        meta = collection::parse_collection(in);  // parse validates before returning
    } catch (const std::exception& e) {
        err << args.path << ": " << e.what() << '\n';
        return kWarnings;
    }
    out << args.path << ": ok (version " << meta.version << ", " << meta.repositories.size()
        << " repositories, " << meta.indexers.size() << " indexers, " << meta.regions.size()
        << " regions, " << meta.qm_region.size() << " qms)\n";
    return kOk;
}

}  // namespace qmed::commands
