#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "qmed/commands.hpp"
#include "qmed/domain.hpp"

using namespace qmed;
using namespace qmed::commands;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name, const std::string& content)
        : path("cmdtest_" + name) {
        std::ofstream f(path);
        f << content;
    }
    ~TempFile() { std::remove(path.c_str()); }
    TempFile(const TempFile&) = delete;
    TempFile& operator=(const TempFile&) = delete;
};

std::string trace_line(double at, const char* qm, const char* ix, int i, bool ok,
                       double elapsed, double timeout = 600.0) {
    TraceRecord rec;
    rec.obs.at = at;
    rec.obs.qm = qm;
    rec.obs.indexer = ix;
    rec.obs.timeout_s = timeout;
    rec.obs.responded = ok;
    if (ok) rec.obs.elapsed_s = elapsed;
    rec.query_id = "q" + std::to_string(i);
    return format_trace_record(rec) + "\n";
}

// 100 attempts, 87 responses for (siteA, ix1); replies at 2s and 5s for
// (siteB, ix1); nothing between siteB and ix2
std::string small_trace() {
    std::string text = "# fixture trace\n";
    int q = 0;
    for (int i = 0; i < 100; ++i) {
        text += trace_line(i, "siteA", "ix1", ++q, i < 87, 3.0);
    }
    for (int i = 0; i < 40; ++i) {
        text += trace_line(200 + i, "siteA", "ix2", ++q, true, 1.25);
    }
    text += trace_line(300, "siteB", "ix1", ++q, true, 2.0);
    text += trace_line(301, "siteB", "ix1", ++q, true, 5.0);
    return text;
}

std::vector<std::string> lines_of(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

const char* kScenario =
    "horizon 600\n"
    "seed 21\n"
    "qm solo rate=0.5 timeout=10 mix=ix:1\n"
    "indexer ix service_median=0.1 service_sigma=0 overhead=0 mean_up=1000 mean_down=0\n"
    "link solo ix fwd_median=0 fwd_sigma=0 fwd_loss=0 rev_median=0 rev_sigma=0 rev_loss=0\n";

}  // namespace

TEST_CASE("analyze renders the ratio matrix with dashes for unseen pairs") {
    TempFile trace("ratio.trace", small_trace());
    AnalyzeArgs args;
    args.trace_path = trace.path;

    std::ostringstream out, err;
    CHECK(cmd_analyze(args, out, err) == kOk);
    std::string text = out.str();
    CHECK(contains(text, "0.87"));  // siteA's view of ix1
    CHECK(contains(text, "1.00"));  // siteA's view of ix2, siteB's of ix1
    CHECK(contains(text, "-"));     // siteB never touched ix2
    CHECK(err.str().empty());
}

TEST_CASE("analyze times: mean of 2 and 5 seconds is 3.5") {
    TempFile trace("times.trace", small_trace());
    AnalyzeArgs args;
    args.trace_path = trace.path;
    args.kind = "times";

    std::ostringstream out, err;
    CHECK(cmd_analyze(args, out, err) == kOk);
    CHECK(contains(out.str(), "3.5"));

    SUBCASE("records carry the same numbers at full precision") {
        args.format = "records";
        std::ostringstream rec_out;
        CHECK(cmd_analyze(args, rec_out, err) == kOk);
        bool found = false;
        for (const auto& line : lines_of(rec_out.str())) {
            if (contains(line, "qm=siteB") && contains(line, "indexer=ix1")) {
                CHECK(contains(line, "kind=mean_elapsed_s"));
                CHECK(contains(line, "value=3.5"));
                found = true;
            }
        }
        CHECK(found);
    }
}

TEST_CASE("analyze flags unparseable lines and keeps going") {
    TempFile trace("bad.trace", small_trace() + "not a record\n");
    AnalyzeArgs args;
    args.trace_path = trace.path;

    std::ostringstream out, err;
    CHECK(cmd_analyze(args, out, err) == kWarnings);
    CHECK(contains(out.str(), "0.87"));  // analysis still produced
    CHECK(contains(err.str(), "line"));
}

TEST_CASE("analyze refuses a responses-only trace with a pointed message") {
    TempFile service("ix.trace",
                     "ts=1 indexer=ix calling_qm=solo service_s=0.1\n"
                     "ts=2 indexer=ix calling_qm=solo service_s=0.2\n");
    AnalyzeArgs args;
    args.trace_path = service.path;
    std::ostringstream out, err;
    CHECK(cmd_analyze(args, out, err) == kUsage);
    CHECK(contains(err.str(), "indexer-view"));
    CHECK(contains(err.str(), "QM-view"));
    // the refusal must preempt the per-line warning flood
    CHECK(!contains(err.str(), "missing field"));
    CHECK(out.str().empty());
}

TEST_CASE("analyze usage errors: missing file, unknown kind") {
    std::ostringstream out, err;
    AnalyzeArgs missing;
    missing.trace_path = "no-such-file.trace";
    CHECK(cmd_analyze(missing, out, err) == kUsage);

    TempFile trace("kind.trace", small_trace());
    AnalyzeArgs bad_kind;
    bad_kind.trace_path = trace.path;
    bad_kind.kind = "vibes";
    CHECK(cmd_analyze(bad_kind, out, err) == kUsage);
}

TEST_CASE("backtest availability: identical tables for equivalent methods") {
    TempFile trace("equiv.trace", small_trace());

    BacktestArgs slo;
    slo.trace_path = trace.path;
    slo.methods = {"single-last-obs"};
    std::ostringstream slo_out, err;
    CHECK(cmd_backtest(slo, slo_out, err) == kOk);

    BacktestArgs ra1;
    ra1.trace_path = trace.path;
    ra1.methods = {"running-average"};
    ra1.params = "window=1";
    std::ostringstream ra_out;
    CHECK(cmd_backtest(ra1, ra_out, err) == kOk);

    // same numbers, different column header
    auto strip = [](std::string s, const std::string& from, const std::string& to) {
        std::size_t pos;
        while ((pos = s.find(from)) != std::string::npos) s.replace(pos, from.size(), to);
        return s;
    };
    CHECK(strip(slo_out.str(), "single-last-obs", "M") ==
          strip(ra_out.str(), "running-average", "M"));
}

TEST_CASE("backtest response-time footnote takes the square root of the worst MSE") {
    // one pair, one prediction: error^2 = 69.4 exactly as printed
    std::string text;
    text += trace_line(0, "qa", "ix", 1, true, 10.0);
    text += trace_line(10, "qa", "ix", 2, true, 10.0 + std::sqrt(69.4));
    TempFile trace("rms.trace", text);

    BacktestArgs args;
    args.trace_path = trace.path;
    args.methods = {"single-last-obs"};
    args.metric = "response-time";
    std::ostringstream out, err;
    CHECK(cmd_backtest(args, out, err) == kOk);
    CHECK(contains(out.str(), "sqrt(69.4) = 8.3"));
}

TEST_CASE("backtest availability footnote states the error-rate identity") {
    TempFile trace("ident.trace", small_trace());
    BacktestArgs args;
    args.trace_path = trace.path;
    std::ostringstream out, err;
    CHECK(cmd_backtest(args, out, err) == kOk);
    CHECK(contains(out.str(), "MSE is the misprediction rate"));
    CHECK(contains(out.str(), "n_obs"));
}

TEST_CASE("backtest records format carries full-precision granularities") {
    TempFile trace("records.trace", small_trace());
    BacktestArgs args;
    args.trace_path = trace.path;
    args.methods = {"single-last-obs"};
    args.format = "records";
    std::ostringstream out, err;
    CHECK(cmd_backtest(args, out, err) == kOk);

    bool per_qm = false, per_pair = false, per_qm_max = false;
    for (const auto& line : lines_of(out.str())) {
        if (contains(line, "granularity=per-qm ")) per_qm = true;
        if (contains(line, "granularity=per-pair")) per_pair = true;
        if (contains(line, "granularity=per-qm-max")) per_qm_max = true;
        if (contains(line, "granularity=per-pair") && contains(line, "qm=siteA") &&
            contains(line, "indexer=ix1")) {
            CHECK(contains(line, "method=single-last-obs"));
            CHECK(contains(line, "mse="));
            CHECK(contains(line, "n_predictions=99"));
        }
    }
    CHECK(per_qm);
    CHECK(per_pair);
    CHECK(per_qm_max);
}

TEST_CASE("backtest refuses a responses-only trace with a pointed message") {
    TempFile service("ix.trace",
                     "ts=1 indexer=ix calling_qm=solo service_s=0.1\n"
                     "ts=2 indexer=ix calling_qm=solo service_s=0.2\n");
    BacktestArgs args;
    args.trace_path = service.path;
    std::ostringstream out, err;
    CHECK(cmd_backtest(args, out, err) == kUsage);
    CHECK(contains(err.str(), "indexer-view"));
    CHECK(contains(err.str(), "QM-view"));
    // the refusal must preempt the per-line warning flood
    CHECK(!contains(err.str(), "missing field"));

    args.metric = "response-time";
    std::ostringstream err2;
    CHECK(cmd_backtest(args, out, err2) == kUsage);
    CHECK(contains(err2.str(), "indexer-view"));
}

TEST_CASE("backtest warns when pairs are too short to score") {
    std::string text = small_trace() + trace_line(400, "siteC", "ix1", 9999, true, 1.0);
    TempFile trace("short.trace", text);
    BacktestArgs args;
    args.trace_path = trace.path;
    args.methods = {"single-last-obs"};
    std::ostringstream out, err;
    CHECK(cmd_backtest(args, out, err) == kWarnings);
    CHECK(contains(out.str(), "skipped"));
    CHECK(contains(out.str(), "siteC/ix1"));
}

TEST_CASE("simulate writes both views and honors the seed override") {
    TempFile scenario("sim.scenario", kScenario);
    SimulateArgs args;
    args.scenario_path = scenario.path;
    args.out_prefix = "cmdtest_sim";

    std::ostringstream out, err;
    REQUIRE(cmd_simulate(args, out, err) == kOk);
    CHECK(contains(out.str(), "cmdtest_sim.qm.trace"));
    CHECK(contains(out.str(), "cmdtest_sim.indexer.trace"));
    CHECK(contains(out.str(), "seed=21"));

    auto first = read_trace_file("cmdtest_sim.qm.trace");
    REQUIRE(first.bad_lines.empty());
    CHECK(!first.records.empty());

    // same seed, same bytes
    std::ostringstream out2;
    REQUIRE(cmd_simulate(args, out2, err) == kOk);
    auto second = read_trace_file("cmdtest_sim.qm.trace");
    CHECK(first.records == second.records);

    // overridden seed, different draw
    args.seed = 22;
    std::ostringstream out3;
    REQUIRE(cmd_simulate(args, out3, err) == kOk);
    CHECK(contains(out3.str(), "seed=22"));
    auto third = read_trace_file("cmdtest_sim.qm.trace");
    CHECK(first.records != third.records);

    std::remove("cmdtest_sim.qm.trace");
    std::remove("cmdtest_sim.indexer.trace");

    SUBCASE("missing scenario is a usage error") {
        SimulateArgs bad;
        bad.scenario_path = "no-such.scenario";
        std::ostringstream o, e;
        CHECK(cmd_simulate(bad, o, e) == kUsage);
    }
}

TEST_CASE("mediate replays a script deterministically and reports what it learned") {
    TempFile scenario("med.scenario", kScenario);
    TempFile metadata("med.collection",
                      "version 1\n"
                      "repository r1\n"
                      "indexer ix coverage=r1\n");
    TempFile script("med.script",
                    "id=q1 scope=r1 terms=author:lagoze\n"
                    "id=q2 scope=r1 at=100\n");
    TempFile config("med.config", "qm=solo\npredictor=single-last-obs\n");

    MediateArgs args;
    args.scenario_path = scenario.path;
    args.collection_path = metadata.path;
    args.script_path = script.path;
    args.config_path = config.path;

    std::ostringstream out, err;
    CHECK(cmd_mediate(args, out, err) == kOk);
    std::string text = out.str();
    CHECK(contains(text, "session qm=solo"));
    CHECK(contains(text, "query q1"));
    CHECK(contains(text, "plan repo=r1 chain=ix"));
    CHECK(contains(text, "covered=r1"));
    CHECK(contains(text, "qm report:"));
    CHECK(contains(text, "qm=solo indexer=ix attempts=2 responses=2"));
    CHECK(contains(text, "wait_fraction="));

    std::ostringstream out2, err2;
    CHECK(cmd_mediate(args, out2, err2) == kOk);
    CHECK(out.str() == out2.str());

    SUBCASE("records format carries the same events") {
        args.format = "records";
        std::ostringstream rec_out, rec_err;
        CHECK(cmd_mediate(args, rec_out, rec_err) == kOk);
        CHECK(contains(rec_out.str(), "event=query id=q1"));
        CHECK(contains(rec_out.str(), "event=outcome id=q1"));
        // identical numbers in both renderings
        std::string wall;
        for (const auto& line : lines_of(out.str())) {
            if (contains(line, "outcome covered=r1")) {
                wall = line.substr(line.find("wall_s="));
                break;
            }
        }
        REQUIRE(!wall.empty());
        CHECK(contains(rec_out.str(), wall));
    }

    SUBCASE("the report can be written to its own file") {
        args.report_path = "cmdtest_med.report";
        std::ostringstream o, e;
        CHECK(cmd_mediate(args, o, e) == kOk);
        std::ifstream report(args.report_path);
        std::stringstream content;
        content << report.rdbuf();
        CHECK(contains(content.str(), "qm=solo indexer=ix attempts=2"));
        std::remove("cmdtest_med.report");
    }

    SUBCASE("queries out of scope or malformed only warn") {
        TempFile odd_script("odd.script",
                            "id=q1 scope=r-ghost\n"
                            "definitely not a query\n"
                            "id=q2 scope=r1\n");
        MediateArgs warn_args = args;
        warn_args.script_path = odd_script.path;
        std::ostringstream o, e;
        CHECK(cmd_mediate(warn_args, o, e) == kWarnings);
        CHECK(contains(o.str(), "query q2"));  // the good query still ran
        CHECK(!e.str().empty());
    }

    SUBCASE("missing collection file is a usage error") {
        MediateArgs bad = args;
        bad.collection_path = "no-such.collection";
        std::ostringstream o, e;
        CHECK(cmd_mediate(bad, o, e) == kUsage);
    }
}

TEST_CASE("validate-metadata splits its exit codes by failure class") {
    TempFile good("ok.collection",
                  "version 2\n"
                  "repository r1\n"
                  "indexer ix coverage=r1\n"
                  "region all members=ix,me\n"
                  "qm me region=all\n");
    std::ostringstream out, err;
    CHECK(cmd_validate_metadata({good.path}, out, err) == kOk);
    CHECK(contains(out.str(), "ok (version 2, 1 repositories, 1 indexers, 1 regions, 1 qms)"));

    TempFile invalid("invalid.collection",
                     "version 1\n"
                     "indexer ix coverage=r-ghost\n");
    std::ostringstream out2, err2;
    CHECK(cmd_validate_metadata({invalid.path}, out2, err2) == kWarnings);
    CHECK(contains(err2.str(), "r-ghost"));

    std::ostringstream out3, err3;
    CHECK(cmd_validate_metadata({"no-such-file"}, out3, err3) == kUsage);
}
