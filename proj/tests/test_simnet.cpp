#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "doctest.h"
#include "qmed/collection.hpp"
#include "qmed/mediator.hpp"
#include "qmed/simnet.hpp"

using namespace qmed;
using namespace qmed::simnet;

namespace {

ScenarioConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_scenario(in);
}

// one QM, one indexer, every stochastic knob pinned to zero
const char* kDegenerate =
    "horizon 5000\n"
    "seed 7\n"
    "qm solo rate=0.5 timeout=10 mix=ix:1\n"
    "indexer ix service_median=0.1 service_sigma=0 overhead=0 mean_up=1000 mean_down=0\n"
    "link solo ix fwd_median=0 fwd_sigma=0 fwd_loss=0 rev_median=0 rev_sigma=0 rev_loss=0\n";

std::string render(const SimulationOutput& out) {
    std::string s;
    for (const auto& rec : out.qm_view) s += format_trace_record(rec) + "\n";
    for (const auto& rec : out.indexer_view) s += format_service_record(rec) + "\n";
    return s;
}

}  // namespace

TEST_CASE("scenario files parse into the full model") {
    auto cfg = parse(
        "# demo\n"
        "horizon 1200\n"
        "seed 99\n"
        "qm east rate=0.25 timeout=15 mix=a:3,b:1\n"
        "indexer a service_median=0.2 service_sigma=0.4 overhead=0.05 mean_up=900 "
        "mean_down=60\n"
        "indexer b service_median=1 service_sigma=0 overhead=0 mean_up=100 mean_down=0\n"
        "link east a fwd_median=0.1 fwd_sigma=0.2 fwd_loss=0.01 rev_median=0.3 "
        "rev_sigma=0.1 rev_loss=0.02\n"
        "link east b fwd_median=2 fwd_sigma=0.5 fwd_loss=0.2 rev_median=2 rev_sigma=0.5 "
        "rev_loss=0.2\n");
    CHECK(cfg.horizon_s == 1200.0);
    CHECK(cfg.seed == 99);
    CHECK(cfg.workloads.at("east").arrival_rate_hz == 0.25);
    CHECK(cfg.workloads.at("east").timeout_s == 15.0);
    CHECK(cfg.workloads.at("east").mix.at("a") == 3.0);
    CHECK(cfg.indexer_models.at("a").availability.mean_down_s == 60.0);
    CHECK(cfg.indexer_models.at("b").service.sigma == 0.0);
    auto link = cfg.links.at({"east", "a"});
    CHECK(link.fwd.median_s == 0.1);
    CHECK(link.rev.median_s == 0.3);
    CHECK(link.fwd_loss == 0.01);
}

TEST_CASE("scenario validation rejects inconsistent declarations") {
    auto reject = [](const std::string& text) {
        CHECK_THROWS_AS(parse(text), std::runtime_error);
    };
    // mix names an undeclared indexer
    reject("horizon 10\nqm a rate=1 timeout=5 mix=ghost:1\n");
    // mix pair without a link
    reject(
        "horizon 10\nqm a rate=1 timeout=5 mix=x:1\n"
        "indexer x service_median=1 service_sigma=0 overhead=0 mean_up=10 mean_down=0\n");
    // loss above 1
    reject(
        "horizon 10\nqm a rate=1 timeout=5 mix=x:1\n"
        "indexer x service_median=1 service_sigma=0 overhead=0 mean_up=10 mean_down=0\n"
        "link a x fwd_median=0 fwd_sigma=0 fwd_loss=1.5 rev_median=0 rev_sigma=0 "
        "rev_loss=0\n");
    // non-positive rate
    reject(
        "horizon 10\nqm a rate=0 timeout=5 mix=x:1\n"
        "indexer x service_median=1 service_sigma=0 overhead=0 mean_up=10 mean_down=0\n"
        "link a x fwd_median=0 fwd_sigma=0 fwd_loss=0 rev_median=0 rev_sigma=0 rev_loss=0\n");
}

TEST_CASE("a fully pinned scenario responds every time with exact latency") {
    auto out = run_simulation(parse(kDegenerate));
    REQUIRE(out.qm_view.size() > 1000);
    CHECK(out.indexer_view.size() == out.qm_view.size());
    for (const auto& rec : out.qm_view) {
        CHECK(rec.obs.responded);
        CHECK(*rec.obs.elapsed_s == 0.1);
        CHECK(rec.obs.at <= 5000.0);
    }
    for (const auto& rec : out.indexer_view) {
        CHECK(rec.service_s == 0.1);
    }
    auto stats = indexer_view_stats(out.indexer_view);
    // each record is exactly 0.1; the fold picks up only summation dust
    CHECK(stats.at({"ix", "solo"}).mean() == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(stats.at({"ix", "solo"}).variance() < 1e-10);
}

TEST_CASE("arrival volume tracks the configured rate") {
    auto out = run_simulation(parse(kDegenerate));
    // 0.5/s over 5000s: mean 2500, sd = 50; 6 sigma
    CHECK(out.qm_view.size() > 2200);
    CHECK(out.qm_view.size() < 2800);
}

TEST_CASE("the same seed reproduces the run byte for byte; a new seed doesn't") {
    auto cfg = parse(kDegenerate);
    auto a = render(run_simulation(cfg));
    auto b = render(run_simulation(cfg));
    CHECK(a == b);

    cfg.seed = 8;
    auto c = render(run_simulation(cfg));
    CHECK(a != c);
}

TEST_CASE("a severed forward link never delivers anything") {
    auto cfg = parse(
        "horizon 2000\n"
        "seed 3\n"
        "qm cut rate=0.5 timeout=10 mix=ix:1\n"
        "qm fine rate=0.5 timeout=10 mix=ix:1\n"
        "indexer ix service_median=0.1 service_sigma=0 overhead=0 mean_up=100 mean_down=0\n"
        "link cut ix fwd_median=0 fwd_sigma=0 fwd_loss=1 rev_median=0 rev_sigma=0 "
        "rev_loss=0\n"
        "link fine ix fwd_median=0 fwd_sigma=0 fwd_loss=0 rev_median=0 rev_sigma=0 "
        "rev_loss=0\n");
    auto out = run_simulation(cfg);
    auto stats = qm_view_stats(out.qm_view);
    CHECK(stats.at({"cut", "ix"}).attempts > 500);
    CHECK(stats.at({"cut", "ix"}).responses == 0);
    CHECK(*stats.at({"fine", "ix"}).response_ratio() == 1.0);

    // nothing from the cut QM ever reached the indexer
    for (const auto& rec : out.indexer_view) {
        CHECK(rec.calling_qm == "fine");
    }
}

TEST_CASE("every delivered request is an attempt: views reconcile") {
    auto cfg = parse(
        "horizon 3000\n"
        "seed 11\n"
        "qm q1 rate=0.4 timeout=5 mix=ix:1\n"
        "indexer ix service_median=0.3 service_sigma=0.5 overhead=0.1 mean_up=300 "
        "mean_down=40\n"
        "link q1 ix fwd_median=0.2 fwd_sigma=0.3 fwd_loss=0.1 rev_median=0.2 "
        "rev_sigma=0.3 rev_loss=0.1\n");
    auto out = run_simulation(cfg);
    auto qm = qm_view_stats(out.qm_view);
    auto ix = indexer_view_stats(out.indexer_view);
    // losses and downtime only shrink the population at each stage
    CHECK(qm.at({"q1", "ix"}).attempts >= ix.at({"ix", "q1"}).count);
    CHECK(ix.at({"ix", "q1"}).count >= qm.at({"q1", "ix"}).responses);
    CHECK(qm.at({"q1", "ix"}).responses > 0);
}

TEST_CASE("network asymmetry: callers disagree while the indexer stays constant") {
    auto cfg = parse(
        "horizon 20000\n"
        "seed 5\n"
        "qm near rate=0.4 timeout=30 mix=ix:1\n"
        "qm far rate=0.4 timeout=30 mix=ix:1\n"
        "indexer ix service_median=0.5 service_sigma=0.3 overhead=0.1 mean_up=100 "
        "mean_down=0\n"
        "link near ix fwd_median=0.05 fwd_sigma=0.1 fwd_loss=0 rev_median=0.05 "
        "rev_sigma=0.1 rev_loss=0\n"
        "link far ix fwd_median=3 fwd_sigma=0.2 fwd_loss=0 rev_median=3 rev_sigma=0.2 "
        "rev_loss=0\n");
    auto out = run_simulation(cfg);
    auto qm = qm_view_stats(out.qm_view);
    double near_mean = *qm.at({"near", "ix"}).mean_elapsed();
    double far_mean = *qm.at({"far", "ix"}).mean_elapsed();
    CHECK(far_mean - near_mean > 4.0);  // ~6s of extra round trip

    // the indexer's own service time cannot depend on who called
    auto ix = indexer_view_stats(out.indexer_view);
    const auto& a = ix.at({"ix", "near"});
    const auto& b = ix.at({"ix", "far"});
    double se = std::sqrt(a.variance() / static_cast<double>(a.count) +
                          b.variance() / static_cast<double>(b.count));
    CHECK(std::abs(a.mean() - b.mean()) < 3.0 * se);
}

TEST_CASE("availability timeline is a pure function of its seed") {
    AvailabilityModel model{200.0, 50.0};
    AvailabilityTimeline t1(model, 12345);
    AvailabilityTimeline t2(model, 12345);

    // interrogate in different orders; answers must agree point for point
    std::vector<double> forward, backward;
    for (int i = 0; i < 400; ++i) forward.push_back(static_cast<double>(i * 13 % 4000));
    backward = forward;
    std::reverse(backward.begin(), backward.end());
    for (std::size_t i = 0; i < forward.size(); ++i) {
        bool a = t1.is_up(forward[i]);
        (void)a;
    }
    for (double t : backward) {
        AvailabilityTimeline fresh(model, 12345);
        CHECK(fresh.is_up(t) == t1.is_up(t));
        CHECK(t2.is_up(t) == t1.is_up(t));
    }
}

TEST_CASE("long-run up fraction approaches mean_up / (mean_up + mean_down)") {
    AvailabilityModel model{300.0, 100.0};
    AvailabilityTimeline timeline(model, 77);
    int up = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        if (timeline.is_up(i * 0.5)) ++up;
    }
    double fraction = static_cast<double>(up) / n;
    CHECK(fraction > 0.70);
    CHECK(fraction < 0.80);  // expect 0.75

    AvailabilityTimeline always(AvailabilityModel{10.0, 0.0}, 77);
    for (double t : {0.0, 1e3, 1e6}) CHECK(always.is_up(t));
}

TEST_CASE("service records round-trip through their line format") {
    ServiceRecord rec{123.25, "ix-a", "qm-b", 0.875};
    CHECK(parse_service_record_line(format_service_record(rec)) == rec);
    CHECK(parse_service_record_line("ts=1 indexer=a calling_qm=b service_s=0.5") ==
          ServiceRecord{1.0, "a", "b", 0.5});
    CHECK_THROWS(parse_service_record_line("garbage line"));
    CHECK_THROWS(parse_service_record_line("ts=1 indexer=a calling_qm=b"));
}

TEST_CASE("simulated transport honors the scenario and stays deterministic") {
    auto scenario = parse(kDegenerate);
    std::istringstream meta_in(
        "version 1\n"
        "repository r1\n"
        "repository r2\n"
        "indexer ix coverage=r1,r2\n");
    auto meta = std::make_shared<const collection::CollectionMetadata>(
        collection::parse_collection(meta_in));

    SimTransport transport(scenario, "solo", meta, 2);

    Query q;
    q.query_id = "q42";
    q.scope = {"r1"};
    auto request = mediator::translate_query(q, "sim-v1");

    auto reply = transport.send("ix", request, 10.0, 50.0);
    CHECK(reply.outcome == IndexerStatus::Responded);
    CHECK(reply.elapsed_s == doctest::Approx(0.1));
    REQUIRE(reply.results.size() == 2);  // results_per_repo=2, one repo in scope
    CHECK(reply.results[0].handle.substr(0, 3) == "r1/");
    CHECK(reply.results[0].source_indexer == "ix");

    // identical coordinates: identical reply; a different query: a different draw
    auto replay = transport.send("ix", request, 10.0, 50.0);
    CHECK(replay.elapsed_s == reply.elapsed_s);
    CHECK(replay.results == reply.results);

    SUBCASE("an unknown link cannot be reached") {
        auto lost = transport.send("elsewhere", request, 10.0, 50.0);
        CHECK(lost.outcome == IndexerStatus::Failed);
    }

    SUBCASE("handles and scores are replica-invariant for merge/dedup") {
        auto scenario2 = parse(
            "horizon 10\n"
            "seed 7\n"
            "qm solo rate=0.1 timeout=10 mix=twin:1\n"
            "indexer twin service_median=0.1 service_sigma=0 overhead=0 mean_up=10 "
            "mean_down=0\n"
            "link solo twin fwd_median=0 fwd_sigma=0 fwd_loss=0 rev_median=0 rev_sigma=0 "
            "rev_loss=0\n");
        std::istringstream twin_meta_in(
            "version 1\n"
            "repository r1\n"
            "indexer ix coverage=r1\n"
            "indexer twin coverage=r1\n");
        auto twin_meta = std::make_shared<const collection::CollectionMetadata>(
            collection::parse_collection(twin_meta_in));
        SimTransport other(scenario2, "solo", twin_meta, 2);
        auto from_twin = other.send("twin", request, 10.0, 50.0);
        REQUIRE(from_twin.results.size() == 2);
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(from_twin.results[i].handle == reply.results[i].handle);
            CHECK(from_twin.results[i].score == reply.results[i].score);
            CHECK(from_twin.results[i].source_indexer == "twin");
        }
    }

    SUBCASE("a timeout shorter than the latency forfeits the reply") {
        auto hurried = transport.send("ix", request, 0.05, 50.0);
        CHECK(hurried.outcome == IndexerStatus::TimedOut);
        CHECK(hurried.waited_s == 0.05);
    }
}

TEST_CASE("simulation trace files round-trip through the domain readers") {
    auto out = run_simulation(parse(kDegenerate));
    std::string qm_path = "simnet_test_qm.trace";
    std::string ix_path = "simnet_test_ix.trace";
    write_trace_file(qm_path, out.qm_view);
    write_service_file(ix_path, out.indexer_view);

    auto qm_read = read_trace_file(qm_path);
    CHECK(qm_read.bad_lines.empty());
    CHECK(qm_read.records == out.qm_view);

    auto ix_read = read_service_file(ix_path);
    CHECK(ix_read.bad_lines.empty());
    CHECK(ix_read.records == out.indexer_view);

    std::remove(qm_path.c_str());
    std::remove(ix_path.c_str());
}
