#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sstream>

#include "doctest.h"
#include "qmed/collection.hpp"

using namespace qmed;
using namespace qmed::collection;

namespace {

const char* kSample =
    "version 3\n"
    "# five sites, one indexer each\n"
    "repository r-cornell\n"
    "repository r-stanford\n"
    "repository r-cmu\n"
    "indexer cornell coverage=r-cornell,r-cmu\n"
    "indexer stanford coverage=r-stanford attrs=cost:low,tier:2\n"
    "indexer cmu coverage=r-cmu\n"
    "region east members=cornell,cmu,east-qm\n"
    "qm east-qm region=east\n"
    "qm roaming-qm region=\n";

CollectionMetadata sample() {
    std::istringstream in(kSample);
    return parse_collection(in);
}

}  // namespace

TEST_CASE("collection file parses into the full model") {
    auto meta = sample();
    CHECK(meta.version == 3);
    CHECK(meta.repositories.size() == 3);
    REQUIRE(meta.indexers.count("stanford"));
    CHECK(meta.indexers.at("stanford").coverage == std::set<RepositoryId>{"r-stanford"});
    CHECK(meta.indexers.at("stanford").attrs ==
          std::vector<std::string>{"cost:low", "tier:2"});
    CHECK(meta.regions.at("east") ==
          std::set<std::string>{"cornell", "cmu", "east-qm"});
    CHECK(meta.qm_region.at("east-qm") == "east");
    CHECK(meta.qm_region.at("roaming-qm").empty());
}

TEST_CASE("collection round-trips through its text form") {
    auto meta = sample();
    std::istringstream in(format_collection(meta));
    CHECK(parse_collection(in) == meta);
}

TEST_CASE("validation rejects dangling references") {
    auto meta = sample();
    meta.indexers["cornell"].coverage.insert("r-ghost");
    CHECK_THROWS_WITH_AS(validate(meta),
                         "indexer cornell covers undeclared repository r-ghost",
                         std::runtime_error);

    meta = sample();
    meta.qm_region["east-qm"] = "west";
    CHECK_THROWS_AS(validate(meta), std::runtime_error);

    meta = sample();
    meta.regions["east"].insert("mystery-node");
    CHECK_THROWS_AS(validate(meta), std::runtime_error);

    CHECK_NOTHROW(validate(sample()));
}

TEST_CASE("repository lookup inverts the coverage map") {
    auto meta = sample();
    CHECK(indexers_for_repository(meta, "r-cmu") ==
          std::set<IndexerId>{"cornell", "cmu"});
    CHECK(indexers_for_repository(meta, "r-stanford") == std::set<IndexerId>{"stanford"});

    // declared but unindexed is an empty set; never-declared is an error
    meta.repositories.insert("r-orphan");
    CHECK(indexers_for_repository(meta, "r-orphan").empty());
    CHECK_THROWS_AS(indexers_for_repository(meta, "r-unknown"), std::runtime_error);
}

TEST_CASE("region filter intersects candidates with the QM's region") {
    auto meta = sample();
    std::set<IndexerId> all{"cornell", "stanford", "cmu"};

    auto filtered = region_filter(meta, "east-qm", all);
    CHECK(filtered == std::set<IndexerId>{"cornell", "cmu"});

    // result is always a subset of the candidates
    for (const auto& id : filtered) CHECK(all.count(id));
}

TEST_CASE("QMs without a region pass through or reject by policy") {
    auto meta = sample();
    std::set<IndexerId> all{"cornell", "stanford"};
    CHECK(region_filter(meta, "roaming-qm", all, RegionPolicy::PassThrough) == all);
    CHECK(region_filter(meta, "roaming-qm", all, RegionPolicy::Reject).empty());
    CHECK(region_filter(meta, "never-declared", all, RegionPolicy::PassThrough) == all);
}

TEST_CASE("qm report round-trips and rejects inconsistent content") {
    QmReport report;
    report.qm = "east-qm";
    report.entries["cornell"] = {100, 87, 1.9};
    report.entries["stanford"] = {50, 0, std::nullopt};

    std::istringstream in(format_qm_report(report));
    CHECK(parse_qm_report(in) == report);

    std::istringstream mixed(
        "qm=a indexer=x attempts=10 responses=5 mean_elapsed_s=1\n"
        "qm=b indexer=y attempts=10 responses=5 mean_elapsed_s=1\n");
    CHECK_THROWS_AS(parse_qm_report(mixed), std::runtime_error);

    std::istringstream excess(
        "qm=a indexer=x attempts=10 responses=11 mean_elapsed_s=1\n");
    CHECK_THROWS_AS(parse_qm_report(excess), std::runtime_error);
}

TEST_CASE("aggregated reports form the double-view matrix, latest wins") {
    CollectionService service(sample());

    QmReport first;
    first.qm = "east-qm";
    first.entries["cornell"] = {100, 99, 0.8};    // 0.99
    first.entries["stanford"] = {100, 87, 4.1};   // 0.87
    service.aggregate_qm_report(first, 10.0);

    QmReport second;
    second.qm = "roaming-qm";
    second.entries["cornell"] = {100, 95, 1.2};   // 0.95
    second.entries["stanford"] = {100, 53, 2.4};  // 0.53
    service.aggregate_qm_report(second, 11.0);

    auto cell = service.cell("east-qm", "cornell");
    REQUIRE(cell.has_value());
    CHECK(static_cast<double>(cell->entry.responses) /
              static_cast<double>(cell->entry.attempts) ==
          0.99);
    CHECK(static_cast<double>(service.cell("east-qm", "stanford")->entry.responses) / 100.0 ==
          0.87);
    CHECK(static_cast<double>(service.cell("roaming-qm", "cornell")->entry.responses) /
              100.0 ==
          0.95);
    CHECK(static_cast<double>(service.cell("roaming-qm", "stanford")->entry.responses) /
              100.0 ==
          0.53);

    // one indexer row carries every QM's view of it
    CHECK(service.matrix_view().at("cornell").size() == 2);

    // a fresher report from the same QM replaces its earlier cells
    QmReport update;
    update.qm = "east-qm";
    update.entries["cornell"] = {200, 150, 1.0};
    service.aggregate_qm_report(update, 12.0);
    CHECK(service.cell("east-qm", "cornell")->entry.attempts == 200);
    CHECK(service.cell("east-qm", "cornell")->received_at == 12.0);
    // other cells untouched
    CHECK(service.cell("east-qm", "stanford")->entry.attempts == 100);

    CHECK(service.reporting_qms() == std::vector<QmId>{"east-qm", "roaming-qm"});
}

TEST_CASE("reports about indexers the collection doesn't know are kept but flagged") {
    CollectionService service(sample());
    QmReport report;
    report.qm = "east-qm";
    report.entries["cornell"] = {10, 10, 0.5};
    report.entries["retired-indexer"] = {5, 1, 9.0};
    service.aggregate_qm_report(report, 1.0);

    CHECK(service.cell("east-qm", "cornell")->known_indexer);
    auto odd = service.cell("east-qm", "retired-indexer");
    REQUIRE(odd.has_value());
    CHECK_FALSE(odd->known_indexer);
    CHECK(odd->entry.responses == 1);
}

TEST_CASE("metadata snapshots are immutable; reload swaps atomically") {
    MetadataStore store;
    store.load(sample());
    auto before = store.snapshot();
    CHECK(before->version == 3);

    auto next = sample();
    next.version = 4;
    next.repositories.insert("r-new");
    store.load(std::move(next));

    CHECK(before->version == 3);  // old readers keep their view
    CHECK(before->repositories.count("r-new") == 0);
    auto after = store.snapshot();
    CHECK(after->version == 4);
    CHECK(after->repositories.count("r-new") == 1);
}

TEST_CASE("parser rejects malformed collection files") {
    auto reject = [](const char* text) {
        std::istringstream in(text);
        CHECK_THROWS_AS(parse_collection(in), std::runtime_error);
    };
    reject("version 1\nindexer x coverage=r1\n");            // undeclared repo
    reject("version 1\nrepository r1\nwhatsit x\n");         // unknown directive
    reject("version 1\nrepository r1\nqm a region=nowhere\n");
}
