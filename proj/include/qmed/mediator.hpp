#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "qmed/collection.hpp"
#include "qmed/domain.hpp"
#include "qmed/predictors.hpp"

namespace qmed::mediator {

struct PredictorConfig {
    predictors::Method method = predictors::Method::SingleLastObs;
    predictors::Params params;
};

// Per-indexer performance metadata accumulated by one QM: raw tallies plus
// the availability and response-time predictor states. Updates are
// serialized; reads see a consistent entry.
class PerformanceStore {
public:
    explicit PerformanceStore(PredictorConfig cfg = {}) : cfg_(cfg) {}

    void record(const Observation& obs);

    std::optional<double> response_ratio(const IndexerId& indexer) const;
    std::optional<double> mean_response_time(const IndexerId& indexer) const;
    std::optional<double> predict(const IndexerId& indexer, predictors::Metric metric,
                                  double at) const;
    PairTally tally(const IndexerId& indexer) const;
    std::vector<IndexerId> indexers() const;
    PredictorConfig config() const { return cfg_; }

    collection::QmReport report(const QmId& qm) const;

private:
    struct Entry {
        PairTally tally;
        predictors::PredictorState availability;
        predictors::PredictorState response_time;
    };

    Entry& entry(const IndexerId& indexer);

    mutable std::mutex mu_;
    PredictorConfig cfg_;
    std::map<IndexerId, Entry> entries_;
};

struct TimeoutPolicy {
    double multiplier = 3.0;
    double floor_s = 5.0;
    double ceiling_s = 60.0;
};

// predicted response time scaled and clamped; ceiling when there is no data
double suggest_timeout(const PerformanceStore& store, const IndexerId& indexer,
                       const TimeoutPolicy& policy, double at);

// The chosen indexer chain per repository plus the timeout in force.
struct RoutingPlan {
    std::map<RepositoryId, std::vector<IndexerId>> assignments;  // primary first
    std::map<IndexerId, double> timeout_s;
    std::vector<RepositoryId> uncovered;  // no regional candidate at all

    bool operator==(const RoutingPlan&) const = default;
};

// cost/licensing/load tags are opaque; policies may veto on them
using AttributeFilter =
    std::function<bool(const IndexerId&, const std::vector<std::string>& attrs)>;

struct SelectionOptions {
    TimeoutPolicy timeouts;
    collection::RegionPolicy region_policy = collection::RegionPolicy::PassThrough;
    std::optional<RegionId> region_override;  // config-supplied region for this QM
    AttributeFilter attribute_filter;         // empty = accept all
};

// Candidates predicted unavailable sink below predicted-available ones;
// within a group, predicted response time ascending, no-data candidates
// after data-backed ones, all ties lexicographic by id. Deterministic for a
// fixed (query, metadata, store snapshot, now).
RoutingPlan select_indexers(const Query& query, const collection::CollectionMetadata& meta,
                            const QmId& self, const PerformanceStore& store, double now,
                            const SelectionOptions& options = {});

struct EncodedRequest {
    std::string protocol;
    Query query;
    std::string payload;  // wire text; empty for the internal identity encoding
};

using Translator = std::function<std::string(const Query&)>;

void register_translator(const std::string& tag, Translator fn);
EncodedRequest translate_query(const Query& query, const std::string& protocol_tag);
std::string sim_v1_payload(const Query& query);

struct TransportReply {
    IndexerStatus outcome = IndexerStatus::Failed;
    double elapsed_s = 0.0;  // valid when outcome == Responded
    double waited_s = 0.0;   // time the QM spent on this attempt
    std::vector<DocumentResult> results;
};

class Transport {
public:
    virtual ~Transport() = default;
    virtual TransportReply send(const IndexerId& indexer, const EncodedRequest& request,
                                double timeout_s, double now) = 0;
};

// Deterministic in-process transport for tests: scripted outcome per
// indexer, echoes configurable results.
class LoopbackTransport : public Transport {
public:
    struct Behavior {
        IndexerStatus outcome = IndexerStatus::Responded;
        double elapsed_s = 0.5;
        std::vector<DocumentResult> results;
    };

    void set_behavior(const IndexerId& indexer, Behavior b) { behaviors_[indexer] = std::move(b); }
    TransportReply send(const IndexerId& indexer, const EncodedRequest& request,
                        double timeout_s, double now) override;
    std::size_t calls() const { return calls_; }

private:
    std::map<IndexerId, Behavior> behaviors_;
    std::size_t calls_ = 0;
};

struct ExecutionResult {
    ResultSet results;
    std::vector<Observation> observations;  // one per dispatch attempt, time order
    std::set<RepositoryId> covered;
    std::vector<RepositoryId> uncovered;  // planned repos whose chain exhausted
    std::size_t failovers = 0;
    double wall_s = 0.0;  // slowest repository chain
    double wait_s = 0.0;  // summed per-indexer waits across attempts
};

// Fans the translated query out to each repository's primary concurrently;
// a timeout or failure walks that repository's alternates, at most
// max_failovers retries. Every attempt lands in the store as an Observation.
ExecutionResult execute(const RoutingPlan& plan, const Query& query, Transport& transport,
                        PerformanceStore& store, const QmId& self, int max_failovers,
                        const std::string& protocol_tag, double now);

// Union by handle, higher score wins (ties to the lexicographically smaller
// source indexer); descending score then handle order.
ResultSet merge_results(const std::vector<ResultSet>& partials);

struct MediatorConfig {
    QmId qm = "qm";
    PredictorConfig predictor;
    TimeoutPolicy timeouts;
    int max_failovers = 1;
    RegionId region;  // optional override of the collection's assignment
    std::string protocol = "sim-v1";
};

MediatorConfig parse_mediator_config(std::istream& in);
MediatorConfig load_mediator_config_file(const std::string& path);

// A query mediator bound to one QM identity: plans, executes, learns.
// Queries may be issued from several threads; per-query state is isolated
// and the store serializes its own updates.
class Mediator {
public:
    Mediator(MediatorConfig cfg, std::shared_ptr<const collection::CollectionMetadata> meta,
             std::shared_ptr<Transport> transport);

    RoutingPlan plan(const Query& query, double now) const;
    ExecutionResult search(const Query& query, double now);

    const PerformanceStore& store() const { return store_; }
    PerformanceStore& store() { return store_; }
    const MediatorConfig& config() const { return cfg_; }
    collection::QmReport report() const { return store_.report(cfg_.qm); }

private:
    MediatorConfig cfg_;
    std::shared_ptr<const collection::CollectionMetadata> meta_;
    std::shared_ptr<Transport> transport_;
    PerformanceStore store_;
};

}  // namespace qmed::mediator
