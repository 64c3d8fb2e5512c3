#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qmed/collection.hpp"
#include "qmed/domain.hpp"
#include "qmed/mediator.hpp"
#include "qmed/rng.hpp"

namespace qmed::simnet {

// lognormal parameterized by median and sigma; median 0 collapses to no
// delay, sigma 0 to a constant
struct LatencyDist {
    double median_s = 0.0;
    double sigma = 0.0;

    bool operator==(const LatencyDist&) const = default;
};

// The two directions are independently parameterized; asymmetry is the point.
struct LinkModel {
    LatencyDist fwd;
    LatencyDist rev;
    double fwd_loss = 0.0;
    double rev_loss = 0.0;

    bool operator==(const LinkModel&) const = default;
};

// Two-state alternating renewal process, exponential dwell times.
// mean_down_s == 0 means the indexer never goes down.
struct AvailabilityModel {
    double mean_up_s = 3600.0;
    double mean_down_s = 0.0;

    bool operator==(const AvailabilityModel&) const = default;
};

struct IndexerModel {
    LatencyDist service;     // processing time, caller-independent
    double overhead_s = 0.0; // protocol receive/send constant
    AvailabilityModel availability;

    bool operator==(const IndexerModel&) const = default;
};

struct Workload {
    double arrival_rate_hz = 0.1;
    std::map<IndexerId, double> mix;  // target indexer weights
    double timeout_s = 20.0;

    bool operator==(const Workload&) const = default;
};

struct ScenarioConfig {
    std::map<QmId, Workload> workloads;
    std::map<IndexerId, IndexerModel> indexer_models;
    std::map<std::pair<QmId, IndexerId>, LinkModel> links;
    double horizon_s = 3600.0;
    std::uint64_t seed = 1;

    bool operator==(const ScenarioConfig&) const = default;
};

ScenarioConfig parse_scenario(std::istream& in);
ScenarioConfig load_scenario_file(const std::string& path);
void validate_scenario(const ScenarioConfig& config);

// indexer-view companion record: processing time only, no network
struct ServiceRecord {
    double at = 0.0;  // arrival at the indexer
    IndexerId indexer;
    QmId calling_qm;
    double service_s = 0.0;

    bool operator==(const ServiceRecord&) const = default;
};

std::string format_service_record(const ServiceRecord& rec);
ServiceRecord parse_service_record_line(const std::string& line);

struct ServiceReadResult {
    std::vector<ServiceRecord> records;
    std::vector<std::pair<std::size_t, std::string>> bad_lines;
};

ServiceReadResult read_service_file(const std::string& path);
void write_service_file(const std::string& path, const std::vector<ServiceRecord>& recs);

struct SimulationOutput {
    std::vector<TraceRecord> qm_view;
    std::vector<ServiceRecord> indexer_view;
};

// Deterministic event-driven run: per attempt, sample forward delivery,
// check the indexer's up/down phase on arrival, sample service and return,
// and mark responded iff the reply lands within the timeout. One QM-view
// record per attempt; one indexer-view record per serviced request.
SimulationOutput run_simulation(const ScenarioConfig& config);

// same ratio/mean definitions as the mediator store (one implementation)
std::map<PairKey, PairTally> qm_view_stats(const std::vector<TraceRecord>& trace);

struct ServiceTally {
    std::uint64_t count = 0;
    double sum = 0.0;
    double sum_sq = 0.0;

    double mean() const { return sum / static_cast<double>(count); }
    double variance() const;
};

// keyed (indexer, calling qm)
std::map<std::pair<IndexerId, QmId>, ServiceTally> indexer_view_stats(
    const std::vector<ServiceRecord>& records);

// Alternating up/down phase sequence, generated lazily from its own seeded
// stream; the sequence is a pure function of the seed, so query order never
// perturbs it.
class AvailabilityTimeline {
public:
    AvailabilityTimeline(const AvailabilityModel& model, std::uint64_t seed);
    bool is_up(double t);

private:
    void extend(double t);

    AvailabilityModel model_;
    Rng rng_;
    std::vector<double> boundaries_;  // phase flip times; phase 0 (up) starts at 0
    double generated_until_ = 0.0;
    std::mutex mu_;
};

// Simulated network/indexer transport for one QM, driving the mediator
// against a scenario's models. Per-attempt draws come from streams keyed by
// (seed, qm, indexer, query, send time) so concurrent repository chains
// cannot perturb each other.
class SimTransport : public mediator::Transport {
public:
    SimTransport(ScenarioConfig config, QmId qm,
                 std::shared_ptr<const collection::CollectionMetadata> meta,
                 int results_per_repo = 3);

    mediator::TransportReply send(const IndexerId& indexer,
                                  const mediator::EncodedRequest& request, double timeout_s,
                                  double now) override;

private:
    ScenarioConfig config_;
    QmId qm_;
    std::shared_ptr<const collection::CollectionMetadata> meta_;
    int results_per_repo_;
    std::map<IndexerId, std::unique_ptr<AvailabilityTimeline>> timelines_;
};

}  // namespace qmed::simnet
