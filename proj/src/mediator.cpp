#include "qmed/mediator.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <sstream>

namespace qmed::mediator {

PerformanceStore::Entry& PerformanceStore::entry(const IndexerId& indexer) {
    auto it = entries_.find(indexer);
    if (it == entries_.end()) {
        Entry e;
        e.availability = predictors::make_predictor(cfg_.method, cfg_.params);
        e.response_time = predictors::make_predictor(cfg_.method, cfg_.params);
        it = entries_.emplace(indexer, std::move(e)).first;
    }
    return it->second;
}

void PerformanceStore::record(const Observation& obs) {
    std::lock_guard lock(mu_);
    Entry& e = entry(obs.indexer);
    e.tally.add(obs);
    // Concurrent queries can land observations slightly out of order; the
    // timed filters insist on monotone stamps, so the store clamps. A no-op
    // for any sequential flow.
    if (obs.responded) {
        e.availability =
            predictors::observe(e.availability, 1.0, std::max(obs.at, e.availability.last_at));
        e.response_time = predictors::observe(e.response_time, *obs.elapsed_s,
                                              std::max(obs.at, e.response_time.last_at));
    } else {
        e.availability =
            predictors::observe(e.availability, 0.0, std::max(obs.at, e.availability.last_at));
    }
}

std::optional<double> PerformanceStore::response_ratio(const IndexerId& indexer) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(indexer);
    if (it == entries_.end()) return std::nullopt;
    return it->second.tally.response_ratio();
}

std::optional<double> PerformanceStore::mean_response_time(const IndexerId& indexer) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(indexer);
    if (it == entries_.end()) return std::nullopt;
    return it->second.tally.mean_elapsed();
}

std::optional<double> PerformanceStore::predict(const IndexerId& indexer,
                                                predictors::Metric metric, double at) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(indexer);
    if (it == entries_.end()) return std::nullopt;
    const auto& state = metric == predictors::Metric::Availability
                            ? it->second.availability
                            : it->second.response_time;
    // same monotone clamp as record(): planning may race a landing batch
    return predictors::predict(state, std::max(at, state.last_at));
}

PairTally PerformanceStore::tally(const IndexerId& indexer) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(indexer);
    return it == entries_.end() ? PairTally{} : it->second.tally;
}

std::vector<IndexerId> PerformanceStore::indexers() const {
    std::lock_guard lock(mu_);
    std::vector<IndexerId> out;
    out.reserve(entries_.size());
    for (const auto& [id, e] : entries_) out.push_back(id);
    return out;
}

collection::QmReport PerformanceStore::report(const QmId& qm) const {
    std::lock_guard lock(mu_);
    collection::QmReport rep;
    rep.qm = qm;
    for (const auto& [id, e] : entries_) {
        collection::QmReport::Entry entry;
        entry.attempts = e.tally.attempts;
        entry.responses = e.tally.responses;
        entry.mean_elapsed_s = e.tally.mean_elapsed();
        rep.entries[id] = entry;
    }
    return rep;
}

double suggest_timeout(const PerformanceStore& store, const IndexerId& indexer,
                       const TimeoutPolicy& policy, double at) {
    if (!(policy.multiplier > 0.0) || !(policy.floor_s > 0.0) ||
        policy.floor_s > policy.ceiling_s) {
        throw std::invalid_argument("invalid timeout policy bounds");
    }
    auto predicted = store.predict(indexer, predictors::Metric::ResponseTime, at);
    if (!predicted) return policy.ceiling_s;
    return std::clamp(*predicted * policy.multiplier, policy.floor_s, policy.ceiling_s);
}

RoutingPlan select_indexers(const Query& query, const collection::CollectionMetadata& meta,
                            const QmId& self, const PerformanceStore& store, double now,
                            const SelectionOptions& options) {
    RoutingPlan plan;

    collection::CollectionMetadata const* effective = &meta;
    collection::CollectionMetadata patched;
    if (options.region_override) {
        patched = meta;
        patched.qm_region[self] = *options.region_override;
        effective = &patched;
    }

    struct Ranked {
        bool demoted;        // rounded availability prediction was 0
        bool no_time_data;
        double predicted_s;
        IndexerId id;
    };

    for (const auto& repo : query.scope) {
        std::set<IndexerId> candidates;
        try {
            candidates = indexers_for_repository(*effective, repo);
        } catch (const std::runtime_error&) {
            plan.uncovered.push_back(repo);
            continue;
        }
        candidates = region_filter(*effective, self, candidates, options.region_policy);
        if (options.attribute_filter) {
            std::set<IndexerId> kept;
            for (const auto& id : candidates) {
                auto it = effective->indexers.find(id);
                const auto& attrs =
                    it != effective->indexers.end() ? it->second.attrs : std::vector<std::string>{};
                if (options.attribute_filter(id, attrs)) kept.insert(id);
            }
            candidates = std::move(kept);
        }
        if (candidates.empty()) {
            plan.uncovered.push_back(repo);
            continue;
        }

        std::vector<Ranked> ranked;
        ranked.reserve(candidates.size());
        for (const auto& id : candidates) {
            Ranked r;
            r.id = id;
            auto avail = store.predict(id, predictors::Metric::Availability, now);
            r.demoted = avail && predictors::round_availability(*avail) == 0;
            auto time = store.predict(id, predictors::Metric::ResponseTime, now);
            r.no_time_data = !time.has_value();
            r.predicted_s = time.value_or(0.0);
            ranked.push_back(std::move(r));
        }
        std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
            if (a.demoted != b.demoted) return !a.demoted;
            if (a.no_time_data != b.no_time_data) return !a.no_time_data;
            if (!a.no_time_data && a.predicted_s != b.predicted_s) {
                return a.predicted_s < b.predicted_s;
            }
            return a.id < b.id;
        });

        auto& chain = plan.assignments[repo];
        for (const auto& r : ranked) {
            chain.push_back(r.id);
            if (!plan.timeout_s.count(r.id)) {
                plan.timeout_s[r.id] = suggest_timeout(store, r.id, options.timeouts, now);
            }
        }
    }
    return plan;
}

namespace {

std::mutex& registry_mutex() {
    static std::mutex mu;
    return mu;
}

std::map<std::string, Translator>& registry() {
    static std::map<std::string, Translator> reg = [] {
        std::map<std::string, Translator> r;
        r["internal"] = [](const Query&) { return std::string(); };
        r["sim-v1"] = sim_v1_payload;
        return r;
    }();
    return reg;
}

}  // namespace

std::string sim_v1_payload(const Query& query) {
    auto terms = query.terms;
    std::sort(terms.begin(), terms.end());
    std::string out = "q=";
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (i) out += ',';
        out += terms[i].first + ':' + terms[i].second;
    }
    out += "&scope=";
    bool first = true;
    for (const auto& repo : query.scope) {  // std::set is already ordered
        if (!first) out += ',';
        out += repo;
        first = false;
    }
    return out;
}

void register_translator(const std::string& tag, Translator fn) {
    std::lock_guard lock(registry_mutex());
    registry()[tag] = std::move(fn);
}

EncodedRequest translate_query(const Query& query, const std::string& protocol_tag) {
    Translator fn;
    {
        std::lock_guard lock(registry_mutex());
        auto it = registry().find(protocol_tag);
        if (it == registry().end()) {
            throw std::runtime_error("unknown protocol tag: \"" + protocol_tag + "\"");
        }
        fn = it->second;
    }
    return EncodedRequest{protocol_tag, query, fn(query)};
}

TransportReply LoopbackTransport::send(const IndexerId& indexer, const EncodedRequest&,
                                       double timeout_s, double) {
    ++calls_;
    auto it = behaviors_.find(indexer);
    if (it == behaviors_.end()) {
        return TransportReply{IndexerStatus::Failed, 0.0, 0.0, {}};
    }
    const Behavior& b = it->second;
    TransportReply reply;
    reply.outcome = b.outcome;
    switch (b.outcome) {
        case IndexerStatus::Responded:
            if (b.elapsed_s > timeout_s) {
                reply.outcome = IndexerStatus::TimedOut;
                reply.waited_s = timeout_s;
            } else {
                reply.elapsed_s = b.elapsed_s;
                reply.waited_s = b.elapsed_s;
                reply.results = b.results;
                for (auto& r : reply.results) r.source_indexer = indexer;
            }
            break;
        case IndexerStatus::TimedOut:
            reply.waited_s = timeout_s;
            break;
        case IndexerStatus::Failed:
            reply.waited_s = 0.0;
            break;
    }
    return reply;
}

namespace {

struct Attempt {
    RepositoryId repo;
    Observation obs;
    TransportReply reply;
};

struct ChainOutcome {
    std::vector<Attempt> attempts;
    bool covered = false;
    double duration_s = 0.0;
};

IndexerStatus better_status(IndexerStatus a, IndexerStatus b) {
    auto rank = [](IndexerStatus s) {
        switch (s) {
            case IndexerStatus::Responded: return 0;
            case IndexerStatus::TimedOut: return 1;
            case IndexerStatus::Failed: return 2;
        }
        return 3;
    };
    return rank(a) <= rank(b) ? a : b;
}

}  // namespace

ResultSet merge_results(const std::vector<ResultSet>& partials) {
    ResultSet merged;
    std::map<std::string, DocumentResult> by_handle;
    for (const auto& part : partials) {
        for (const auto& doc : part.results) {
            auto [it, inserted] = by_handle.emplace(doc.handle, doc);
            if (!inserted) {
                DocumentResult& kept = it->second;
                if (doc.score > kept.score ||
                    (doc.score == kept.score && doc.source_indexer < kept.source_indexer)) {
                    kept = doc;
                }
            }
        }
        for (const auto& [id, status] : part.per_indexer_status) {
            auto [it, inserted] = merged.per_indexer_status.emplace(id, status);
            if (!inserted) it->second = better_status(it->second, status);
        }
        for (const auto& [id, elapsed] : part.elapsed_s) {
            auto [it, inserted] = merged.elapsed_s.emplace(id, elapsed);
            if (!inserted) it->second = std::min(it->second, elapsed);
        }
    }
    merged.results.reserve(by_handle.size());
    for (const auto& [handle, doc] : by_handle) merged.results.push_back(doc);
    std::sort(merged.results.begin(), merged.results.end(),
              [](const DocumentResult& a, const DocumentResult& b) {
                  if (a.score != b.score) return a.score > b.score;
                  return a.handle < b.handle;
              });
    return merged;
}

ExecutionResult execute(const RoutingPlan& plan, const Query& query, Transport& transport,
                        PerformanceStore& store, const QmId& self, int max_failovers,
                        const std::string& protocol_tag, double now) {
    EncodedRequest request = translate_query(query, protocol_tag);

    auto run_chain = [&](const RepositoryId& repo,
                         const std::vector<IndexerId>& chain) -> ChainOutcome {
        ChainOutcome outcome;
        double t = now;
        for (std::size_t i = 0; i < chain.size(); ++i) {
            if (static_cast<int>(i) > max_failovers) break;
            const IndexerId& indexer = chain[i];
            double timeout = plan.timeout_s.at(indexer);
            TransportReply reply = transport.send(indexer, request, timeout, t);

            Attempt attempt;
            attempt.repo = repo;
            attempt.obs.at = t;
            attempt.obs.qm = self;
            attempt.obs.indexer = indexer;
            attempt.obs.timeout_s = timeout;
            attempt.obs.responded = reply.outcome == IndexerStatus::Responded;
            if (attempt.obs.responded) attempt.obs.elapsed_s = reply.elapsed_s;
            attempt.reply = std::move(reply);

            t += attempt.reply.waited_s;
            bool responded = attempt.obs.responded;
            outcome.attempts.push_back(std::move(attempt));
            if (responded) {
                outcome.covered = true;
                break;
            }
        }
        outcome.duration_s = t - now;
        return outcome;
    };

    // fan out one chain per repository; alternates within a chain stay
    // sequential (no hedging)
    std::vector<std::pair<RepositoryId, std::future<ChainOutcome>>> futures;
    futures.reserve(plan.assignments.size());
    for (const auto& [repo, chain] : plan.assignments) {
        futures.emplace_back(repo, std::async(std::launch::async, run_chain, repo, chain));
    }

    ExecutionResult result;
    result.uncovered = plan.uncovered;
    std::vector<Attempt> attempts;
    for (auto& [repo, future] : futures) {
        ChainOutcome outcome = future.get();
        if (outcome.covered) {
            result.covered.insert(repo);
        } else {
            result.uncovered.push_back(repo);
        }
        if (!outcome.attempts.empty()) {
            result.failovers += outcome.attempts.size() - 1;
        }
        result.wall_s = std::max(result.wall_s, outcome.duration_s);
        for (auto& a : outcome.attempts) attempts.push_back(std::move(a));
    }

    // settle everything after the fan-out joins: observations are applied in
    // time order so the timed predictors see monotone stamps
    std::stable_sort(attempts.begin(), attempts.end(),
                     [](const Attempt& a, const Attempt& b) { return a.obs.at < b.obs.at; });

    std::vector<ResultSet> partials;
    partials.reserve(attempts.size());
    for (const auto& a : attempts) {
        store.record(a.obs);
        result.observations.push_back(a.obs);
        result.wait_s += a.reply.waited_s;

        ResultSet part;
        part.per_indexer_status[a.obs.indexer] = a.reply.outcome;
        if (a.obs.responded) {
            part.results = a.reply.results;
            part.elapsed_s[a.obs.indexer] = *a.obs.elapsed_s;
        }
        partials.push_back(std::move(part));
    }
    result.results = merge_results(partials);
    return result;
}

MediatorConfig parse_mediator_config(std::istream& in) {
    MediatorConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw std::runtime_error("mediator config line " + std::to_string(line_no) +
                                     ": expected key=value");
        }
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        if (key == "qm") {
            cfg.qm = value;
        } else if (key == "predictor") {
            cfg.predictor.method = predictors::method_from_name(value);
        } else if (key == "alpha") {
            cfg.predictor.params.alpha = parse_double(value, TraceErrorCode::MalformedNumber);
        } else if (key == "tau") {
            cfg.predictor.params.tau = parse_double(value, TraceErrorCode::MalformedNumber);
        } else if (key == "lambda") {
            cfg.predictor.params.lambda = parse_double(value, TraceErrorCode::MalformedNumber);
        } else if (key == "timeout_multiplier") {
            cfg.timeouts.multiplier = parse_double(value, TraceErrorCode::MalformedNumber);
        } else if (key == "timeout_floor") {
            cfg.timeouts.floor_s = parse_double(value, TraceErrorCode::MalformedNumber);
        } else if (key == "timeout_ceiling") {
            cfg.timeouts.ceiling_s = parse_double(value, TraceErrorCode::MalformedNumber);
        } else if (key == "max_failovers") {
            cfg.max_failovers = std::stoi(value);
        } else if (key == "region") {
            cfg.region = value;
        } else if (key == "protocol") {
            cfg.protocol = value;
        } else {
            throw std::runtime_error("mediator config line " + std::to_string(line_no) +
                                     ": unknown key \"" + key + "\"");
        }
    }
    return cfg;
}

MediatorConfig load_mediator_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open mediator config file: " + path);
    return parse_mediator_config(in);
}

Mediator::Mediator(MediatorConfig cfg,
                   std::shared_ptr<const collection::CollectionMetadata> meta,
                   std::shared_ptr<Transport> transport)
    : cfg_(std::move(cfg)),
      meta_(std::move(meta)),
      transport_(std::move(transport)),
      store_(cfg_.predictor) {}

RoutingPlan Mediator::plan(const Query& query, double now) const {
    SelectionOptions options;
    options.timeouts = cfg_.timeouts;
    if (!cfg_.region.empty()) options.region_override = cfg_.region;
    return select_indexers(query, *meta_, cfg_.qm, store_, now, options);
}

ExecutionResult Mediator::search(const Query& query, double now) {
    RoutingPlan routing = plan(query, now);
    return execute(routing, query, *transport_, store_, cfg_.qm, cfg_.max_failovers,
                   cfg_.protocol, now);
}

}  // namespace qmed::mediator
