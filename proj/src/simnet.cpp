#include "qmed/simnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <queue>
#include <sstream>

namespace qmed::simnet {

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

double opt_double(const std::map<std::string, std::string>& opts, const std::string& key,
                  double fallback) {
    auto it = opts.find(key);
    if (it == opts.end()) return fallback;
    return parse_double(it->second, TraceErrorCode::MalformedNumber);
}

std::map<std::string, std::string> parse_opts(const std::vector<std::string>& tokens,
                                              std::size_t from, std::size_t line_no) {
    std::map<std::string, std::string> opts;
    for (std::size_t i = from; i < tokens.size(); ++i) {
        std::size_t eq = tokens[i].find('=');
        if (eq == std::string::npos || eq == 0) {
            throw std::runtime_error("scenario line " + std::to_string(line_no) +
                                     ": bad option \"" + tokens[i] + "\"");
        }
        opts[tokens[i].substr(0, eq)] = tokens[i].substr(eq + 1);
    }
    return opts;
}

}  // namespace

ScenarioConfig parse_scenario(std::istream& in) {
    ScenarioConfig config;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto tokens = split(line, ' ');
        if (tokens.empty()) continue;
        const std::string& kind = tokens[0];
        auto fail = [&](const std::string& msg) {
            throw std::runtime_error("scenario line " + std::to_string(line_no) + ": " + msg);
        };
        if (kind == "horizon") {
            if (tokens.size() != 2) fail("horizon takes one value");
            config.horizon_s = parse_double(tokens[1], TraceErrorCode::MalformedNumber);
        } else if (kind == "seed") {
            if (tokens.size() != 2) fail("seed takes one value");
            config.seed = std::stoull(tokens[1]);
        } else if (kind == "qm") {
            if (tokens.size() < 2) fail("qm needs an id");
            auto opts = parse_opts(tokens, 2, line_no);
            Workload w;
            w.arrival_rate_hz = opt_double(opts, "rate", w.arrival_rate_hz);
            w.timeout_s = opt_double(opts, "timeout", w.timeout_s);
            if (auto it = opts.find("mix"); it != opts.end()) {
                for (const auto& item : split(it->second, ',')) {
                    std::size_t colon = item.rfind(':');
                    if (colon == std::string::npos) fail("mix entry needs indexer:weight");
                    w.mix[item.substr(0, colon)] =
                        parse_double(item.substr(colon + 1), TraceErrorCode::MalformedNumber);
                }
            }
            config.workloads[tokens[1]] = std::move(w);
        } else if (kind == "indexer") {
            if (tokens.size() < 2) fail("indexer needs an id");
            auto opts = parse_opts(tokens, 2, line_no);
            IndexerModel m;
            m.service.median_s = opt_double(opts, "service_median", m.service.median_s);
            m.service.sigma = opt_double(opts, "service_sigma", m.service.sigma);
            m.overhead_s = opt_double(opts, "overhead", m.overhead_s);
            m.availability.mean_up_s = opt_double(opts, "mean_up", m.availability.mean_up_s);
            m.availability.mean_down_s =
                opt_double(opts, "mean_down", m.availability.mean_down_s);
            config.indexer_models[tokens[1]] = m;
        } else if (kind == "link") {
            if (tokens.size() < 3) fail("link needs qm and indexer ids");
            auto opts = parse_opts(tokens, 3, line_no);
            LinkModel l;
            l.fwd.median_s = opt_double(opts, "fwd_median", 0.0);
            l.fwd.sigma = opt_double(opts, "fwd_sigma", 0.0);
            l.fwd_loss = opt_double(opts, "fwd_loss", 0.0);
            l.rev.median_s = opt_double(opts, "rev_median", 0.0);
            l.rev.sigma = opt_double(opts, "rev_sigma", 0.0);
            l.rev_loss = opt_double(opts, "rev_loss", 0.0);
            config.links[{tokens[1], tokens[2]}] = l;
        } else {
            fail("unknown declaration \"" + kind + "\"");
        }
    }
    validate_scenario(config);
    return config;
}

ScenarioConfig load_scenario_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario file: " + path);
    return parse_scenario(in);
}

void validate_scenario(const ScenarioConfig& config) {
    auto fail = [](const std::string& msg) { throw std::runtime_error("scenario: " + msg); };
    if (!(config.horizon_s > 0.0)) fail("horizon must be > 0");
    for (const auto& [qm, w] : config.workloads) {
        if (!(w.arrival_rate_hz > 0.0)) fail("qm " + qm + ": rate must be > 0");
        if (!(w.timeout_s > 0.0)) fail("qm " + qm + ": timeout must be > 0");
        if (w.mix.empty()) fail("qm " + qm + ": empty indexer mix");
        for (const auto& [indexer, weight] : w.mix) {
            if (!(weight > 0.0)) fail("qm " + qm + ": mix weight must be > 0");
            if (!config.indexer_models.count(indexer)) {
                fail("qm " + qm + " targets undeclared indexer " + indexer);
            }
            if (!config.links.count({qm, indexer})) {
                fail("no link declared for pair (" + qm + ", " + indexer + ")");
            }
        }
    }
    for (const auto& [id, m] : config.indexer_models) {
        if (m.service.median_s < 0.0 || m.service.sigma < 0.0 || m.overhead_s < 0.0) {
            fail("indexer " + id + ": negative service parameter");
        }
        if (!(m.availability.mean_up_s > 0.0)) fail("indexer " + id + ": mean_up must be > 0");
        if (m.availability.mean_down_s < 0.0) {
            fail("indexer " + id + ": mean_down must be >= 0");
        }
    }
    for (const auto& [pair, l] : config.links) {
        if (l.fwd.median_s < 0.0 || l.rev.median_s < 0.0 || l.fwd.sigma < 0.0 ||
            l.rev.sigma < 0.0) {
            fail("link (" + pair.first + ", " + pair.second + "): negative latency parameter");
        }
        if (l.fwd_loss < 0.0 || l.fwd_loss > 1.0 || l.rev_loss < 0.0 || l.rev_loss > 1.0) {
            fail("link (" + pair.first + ", " + pair.second + "): loss outside [0,1]");
        }
    }
}

AvailabilityTimeline::AvailabilityTimeline(const AvailabilityModel& model, std::uint64_t seed)
    : model_(model), rng_(seed) {}

void AvailabilityTimeline::extend(double t) {
    while (generated_until_ <= t) {
        bool up_phase = boundaries_.size() % 2 == 0;
        double mean = up_phase ? model_.mean_up_s : model_.mean_down_s;
        double dwell = rng_.exponential(mean);
        generated_until_ += dwell;
        boundaries_.push_back(generated_until_);
    }
}

bool AvailabilityTimeline::is_up(double t) {
    if (model_.mean_down_s <= 0.0) return true;
    std::lock_guard lock(mu_);
    extend(t);
    auto it = std::upper_bound(boundaries_.begin(), boundaries_.end(), t);
    std::size_t phase = static_cast<std::size_t>(it - boundaries_.begin());
    return phase % 2 == 0;
}

namespace {

struct AttemptDraws {
    bool delivered = false;       // forward trip survived and indexer was up
    bool reply_arrived = false;   // return trip survived too
    double arrival_at = 0.0;
    double service_s = 0.0;
    double elapsed_s = 0.0;
};

// One QM→indexer attempt against the link and indexer models. Draw order is
// fixed: forward loss, forward latency, service, return loss, return latency.
AttemptDraws sample_attempt(Rng& rng, const LinkModel& link, const IndexerModel& model,
                            AvailabilityTimeline& timeline, double sent_at) {
    AttemptDraws d;
    if (rng.bernoulli(link.fwd_loss)) return d;
    double fwd = rng.lognormal(link.fwd.median_s, link.fwd.sigma);
    d.arrival_at = sent_at + fwd;
    if (!timeline.is_up(d.arrival_at)) return d;
    d.delivered = true;
    d.service_s = rng.lognormal(model.service.median_s, model.service.sigma);
    if (rng.bernoulli(link.rev_loss)) return d;
    double rev = rng.lognormal(link.rev.median_s, link.rev.sigma);
    d.reply_arrived = true;
    d.elapsed_s = fwd + model.overhead_s + d.service_s + rev;
    return d;
}

}  // namespace

SimulationOutput run_simulation(const ScenarioConfig& config) {
    validate_scenario(config);
    SimulationOutput out;
    Rng rng(config.seed);

    // derived-availability streams: the phase sequences are functions of the
    // seed alone, not of arrival interleaving
    std::map<IndexerId, std::unique_ptr<AvailabilityTimeline>> timelines;
    for (const auto& [id, model] : config.indexer_models) {
        std::uint64_t s = hash_mix(hash_mix(config.seed, std::string_view("avail")), id);
        timelines.emplace(id, std::make_unique<AvailabilityTimeline>(model.availability, s));
    }

    struct QmState {
        QmId id;
        const Workload* workload;
        std::vector<std::pair<IndexerId, double>> cumulative_mix;
        double total_weight = 0.0;
    };
    std::vector<QmState> qms;
    for (const auto& [id, w] : config.workloads) {
        QmState s;
        s.id = id;
        s.workload = &w;
        double acc = 0.0;
        for (const auto& [indexer, weight] : w.mix) {
            acc += weight;
            s.cumulative_mix.emplace_back(indexer, acc);
        }
        s.total_weight = acc;
        qms.push_back(std::move(s));
    }

    struct Event {
        double t;
        std::size_t qm_idx;
        bool operator>(const Event& other) const {
            if (t != other.t) return t > other.t;
            return qm_idx > other.qm_idx;
        }
    };
    std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue;
    for (std::size_t i = 0; i < qms.size(); ++i) {
        double first = rng.exponential(1.0 / qms[i].workload->arrival_rate_hz);
        if (first <= config.horizon_s) queue.push({first, i});
    }

    std::uint64_t query_counter = 0;
    while (!queue.empty()) {
        Event ev = queue.top();
        queue.pop();
        QmState& qm = qms[ev.qm_idx];

        // weighted indexer pick
        double u = rng.uniform() * qm.total_weight;
        const IndexerId* chosen = &qm.cumulative_mix.back().first;
        for (const auto& [indexer, acc] : qm.cumulative_mix) {
            if (u < acc) {
                chosen = &indexer;
                break;
            }
        }

        const LinkModel& link = config.links.at({qm.id, *chosen});
        const IndexerModel& model = config.indexer_models.at(*chosen);
        AttemptDraws draws =
            sample_attempt(rng, link, model, *timelines.at(*chosen), ev.t);

        TraceRecord rec;
        rec.obs.at = ev.t;
        rec.obs.qm = qm.id;
        rec.obs.indexer = *chosen;
        rec.obs.timeout_s = qm.workload->timeout_s;
        rec.query_id = "q" + std::to_string(++query_counter);
        if (draws.reply_arrived && draws.elapsed_s <= qm.workload->timeout_s) {
            rec.obs.responded = true;
            rec.obs.elapsed_s = draws.elapsed_s;
        }
        out.qm_view.push_back(std::move(rec));

        if (draws.delivered) {
            out.indexer_view.push_back({draws.arrival_at, *chosen, qm.id, draws.service_s});
        }

        double next = ev.t + rng.exponential(1.0 / qm.workload->arrival_rate_hz);
        if (next <= config.horizon_s) queue.push({next, ev.qm_idx});
    }

    std::stable_sort(out.indexer_view.begin(), out.indexer_view.end(),
                     [](const ServiceRecord& a, const ServiceRecord& b) {
                         if (a.at != b.at) return a.at < b.at;
                         if (a.indexer != b.indexer) return a.indexer < b.indexer;
                         return a.calling_qm < b.calling_qm;
                     });
    return out;
}

std::map<PairKey, PairTally> qm_view_stats(const std::vector<TraceRecord>& trace) {
    return pair_stats(trace);
}

double ServiceTally::variance() const {
    if (count < 2) return 0.0;
    double m = mean();
    return (sum_sq - static_cast<double>(count) * m * m) / static_cast<double>(count - 1);
}

std::map<std::pair<IndexerId, QmId>, ServiceTally> indexer_view_stats(
    const std::vector<ServiceRecord>& records) {
    std::map<std::pair<IndexerId, QmId>, ServiceTally> out;
    for (const auto& rec : records) {
        ServiceTally& t = out[{rec.indexer, rec.calling_qm}];
        ++t.count;
        t.sum += rec.service_s;
        t.sum_sq += rec.service_s * rec.service_s;
    }
    return out;
}

std::string format_service_record(const ServiceRecord& rec) {
    std::string out;
    out += "ts=" + format_double(rec.at);
    out += " indexer=" + rec.indexer;
    out += " calling_qm=" + rec.calling_qm;
    out += " service_s=" + format_double(rec.service_s);
    return out;
}

ServiceRecord parse_service_record_line(const std::string& line) {
    auto raw = parse_record_line(line);
    std::map<std::string, std::string> fields(raw.begin(), raw.end());
    auto need = [&](const char* key) -> const std::string& {
        auto it = fields.find(key);
        if (it == fields.end()) {
            throw TraceError(TraceErrorCode::MissingField,
                             "missing field: " + std::string(key));
        }
        return it->second;
    };
    ServiceRecord rec;
    rec.at = parse_double(need("ts"), TraceErrorCode::MalformedTimestamp);
    rec.indexer = need("indexer");
    rec.calling_qm = need("calling_qm");
    rec.service_s = parse_double(need("service_s"), TraceErrorCode::MalformedNumber);
    return rec;
}

ServiceReadResult read_service_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open indexer-view file: " + path);
    ServiceReadResult out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        try {
            out.records.push_back(parse_service_record_line(line));
        } catch (const TraceError& e) {
            out.bad_lines.emplace_back(line_no, e.what());
        }
    }
    return out;
}

void write_service_file(const std::string& path, const std::vector<ServiceRecord>& recs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write indexer-view file: " + path);
    for (const auto& r : recs) out << format_service_record(r) << '\n';
}

SimTransport::SimTransport(ScenarioConfig config, QmId qm,
                           std::shared_ptr<const collection::CollectionMetadata> meta,
                           int results_per_repo)
    : config_(std::move(config)),
      qm_(std::move(qm)),
      meta_(std::move(meta)),
      results_per_repo_(results_per_repo) {
    for (const auto& [id, model] : config_.indexer_models) {
        std::uint64_t s = hash_mix(hash_mix(config_.seed, std::string_view("avail")), id);
        timelines_.emplace(id, std::make_unique<AvailabilityTimeline>(model.availability, s));
    }
}

mediator::TransportReply SimTransport::send(const IndexerId& indexer,
                                            const mediator::EncodedRequest& request,
                                            double timeout_s, double now) {
    auto link_it = config_.links.find({qm_, indexer});
    auto model_it = config_.indexer_models.find(indexer);
    if (link_it == config_.links.end() || model_it == config_.indexer_models.end()) {
        return mediator::TransportReply{IndexerStatus::Failed, 0.0, 0.0, {}};
    }

    std::uint64_t attempt_seed = config_.seed;
    attempt_seed = hash_mix(attempt_seed, qm_);
    attempt_seed = hash_mix(attempt_seed, indexer);
    attempt_seed = hash_mix(attempt_seed, request.query.query_id);
    std::uint64_t time_bits;
    static_assert(sizeof(time_bits) == sizeof(now));
    std::memcpy(&time_bits, &now, sizeof(time_bits));
    attempt_seed = hash_mix(attempt_seed, time_bits);
    Rng rng(attempt_seed);

    AttemptDraws draws =
        sample_attempt(rng, link_it->second, model_it->second, *timelines_.at(indexer), now);

    mediator::TransportReply reply;
    if (!draws.reply_arrived || draws.elapsed_s > timeout_s) {
        reply.outcome = IndexerStatus::TimedOut;
        reply.waited_s = timeout_s;
        return reply;
    }
    reply.outcome = IndexerStatus::Responded;
    reply.elapsed_s = draws.elapsed_s;
    reply.waited_s = draws.elapsed_s;

    // fabricate stable per-repository results: replicas covering the same
    // repository return the same handles, which exercises deduplication
    if (meta_) {
        auto info = meta_->indexers.find(indexer);
        if (info != meta_->indexers.end()) {
            for (const auto& repo : request.query.scope) {
                if (!info->second.coverage.count(repo)) continue;
                for (int j = 0; j < results_per_repo_; ++j) {
                    DocumentResult doc;
                    doc.handle = repo + "/doc" + std::to_string(j + 1);
                    std::uint64_t h = hash_mix(hash_mix(hash_mix(0x9e3779b97f4a7c15ULL,
                                                                 request.query.query_id),
                                                        repo),
                                               static_cast<std::uint64_t>(j));
                    doc.score = 0.5 + static_cast<double>(h % 1000) / 2000.0;
                    doc.source_indexer = indexer;
                    reply.results.push_back(std::move(doc));
                }
            }
        }
    }
    return reply;
}

}  // namespace qmed::simnet
