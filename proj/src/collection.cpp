#include "qmed/collection.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace qmed::collection {

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

// "key=value" option tokens after the entity name
std::map<std::string, std::string> parse_opts(const std::vector<std::string>& tokens,
                                              std::size_t from, const std::string& ctx) {
    std::map<std::string, std::string> opts;
    for (std::size_t i = from; i < tokens.size(); ++i) {
        std::size_t eq = tokens[i].find('=');
        if (eq == std::string::npos || eq == 0) {
            throw std::runtime_error("collection metadata: bad option \"" + tokens[i] +
                                     "\" in " + ctx);
        }
        opts[tokens[i].substr(0, eq)] = tokens[i].substr(eq + 1);
    }
    return opts;
}

}  // namespace

CollectionMetadata parse_collection(std::istream& in) {
    CollectionMetadata meta;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto tokens = split(line, ' ');
        if (tokens.empty()) continue;
        const std::string& kind = tokens[0];
        auto fail = [&](const std::string& msg) {
            throw std::runtime_error("collection metadata line " + std::to_string(line_no) +
                                     ": " + msg);
        };
        if (kind == "version") {
            if (tokens.size() != 2) fail("version takes one value");
            meta.version = std::stoi(tokens[1]);
        } else if (kind == "repository") {
            if (tokens.size() != 2) fail("repository takes one id");
            meta.repositories.insert(tokens[1]);
        } else if (kind == "indexer") {
            if (tokens.size() < 2) fail("indexer needs an id");
            IndexerInfo info;
            auto opts = parse_opts(tokens, 2, "indexer " + tokens[1]);
            for (const auto& [k, v] : opts) {
                if (k == "coverage") {
                    auto repos = split(v, ',');
                    info.coverage.insert(repos.begin(), repos.end());
                } else if (k == "attrs") {
                    info.attrs = split(v, ',');
                } else {
                    fail("unknown indexer option \"" + k + "\"");
                }
            }
            meta.indexers[tokens[1]] = std::move(info);
        } else if (kind == "region") {
            if (tokens.size() < 2) fail("region needs an id");
            auto opts = parse_opts(tokens, 2, "region " + tokens[1]);
            std::set<std::string> members;
            if (auto it = opts.find("members"); it != opts.end()) {
                auto m = split(it->second, ',');
                members.insert(m.begin(), m.end());
            }
            meta.regions[tokens[1]] = std::move(members);
        } else if (kind == "qm") {
            if (tokens.size() < 2) fail("qm needs an id");
            auto opts = parse_opts(tokens, 2, "qm " + tokens[1]);
            if (auto it = opts.find("region"); it != opts.end()) {
                meta.qm_region[tokens[1]] = it->second;
            } else {
                meta.qm_region[tokens[1]] = "";  // declared, unassigned
            }
        } else {
            fail("unknown declaration \"" + kind + "\"");
        }
    }
    validate(meta);
    return meta;
}

CollectionMetadata load_collection_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open collection metadata file: " + path);
    return parse_collection(in);
}

void validate(const CollectionMetadata& meta) {
    for (const auto& [id, info] : meta.indexers) {
        for (const auto& repo : info.coverage) {
            if (!meta.repositories.count(repo)) {
                throw std::runtime_error("indexer " + id + " covers undeclared repository " +
                                         repo);
            }
        }
    }
    auto node_declared = [&](const std::string& node) {
        return meta.indexers.count(node) > 0 || meta.qm_region.count(node) > 0;
    };
    for (const auto& [qm, region] : meta.qm_region) {
        if (region.empty()) continue;
        auto it = meta.regions.find(region);
        if (it == meta.regions.end()) {
            throw std::runtime_error("qm " + qm + " assigned to undeclared region " + region);
        }
        for (const auto& node : it->second) {
            if (!node_declared(node)) {
                throw std::runtime_error("region " + region + " lists undeclared node " + node);
            }
        }
    }
}

std::string format_collection(const CollectionMetadata& meta) {
    std::ostringstream out;
    out << "version " << meta.version << '\n';
    for (const auto& repo : meta.repositories) out << "repository " << repo << '\n';
    for (const auto& [id, info] : meta.indexers) {
        out << "indexer " << id;
        if (!info.coverage.empty()) {
            out << " coverage=";
            bool first = true;
            for (const auto& r : info.coverage) {
                if (!first) out << ',';
                out << r;
                first = false;
            }
        }
        if (!info.attrs.empty()) {
            out << " attrs=";
            for (std::size_t i = 0; i < info.attrs.size(); ++i) {
                if (i) out << ',';
                out << info.attrs[i];
            }
        }
        out << '\n';
    }
    for (const auto& [id, members] : meta.regions) {
        out << "region " << id;
        if (!members.empty()) {
            out << " members=";
            bool first = true;
            for (const auto& m : members) {
                if (!first) out << ',';
                out << m;
                first = false;
            }
        }
        out << '\n';
    }
    for (const auto& [qm, region] : meta.qm_region) {
        out << "qm " << qm;
        if (!region.empty()) out << " region=" << region;
        out << '\n';
    }
    return out.str();
}

std::set<IndexerId> indexers_for_repository(const CollectionMetadata& meta,
                                            const RepositoryId& repo) {
    if (!meta.repositories.count(repo)) {
        throw std::runtime_error("unknown repository: " + repo);
    }
    std::set<IndexerId> out;
    for (const auto& [id, info] : meta.indexers) {
        if (info.coverage.count(repo)) out.insert(id);
    }
    return out;
}

std::set<IndexerId> region_filter(const CollectionMetadata& meta, const QmId& qm,
                                  const std::set<IndexerId>& candidates,
                                  RegionPolicy policy) {
    auto it = meta.qm_region.find(qm);
    if (it == meta.qm_region.end() || it->second.empty()) {
        return policy == RegionPolicy::PassThrough ? candidates : std::set<IndexerId>{};
    }
    auto region = meta.regions.find(it->second);
    if (region == meta.regions.end()) {
        return policy == RegionPolicy::PassThrough ? candidates : std::set<IndexerId>{};
    }
    std::set<IndexerId> out;
    for (const auto& c : candidates) {
        if (region->second.count(c)) out.insert(c);
    }
    return out;
}

std::string format_qm_report(const QmReport& report) {
    std::string out;
    for (const auto& [indexer, e] : report.entries) {
        out += "qm=" + report.qm;
        out += " indexer=" + indexer;
        out += " attempts=" + std::to_string(e.attempts);
        out += " responses=" + std::to_string(e.responses);
        out += " mean_elapsed_s=";
        out += e.mean_elapsed_s ? format_double(*e.mean_elapsed_s) : std::string("null");
        out += '\n';
    }
    return out;
}

QmReport parse_qm_report(std::istream& in) {
    QmReport report;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto raw = parse_record_line(line);
        std::map<std::string, std::string> fields(raw.begin(), raw.end());
        auto need = [&](const char* key) -> const std::string& {
            auto it = fields.find(key);
            if (it == fields.end()) {
                throw std::runtime_error("qm report line " + std::to_string(line_no) +
                                         ": missing " + key);
            }
            return it->second;
        };
        const std::string& qm = need("qm");
        if (report.qm.empty()) {
            report.qm = qm;
        } else if (report.qm != qm) {
            throw std::runtime_error("qm report line " + std::to_string(line_no) +
                                     ": mixes QMs " + report.qm + " and " + qm);
        }
        QmReport::Entry e;
        e.attempts = std::stoull(need("attempts"));
        e.responses = std::stoull(need("responses"));
        if (e.responses > e.attempts) {
            throw std::runtime_error("qm report line " + std::to_string(line_no) +
                                     ": responses exceed attempts");
        }
        const std::string& mean = need("mean_elapsed_s");
        if (mean != "null") {
            e.mean_elapsed_s = parse_double(mean, TraceErrorCode::MalformedNumber);
        }
        report.entries[need("indexer")] = e;
    }
    return report;
}

QmReport load_qm_report_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open qm report file: " + path);
    return parse_qm_report(in);
}

void CollectionService::aggregate_qm_report(const QmReport& report, double received_at) {
    for (const auto& [indexer, entry] : report.entries) {
        Cell cell;
        cell.entry = entry;
        cell.received_at = received_at;
        cell.known_indexer = meta_.indexers.count(indexer) > 0;
        cells_[indexer][report.qm] = cell;  // latest report wins
    }
}

std::optional<CollectionService::Cell> CollectionService::cell(const QmId& qm,
                                                               const IndexerId& indexer) const {
    auto row = cells_.find(indexer);
    if (row == cells_.end()) return std::nullopt;
    auto it = row->second.find(qm);
    if (it == row->second.end()) return std::nullopt;
    return it->second;
}

std::vector<QmId> CollectionService::reporting_qms() const {
    std::set<QmId> qms;
    for (const auto& [indexer, row] : cells_) {
        for (const auto& [qm, cell] : row) qms.insert(qm);
    }
    return {qms.begin(), qms.end()};
}

void MetadataStore::load(CollectionMetadata meta) {
    auto next = std::make_shared<const CollectionMetadata>(std::move(meta));
    std::lock_guard lock(mu_);
    current_ = std::move(next);
}

std::shared_ptr<const CollectionMetadata> MetadataStore::snapshot() const {
    std::lock_guard lock(mu_);
    return current_;
}

}  // namespace qmed::collection
