#include "qmed/domain.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace qmed {

std::string_view indexer_status_name(IndexerStatus s) {
    switch (s) {
        case IndexerStatus::Responded: return "responded";
        case IndexerStatus::TimedOut: return "timed_out";
        case IndexerStatus::Failed: return "failed";
    }
    return "unknown";
}

std::string_view trace_error_name(TraceErrorCode code) {
    switch (code) {
        case TraceErrorCode::MissingField: return "missing field";
        case TraceErrorCode::MalformedTimestamp: return "malformed timestamp";
        case TraceErrorCode::MalformedNumber: return "malformed number";
        case TraceErrorCode::MalformedFlag: return "malformed responded flag";
        case TraceErrorCode::NonPositiveTimeout: return "non-positive timeout";
        case TraceErrorCode::NegativeElapsed: return "negative elapsed";
        case TraceErrorCode::ElapsedExceedsTimeout: return "elapsed exceeds timeout";
        case TraceErrorCode::UnexpectedElapsed: return "elapsed on non-response";
        case TraceErrorCode::EmptyField: return "empty field";
    }
    return "unknown";
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, TraceErrorCode code_on_error) {
    double v = 0.0;
    const char* begin = s.data();
    const char* end = begin + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end || !std::isfinite(v)) {
        throw TraceError(code_on_error, std::string(trace_error_name(code_on_error)) +
                                            ": \"" + s + "\"");
    }
    return v;
}

RawRecord parse_record_line(const std::string& line) {
    RawRecord raw;
    std::size_t pos = 0;
    while (pos < line.size()) {
        std::size_t sp = line.find(' ', pos);
        if (sp == std::string::npos) sp = line.size();
        if (sp > pos) {
            std::string token = line.substr(pos, sp - pos);
            std::size_t eq = token.find('=');
            if (eq == std::string::npos || eq == 0) {
                throw TraceError(TraceErrorCode::MissingField,
                                 "token is not key=value: \"" + token + "\"");
            }
            raw.emplace_back(token.substr(0, eq), token.substr(eq + 1));
        }
        pos = sp + 1;
    }
    return raw;
}

namespace {

const std::string* find_field(const RawRecord& raw, std::string_view key) {
    for (const auto& [k, v] : raw) {
        if (k == key) return &v;
    }
    return nullptr;
}

const std::string& require_field(const RawRecord& raw, std::string_view key) {
    const std::string* v = find_field(raw, key);
    if (!v) {
        throw TraceError(TraceErrorCode::MissingField,
                         "missing field: " + std::string(key));
    }
    if (v->empty()) {
        throw TraceError(TraceErrorCode::EmptyField,
                         "empty field: " + std::string(key));
    }
    return *v;
}

}  // namespace

TraceRecord validate_trace_record(const RawRecord& raw) {
    TraceRecord rec;
    rec.obs.at = parse_double(require_field(raw, "ts"), TraceErrorCode::MalformedTimestamp);
    rec.obs.qm = require_field(raw, "qm");
    rec.obs.indexer = require_field(raw, "indexer");
    rec.query_id = require_field(raw, "query_id");
    rec.obs.timeout_s =
        parse_double(require_field(raw, "timeout_s"), TraceErrorCode::MalformedNumber);
    if (rec.obs.timeout_s <= 0.0) {
        throw TraceError(TraceErrorCode::NonPositiveTimeout,
                         "non-positive timeout: " + format_double(rec.obs.timeout_s));
    }

    const std::string& flag = require_field(raw, "responded");
    if (flag == "1") {
        rec.obs.responded = true;
    } else if (flag == "0") {
        rec.obs.responded = false;
    } else {
        throw TraceError(TraceErrorCode::MalformedFlag,
                         "responded must be 0 or 1, got \"" + flag + "\"");
    }

    const std::string* elapsed = find_field(raw, "elapsed_s");
    if (rec.obs.responded) {
        if (!elapsed || *elapsed == "null") {
            throw TraceError(TraceErrorCode::MissingField,
                             "missing field: elapsed_s on responded record");
        }
        double e = parse_double(*elapsed, TraceErrorCode::MalformedNumber);
        if (e <= 0.0) {
            throw TraceError(TraceErrorCode::NegativeElapsed,
                             "negative elapsed: " + format_double(e));
        }
        // elapsed == timeout is accepted: the reply landed on the limit
        if (e > rec.obs.timeout_s) {
            throw TraceError(TraceErrorCode::ElapsedExceedsTimeout,
                             "elapsed " + format_double(e) + " exceeds timeout " +
                                 format_double(rec.obs.timeout_s));
        }
        rec.obs.elapsed_s = e;
    } else {
        if (elapsed && *elapsed != "null") {
            throw TraceError(TraceErrorCode::UnexpectedElapsed,
                             "elapsed on non-response: \"" + *elapsed + "\"");
        }
    }
    return rec;
}

std::string format_trace_record(const TraceRecord& rec) {
    std::string out;
    out += "ts=" + format_double(rec.obs.at);
    out += " qm=" + rec.obs.qm;
    out += " indexer=" + rec.obs.indexer;
    out += " query_id=" + rec.query_id;
    out += " timeout_s=" + format_double(rec.obs.timeout_s);
    out += " responded=";
    out += rec.obs.responded ? '1' : '0';
    out += " elapsed_s=";
    out += rec.obs.elapsed_s ? format_double(*rec.obs.elapsed_s) : std::string("null");
    return out;
}

TraceRecord parse_trace_line(const std::string& line) {
    return validate_trace_record(parse_record_line(line));
}

TraceReadResult read_trace(std::istream& in) {
    TraceReadResult out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        try {
            out.records.push_back(parse_trace_line(line));
        } catch (const TraceError& e) {
            out.bad_lines.emplace_back(line_no, e.what());
        }
    }
    return out;
}

TraceReadResult read_trace_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace file: " + path);
    return read_trace(in);
}

void write_trace_file(const std::string& path, const std::vector<TraceRecord>& recs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write trace file: " + path);
    for (const auto& r : recs) out << format_trace_record(r) << '\n';
}

void PairTally::add(const Observation& obs) {
    ++attempts;
    if (obs.responded) {
        ++responses;
        elapsed_sum += obs.elapsed_s.value_or(0.0);
    }
}

std::optional<double> PairTally::response_ratio() const {
    if (attempts == 0) return std::nullopt;
    return static_cast<double>(responses) / static_cast<double>(attempts);
}

std::optional<double> PairTally::mean_elapsed() const {
    if (responses == 0) return std::nullopt;
    return elapsed_sum / static_cast<double>(responses);
}

std::map<PairKey, PairTally> pair_stats(const std::vector<TraceRecord>& trace) {
    std::map<PairKey, PairTally> stats;
    for (const auto& rec : trace) {
        stats[PairKey{rec.obs.qm, rec.obs.indexer}].add(rec.obs);
    }
    return stats;
}

}  // namespace qmed
