#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qmed {

using QmId = std::string;
using IndexerId = std::string;
using RepositoryId = std::string;
using RegionId = std::string;

// Internal post-translation query form. The federation's query language is
// open-ended; a query here is just predicates plus the repositories the user
// wants searched.
struct Query {
    std::string query_id;
    std::vector<std::pair<std::string, std::string>> terms;  // (field, value)
    std::set<RepositoryId> scope;
};

enum class IndexerStatus { Responded, TimedOut, Failed };

std::string_view indexer_status_name(IndexerStatus s);

struct DocumentResult {
    std::string handle;  // repository-qualified, e.g. "ncstrl.cornell/TR99-1725"
    double score = 0.0;
    IndexerId source_indexer;

    bool operator==(const DocumentResult&) const = default;
};

struct ResultSet {
    std::vector<DocumentResult> results;  // descending score, then handle
    std::map<IndexerId, IndexerStatus> per_indexer_status;
    std::map<IndexerId, double> elapsed_s;  // responded indexers only
};

// One (QM, indexer) interaction outcome: the atom of all availability and
// response-time analysis. Timestamps are real seconds since an arbitrary
// epoch; only differences matter.
struct Observation {
    double at = 0.0;
    QmId qm;
    IndexerId indexer;
    bool responded = false;
    std::optional<double> elapsed_s;  // present iff responded
    double timeout_s = 0.0;

    bool operator==(const Observation&) const = default;
};

// Serialized observation row: the interchange format between the simulator,
// the mediator, and trace analysis.
struct TraceRecord {
    Observation obs;
    std::string query_id;

    bool operator==(const TraceRecord&) const = default;
};

enum class TraceErrorCode {
    MissingField,
    MalformedTimestamp,
    MalformedNumber,
    MalformedFlag,
    NonPositiveTimeout,
    NegativeElapsed,        // elapsed <= 0
    ElapsedExceedsTimeout,  // elapsed > timeout while responded=1
    UnexpectedElapsed,      // elapsed value on a responded=0 record
    EmptyField,
};

std::string_view trace_error_name(TraceErrorCode code);

class TraceError : public std::runtime_error {
public:
    TraceError(TraceErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}
    TraceErrorCode code() const { return code_; }

private:
    TraceErrorCode code_;
};

// A parsed key=value line, keys in file order.
using RawRecord = std::vector<std::pair<std::string, std::string>>;

RawRecord parse_record_line(const std::string& line);

// Checks every field and range; throws TraceError with a distinct code per
// failure mode. responded=0 records must carry elapsed_s=null (or no
// elapsed_s at all).
TraceRecord validate_trace_record(const RawRecord& raw);

// Fixed field order: ts qm indexer query_id timeout_s responded elapsed_s.
std::string format_trace_record(const TraceRecord& rec);

TraceRecord parse_trace_line(const std::string& line);

struct TraceReadResult {
    std::vector<TraceRecord> records;
    std::vector<std::pair<std::size_t, std::string>> bad_lines;  // (line no, message)
};

TraceReadResult read_trace(std::istream& in);
TraceReadResult read_trace_file(const std::string& path);
void write_trace_file(const std::string& path, const std::vector<TraceRecord>& recs);

// Shared response-ratio / mean-response-time definitions. The mediator's
// store, the simulator's stats, and the analyze command all fold through
// this one accumulator.
struct PairTally {
    std::uint64_t attempts = 0;
    std::uint64_t responses = 0;
    double elapsed_sum = 0.0;

    void add(const Observation& obs);
    // no-data (attempts == 0) is distinguished from a ratio of 0.0
    std::optional<double> response_ratio() const;
    std::optional<double> mean_elapsed() const;

    bool operator==(const PairTally&) const = default;
};

struct PairKey {
    QmId qm;
    IndexerId indexer;

    auto operator<=>(const PairKey&) const = default;
};

std::map<PairKey, PairTally> pair_stats(const std::vector<TraceRecord>& trace);

// number rendering shared by trace io and reports: full round-trip precision
std::string format_double(double v);
double parse_double(const std::string& s, TraceErrorCode code_on_error);

}  // namespace qmed
