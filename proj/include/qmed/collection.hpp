#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "qmed/domain.hpp"

namespace qmed::collection {

struct IndexerInfo {
    std::set<RepositoryId> coverage;
    std::vector<std::string> attrs;  // opaque tags, e.g. "cost:low"

    bool operator==(const IndexerInfo&) const = default;
};

// Federation-level metadata: repository→indexer mappings and connectivity
// regions. Coverage sets may replicate, overlap, or stay disjoint.
struct CollectionMetadata {
    int version = 1;
    std::set<RepositoryId> repositories;
    std::map<IndexerId, IndexerInfo> indexers;
    std::map<RegionId, std::set<std::string>> regions;  // member node ids
    std::map<QmId, RegionId> qm_region;

    bool operator==(const CollectionMetadata&) const = default;
};

CollectionMetadata parse_collection(std::istream& in);
CollectionMetadata load_collection_file(const std::string& path);
void validate(const CollectionMetadata& meta);
std::string format_collection(const CollectionMetadata& meta);

std::set<IndexerId> indexers_for_repository(const CollectionMetadata& meta,
                                            const RepositoryId& repo);

enum class RegionPolicy {
    PassThrough,  // a QM without a region sees every candidate
    Reject,       // a QM without a region sees none
};

// Intersection of the candidates with the QM's connectivity region.
std::set<IndexerId> region_filter(const CollectionMetadata& meta, const QmId& qm,
                                  const std::set<IndexerId>& candidates,
                                  RegionPolicy policy = RegionPolicy::PassThrough);

// What one QM reports to the collection service about the indexers it calls.
struct QmReport {
    QmId qm;
    struct Entry {
        std::uint64_t attempts = 0;
        std::uint64_t responses = 0;
        std::optional<double> mean_elapsed_s;

        bool operator==(const Entry&) const = default;
    };
    std::map<IndexerId, Entry> entries;

    bool operator==(const QmReport&) const = default;
};

std::string format_qm_report(const QmReport& report);
QmReport parse_qm_report(std::istream& in);
QmReport load_qm_report_file(const std::string& path);

// Aggregates per-QM performance reports, latest report per (qm, indexer)
// wins. The view is purely presentational: nothing here ever feeds one QM's
// metadata into another QM's predictors.
class CollectionService {
public:
    explicit CollectionService(CollectionMetadata meta = {}) : meta_(std::move(meta)) {}

    void aggregate_qm_report(const QmReport& report, double received_at);

    struct Cell {
        QmReport::Entry entry;
        double received_at = 0.0;
        bool known_indexer = true;  // collections evolve; unknown ones are kept and flagged
    };

    // indexer → (qm → cell); the response-ratio matrix over this is exactly
    // the published double-column availability table
    const std::map<IndexerId, std::map<QmId, Cell>>& matrix_view() const { return cells_; }

    std::optional<Cell> cell(const QmId& qm, const IndexerId& indexer) const;
    std::vector<QmId> reporting_qms() const;

private:
    CollectionMetadata meta_;
    std::map<IndexerId, std::map<QmId, Cell>> cells_;
};

// Immutable snapshot holder; reload swaps atomically so readers always see a
// consistent version.
class MetadataStore {
public:
    void load(CollectionMetadata meta);
    std::shared_ptr<const CollectionMetadata> snapshot() const;

private:
    mutable std::mutex mu_;
    std::shared_ptr<const CollectionMetadata> current_;
};

}  // namespace qmed::collection
