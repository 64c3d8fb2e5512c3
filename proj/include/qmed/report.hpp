#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qmed/domain.hpp"

namespace qmed::report {

// Paired double-column matrix: one row per indexer, one two-column group per
// site QM — "QM <site> sees indexer <row>" beside "indexer <site> as seen by
// QM <row>". A cell exists only where the pair was observed; absent cells
// render as a dash.
struct ReportMatrix {
    enum class Kind { Ratios, Times };

    Kind kind = Kind::Ratios;
    std::vector<IndexerId> rows;  // indexer labels, sorted
    std::vector<QmId> sites;      // QM column-group labels, sorted
    std::map<PairKey, double> values;

    std::optional<double> cell(const QmId& qm, const IndexerId& indexer) const;
};

ReportMatrix build_matrix(const std::map<PairKey, PairTally>& stats,
                          ReportMatrix::Kind kind);

// ratios to 2 decimals, times to 1; dash for absent cells
std::string render_text(const ReportMatrix& m);

// one line per observed pair, full precision:
// "kind=... qm=... indexer=... value=..."
std::string render_records(const ReportMatrix& m);

// column-aligned plain-text table: first column left-aligned, the rest right
struct TextTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

std::string render_table(const TextTable& t);

// fixed-decimal rendering for table cells
std::string fixed(double v, int decimals);

}  // namespace qmed::report
