#include "qmed/report.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace qmed::report {

std::optional<double> ReportMatrix::cell(const QmId& qm, const IndexerId& indexer) const {
    auto it = values.find(PairKey{qm, indexer});
    if (it == values.end()) return std::nullopt;
    return it->second;
}

ReportMatrix build_matrix(const std::map<PairKey, PairTally>& stats,
                          ReportMatrix::Kind kind) {
    ReportMatrix m;
    m.kind = kind;
    std::set<IndexerId> rows;
    std::set<QmId> sites;
    for (const auto& [key, tally] : stats) {
        rows.insert(key.indexer);
        sites.insert(key.qm);
        std::optional<double> v = kind == ReportMatrix::Kind::Ratios
                                      ? tally.response_ratio()
                                      : tally.mean_elapsed();
        if (v) m.values[key] = *v;
    }
    m.rows.assign(rows.begin(), rows.end());
    m.sites.assign(sites.begin(), sites.end());
    return m;
}

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

std::string render_table(const TextTable& t) {
    std::vector<std::size_t> widths(t.header.size());
    for (std::size_t c = 0; c < t.header.size(); ++c) widths[c] = t.header[c].size();
    for (const auto& row : t.rows) {
        for (std::size_t c = 0; c < row.size() && c < widths.size(); ++c) {
            widths[c] = std::max(widths[c], row[c].size());
        }
    }
    std::string out;
    auto emit_row = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < widths.size(); ++c) {
            const std::string& cell = c < cells.size() ? cells[c] : std::string();
            if (c == 0) {
                out += cell;
                out.append(widths[c] - cell.size(), ' ');
            } else {
                out += "  ";
                out.append(widths[c] - cell.size(), ' ');
                out += cell;
            }
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        out += '\n';
    };
    emit_row(t.header);
    std::size_t total = 0;
    for (std::size_t c = 0; c < widths.size(); ++c) total += widths[c] + (c ? 2 : 0);
    out.append(total, '-');
    out += '\n';
    for (const auto& row : t.rows) emit_row(row);
    return out;
}

std::string render_text(const ReportMatrix& m) {
    int decimals = m.kind == ReportMatrix::Kind::Ratios ? 2 : 1;
    auto cell_text = [&](const QmId& qm, const IndexerId& indexer) -> std::string {
        auto v = m.cell(qm, indexer);
        return v ? fixed(*v, decimals) : "-";
    };

    TextTable t;
    t.header.push_back("indexer");
    for (const auto& site : m.sites) {
        t.header.push_back("qm:" + site);       // QM <site> sees indexer <row>
        t.header.push_back("ix:" + site);       // indexer <site> as seen by QM <row>
    }
    for (const auto& row : m.rows) {
        std::vector<std::string> cells;
        cells.push_back(row);
        for (const auto& site : m.sites) {
            cells.push_back(cell_text(site, row));
            cells.push_back(cell_text(row, site));
        }
        t.rows.push_back(std::move(cells));
    }

    std::string out = m.kind == ReportMatrix::Kind::Ratios
                          ? "QM-view indexer response ratios\n"
                          : "QM-view mean indexer response times (s)\n";
    out += render_table(t);
    out +=
        "qm:S = what QM S sees of the row indexer; "
        "ix:S = how QMs at each row see indexer S; - = pair never observed\n";
    return out;
}

std::string render_records(const ReportMatrix& m) {
    std::string kind = m.kind == ReportMatrix::Kind::Ratios ? "ratio" : "mean_elapsed_s";
    std::string out;
    for (const auto& [key, value] : m.values) {
        out += "kind=" + kind;
        out += " qm=" + key.qm;
        out += " indexer=" + key.indexer;
        out += " value=" + format_double(value);
        out += '\n';
    }
    return out;
}

}  // namespace qmed::report
