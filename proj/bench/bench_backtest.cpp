// Compares the OpenMP backtest kernels against their serial reference on a
// synthetic many-pair trace. Prints wall time and speedup; exits nonzero if
// the two disagree.
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "qmed/domain.hpp"
#include "qmed/predictors.hpp"
#include "qmed/rng.hpp"

using namespace qmed;
using predictors::Method;
using predictors::Metric;

namespace {

std::vector<TraceRecord> synthetic_trace(int n_qms, int n_indexers, int per_pair,
                                         std::uint64_t seed) {
    std::vector<TraceRecord> trace;
    trace.reserve(static_cast<std::size_t>(n_qms) * n_indexers * per_pair);
    int query = 0;
    for (int q = 0; q < n_qms; ++q) {
        for (int i = 0; i < n_indexers; ++i) {
            Rng rng(hash_mix(seed, hash_mix(static_cast<std::uint64_t>(q),
                                            static_cast<std::uint64_t>(i))));
            double t = 0.0;
            for (int k = 0; k < per_pair; ++k) {
                t += rng.exponential(30.0);
                TraceRecord rec;
                rec.query_id = "q" + std::to_string(++query);
                rec.obs.at = t;
                rec.obs.qm = "qm" + std::to_string(q);
                rec.obs.indexer = "ix" + std::to_string(i);
                rec.obs.timeout_s = 20.0;
                if (rng.bernoulli(0.85)) {
                    rec.obs.responded = true;
                    rec.obs.elapsed_s = 0.1 + rng.lognormal(1.0, 0.6);
                    if (*rec.obs.elapsed_s > 20.0) {
                        rec.obs.responded = false;
                        rec.obs.elapsed_s.reset();
                    }
                }
                trace.push_back(std::move(rec));
            }
        }
    }
    return trace;
}

template <typename F>
double timed(F&& fn) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count();
}

bool reports_equal(const predictors::MseReport& a, const predictors::MseReport& b) {
    if (a.per_pair.size() != b.per_pair.size() || a.skipped != b.skipped) return false;
    for (const auto& [key, r] : a.per_pair) {
        auto it = b.per_pair.find(key);
        if (it == b.per_pair.end()) return false;
        if (r.mse != it->second.mse || r.n_predictions != it->second.n_predictions)
            return false;
    }
    for (const auto& [qm, r] : a.per_qm) {
        auto it = b.per_qm.find(qm);
        if (it == b.per_qm.end() || r.mse != it->second.mse) return false;
    }
    return a.per_qm_max == b.per_qm_max;
}

}  // namespace

int main(int argc, char** argv) {
    int per_pair = argc > 1 ? std::atoi(argv[1]) : 4000;
    auto trace = synthetic_trace(8, 12, per_pair, 7);
    std::printf("trace: %zu records over 96 pairs\n", trace.size());

    int failures = 0;
    for (Metric metric : {Metric::Availability, Metric::ResponseTime}) {
        for (Method method : predictors::kAllMethods) {
            predictors::MseReport serial, parallel;
            double ts = timed([&] {
                serial = predictors::per_indexer_mse_serial(trace, method, {}, metric);
            });
            double tp = timed([&] {
                parallel = predictors::per_indexer_mse(trace, method, {}, metric);
            });
            bool same = reports_equal(serial, parallel);
            if (!same) ++failures;
            std::printf("%-13s %-15s serial %7.3fs  parallel %7.3fs  speedup %5.2fx  %s\n",
                        std::string(predictors::metric_name(metric)).c_str(),
                        std::string(predictors::method_name(method)).c_str(), ts, tp,
                        tp > 0 ? ts / tp : 0.0, same ? "match" : "MISMATCH");
        }
    }

    // grid-search path: much more work per pair, the interesting parallel case
    std::vector<predictors::Params> grid;
    for (double alpha : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0}) {
        predictors::Params p;
        p.alpha = alpha;
        grid.push_back(p);
    }
    auto series = predictors::series_by_pair(trace, Metric::ResponseTime);
    predictors::OptimizeResult ser{}, par{};
    double ts_total = 0.0, tp_total = 0.0;
    bool opt_same = true;
    for (const auto& [key, s] : series) {
        ts_total += timed([&] {
            ser = predictors::optimize_constants_serial(s, Method::LowPass, grid,
                                                        Metric::ResponseTime);
        });
        tp_total += timed([&] {
            par = predictors::optimize_constants(s, Method::LowPass, grid,
                                                 Metric::ResponseTime);
        });
        if (!(ser.params == par.params) || ser.mse != par.mse) opt_same = false;
    }
    if (!opt_same) ++failures;
    std::printf("low-pass grid search over %zu pairs: serial %7.3fs  parallel %7.3fs  "
                "speedup %5.2fx  %s\n",
                series.size(), ts_total, tp_total,
                tp_total > 0 ? ts_total / tp_total : 0.0, opt_same ? "match" : "MISMATCH");

    if (failures) {
        std::printf("FAILED: %d kernel(s) disagree with the serial reference\n", failures);
        return 1;
    }
    return 0;
}
