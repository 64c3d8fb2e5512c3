#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qmed/domain.hpp"

namespace qmed::predictors {

// One-step-ahead prediction methods over a per-(QM, indexer) observation
// series, from a window-1 average to time-decayed smoothing.
enum class Method {
    SingleLastObs,
    RunningAverage,
    LowPass,
    TlpfValue,
    TlpfMethodA,
    TlpfMethodB,
};

inline constexpr Method kAllMethods[] = {
    Method::SingleLastObs, Method::RunningAverage, Method::LowPass,
    Method::TlpfValue,     Method::TlpfMethodA,    Method::TlpfMethodB,
};

// exact CLI/config names: single-last-obs, running-average, low-pass,
// tlpf-value, tlpf-a, tlpf-b
std::string_view method_name(Method m);
Method method_from_name(std::string_view name);

struct Params {
    double alpha = 0.5;    // low-pass weight on the new observation, (0,1]
    double tau = 300.0;    // timed-filter decay constant, seconds, > 0
    double lambda = 0.5;   // tlpf-b blend toward the timed filter value, [0,1]
    std::optional<std::uint64_t> window;  // running-average override: only 1 supported

    bool operator==(const Params&) const = default;
};

// "alpha=0.3,tau=60" etc.; unknown keys rejected
Params parse_params(std::string_view text);
std::string format_params(Method m, const Params& p);

// true when the method has constants worth grid-searching
bool method_tunable(Method m);

enum class Metric { Availability, ResponseTime };

std::string_view metric_name(Metric m);
Metric metric_from_name(std::string_view name);

// Succinct record of past performance for one (QM, indexer, metric) series.
struct PredictorState {
    Method method = Method::SingleLastObs;
    Params params;
    std::optional<double> value;  // smoothed estimate; absent before first obs
    std::uint64_t count = 0;
    double sum = 0.0;     // running sum, feeds the hybrid methods
    double last_at = 0.0;

    bool operator==(const PredictorState&) const = default;
};

PredictorState make_predictor(Method m, Params params = {});

// Absorbs one observation. Timed variants reject non-monotone timestamps.
PredictorState observe(PredictorState state, double x, double at);

// Absent before any data. Timed method A relaxes toward the running mean as
// the last observation ages; queries must not predate the last observation
// for the timed variants.
std::optional<double> predict(const PredictorState& state, double at);

// Availability estimates in [0,1] become a binary prediction; 0.5 rounds up.
int round_availability(double p);

struct SeriesPoint {
    double at = 0.0;
    double value = 0.0;
};

struct PredictionRow {
    double prediction = 0.0;  // rounded already for availability
    double observation = 0.0;
    double error = 0.0;
};

struct BacktestResult {
    std::uint64_t n_predictions = 0;
    double mse = 0.0;
    double rms = 0.0;
    double sq_err_sum = 0.0;  // raw pooled-aggregation input
    std::optional<std::vector<PredictionRow>> per_observation;
};

// Strict one-step-ahead replay: the prediction for point i folds only points
// 1..i-1 and is queried at point i's timestamp. Availability predictions are
// rounded before the error is taken. The first point is never predicted.
BacktestResult backtest(const std::vector<SeriesPoint>& series, Method method,
                        const Params& params, Metric metric,
                        bool keep_rows = false);

struct OptimizeResult {
    Params params;
    double mse = 0.0;
};

// Exhaustive in-sample grid search; ties broken by first-in-grid order.
// Methods without tunable constants run once and report empty params.
OptimizeResult optimize_constants(const std::vector<SeriesPoint>& series, Method method,
                                  const std::vector<Params>& grid, Metric metric);
OptimizeResult optimize_constants_serial(const std::vector<SeriesPoint>& series,
                                         Method method, const std::vector<Params>& grid,
                                         Metric metric);

// availability: every attempt as 0/1; response time: responded records only
std::map<PairKey, std::vector<SeriesPoint>> series_by_pair(
    const std::vector<TraceRecord>& trace, Metric metric);

struct MseReport {
    std::map<PairKey, BacktestResult> per_pair;
    std::map<QmId, BacktestResult> per_qm;  // pooled over the QM's predictions
    std::map<QmId, double> per_qm_max;      // worst individual indexer
    std::vector<PairKey> skipped;           // series too short to predict
};

// Partitions a trace by (qm, indexer), backtests every pair, and reports the
// three granularities: per-pair MSE, per-QM pooled MSE, per-QM max.
// The pair backtests are independent; this entry point fans them out with
// OpenMP. The _serial variant is the reference implementation and must
// return bit-identical results.
MseReport per_indexer_mse(const std::vector<TraceRecord>& trace, Method method,
                          const Params& params, Metric metric);
MseReport per_indexer_mse_serial(const std::vector<TraceRecord>& trace, Method method,
                                 const Params& params, Metric metric);

struct OptimizedMseReport {
    MseReport report;
    std::map<PairKey, Params> chosen;  // grid pick per pair (in-sample)
};

// per_indexer_mse with a per-pair grid search in front: each pair is
// backtested at its own best-in-grid constants.
OptimizedMseReport per_indexer_mse_optimized(const std::vector<TraceRecord>& trace,
                                             Method method, const std::vector<Params>& grid,
                                             Metric metric);

}  // namespace qmed::predictors
