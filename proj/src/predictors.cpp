#include "qmed/predictors.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <stdexcept>

namespace qmed::predictors {

std::string_view method_name(Method m) {
    switch (m) {
        case Method::SingleLastObs: return "single-last-obs";
        case Method::RunningAverage: return "running-average";
        case Method::LowPass: return "low-pass";
        case Method::TlpfValue: return "tlpf-value";
        case Method::TlpfMethodA: return "tlpf-a";
        case Method::TlpfMethodB: return "tlpf-b";
    }
    return "unknown";
}

Method method_from_name(std::string_view name) {
    for (Method m : kAllMethods) {
        if (method_name(m) == name) return m;
    }
    throw std::invalid_argument("unknown method name: \"" + std::string(name) + "\"");
}

bool method_tunable(Method m) {
    switch (m) {
        case Method::SingleLastObs:
        case Method::RunningAverage:
            return false;
        case Method::LowPass:
        case Method::TlpfValue:
        case Method::TlpfMethodA:
        case Method::TlpfMethodB:
            return true;
    }
    return false;
}

Params parse_params(std::string_view text) {
    Params p;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t comma = text.find(',', pos);
        if (comma == std::string_view::npos) comma = text.size();
        std::string_view item = text.substr(pos, comma - pos);
        pos = comma + 1;
        if (item.empty()) continue;
        std::size_t eq = item.find('=');
        if (eq == std::string_view::npos) {
            throw std::invalid_argument("param is not key=value: \"" + std::string(item) + "\"");
        }
        std::string key(item.substr(0, eq));
        std::string val(item.substr(eq + 1));
        double v = parse_double(val, TraceErrorCode::MalformedNumber);
        if (key == "alpha") {
            p.alpha = v;
        } else if (key == "tau") {
            p.tau = v;
        } else if (key == "lambda") {
            p.lambda = v;
        } else if (key == "window") {
            p.window = static_cast<std::uint64_t>(v);
        } else {
            throw std::invalid_argument("unknown param key: \"" + key + "\"");
        }
    }
    return p;
}

std::string format_params(Method m, const Params& p) {
    switch (m) {
        case Method::SingleLastObs:
            return "";
        case Method::RunningAverage:
            return p.window ? "window=" + std::to_string(*p.window) : "";
        case Method::LowPass:
            return "alpha=" + format_double(p.alpha);
        case Method::TlpfValue:
        case Method::TlpfMethodA:
            return "tau=" + format_double(p.tau);
        case Method::TlpfMethodB:
            return "tau=" + format_double(p.tau) + ",lambda=" + format_double(p.lambda);
    }
    return "";
}

std::string_view metric_name(Metric m) {
    return m == Metric::Availability ? "availability" : "response-time";
}

Metric metric_from_name(std::string_view name) {
    if (name == "availability") return Metric::Availability;
    if (name == "response-time") return Metric::ResponseTime;
    throw std::invalid_argument("unknown metric: \"" + std::string(name) + "\"");
}

namespace {

bool is_timed(Method m) {
    return m == Method::TlpfValue || m == Method::TlpfMethodA || m == Method::TlpfMethodB;
}

void check_params(Method m, const Params& p) {
    if (m == Method::LowPass && !(p.alpha > 0.0 && p.alpha <= 1.0)) {
        throw std::invalid_argument("alpha must be in (0,1], got " + format_double(p.alpha));
    }
    if (is_timed(m) && !(p.tau > 0.0)) {
        throw std::invalid_argument("tau must be > 0, got " + format_double(p.tau));
    }
    if (m == Method::TlpfMethodB && !(p.lambda >= 0.0 && p.lambda <= 1.0)) {
        throw std::invalid_argument("lambda must be in [0,1], got " + format_double(p.lambda));
    }
    if (p.window && *p.window != 1) {
        throw std::invalid_argument("only window=1 is supported as an override");
    }
    if (p.window && m != Method::RunningAverage) {
        throw std::invalid_argument("window applies to running-average only");
    }
}

}  // namespace

PredictorState make_predictor(Method m, Params params) {
    check_params(m, params);
    PredictorState s;
    s.method = m;
    s.params = params;
    return s;
}

PredictorState observe(PredictorState state, double x, double at) {
    if (!std::isfinite(x)) {
        throw std::invalid_argument("non-finite observation");
    }
    if (is_timed(state.method) && state.count > 0 && at < state.last_at) {
        throw std::invalid_argument("non-monotone timestamp for timed filter: " +
                                    format_double(at) + " < " + format_double(state.last_at));
    }

    switch (state.method) {
        case Method::SingleLastObs:
            state.value = x;
            break;
        case Method::RunningAverage:
            if (state.params.window && *state.params.window == 1) {
                state.value = x;
            } else {
                state.value = (state.sum + x) / static_cast<double>(state.count + 1);
            }
            break;
        case Method::LowPass:
            state.value = state.count == 0
                              ? x
                              : state.params.alpha * x + (1.0 - state.params.alpha) * *state.value;
            break;
        case Method::TlpfValue:
        case Method::TlpfMethodA:
        case Method::TlpfMethodB: {
            if (state.count == 0) {
                state.value = x;
            } else {
                double w = std::exp(-(at - state.last_at) / state.params.tau);
                state.value = (1.0 - w) * x + w * *state.value;
            }
            break;
        }
    }

    state.sum += x;
    state.count += 1;
    state.last_at = at;
    return state;
}

std::optional<double> predict(const PredictorState& state, double at) {
    if (state.count == 0) return std::nullopt;
    if (is_timed(state.method) && at < state.last_at) {
        throw std::invalid_argument("prediction time predates last observation: " +
                                    format_double(at) + " < " + format_double(state.last_at));
    }
    double mean = state.sum / static_cast<double>(state.count);
    switch (state.method) {
        case Method::SingleLastObs:
        case Method::RunningAverage:
        case Method::LowPass:
        case Method::TlpfValue:
            return state.value;
        case Method::TlpfMethodA: {
            // relax toward the long-run mean as the last observation ages
            double w = std::exp(-(at - state.last_at) / state.params.tau);
            return w * *state.value + (1.0 - w) * mean;
        }
        case Method::TlpfMethodB:
            return state.params.lambda * *state.value + (1.0 - state.params.lambda) * mean;
    }
    return state.value;
}

int round_availability(double p) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw std::domain_error("availability estimate outside [0,1]: " + format_double(p));
    }
    return p < 0.5 ? 0 : 1;
}

BacktestResult backtest(const std::vector<SeriesPoint>& series, Method method,
                        const Params& params, Metric metric, bool keep_rows) {
    if (series.size() < 2) {
        throw std::invalid_argument("series has no predictable point (length " +
                                    std::to_string(series.size()) + ")");
    }
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (i > 0 && series[i].at < series[i - 1].at) {
            throw std::invalid_argument("series timestamps are not nondecreasing");
        }
        if (metric == Metric::Availability && series[i].value != 0.0 &&
            series[i].value != 1.0) {
            throw std::invalid_argument("availability values must be 0 or 1, got " +
                                        format_double(series[i].value));
        }
    }

    BacktestResult out;
    if (keep_rows) out.per_observation.emplace();

    PredictorState state = make_predictor(method, params);
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (i > 0) {
            double p = *predict(state, series[i].at);
            if (metric == Metric::Availability) {
                p = static_cast<double>(round_availability(p));
            }
            double err = p - series[i].value;
            out.sq_err_sum += err * err;
            ++out.n_predictions;
            if (keep_rows) {
                out.per_observation->push_back({p, series[i].value, err});
            }
        }
        state = observe(state, series[i].value, series[i].at);
    }
    out.mse = out.sq_err_sum / static_cast<double>(out.n_predictions);
    out.rms = std::sqrt(out.mse);
    return out;
}

namespace {

OptimizeResult optimize_impl(const std::vector<SeriesPoint>& series, Method method,
                             const std::vector<Params>& grid, Metric metric,
                             bool parallel) {
    if (!method_tunable(method)) {
        // nothing to search; report empty params alongside the one result
        BacktestResult r = backtest(series, method, Params{}, metric);
        return OptimizeResult{Params{}, r.mse};
    }
    if (grid.empty()) {
        throw std::invalid_argument("empty parameter grid");
    }

    std::vector<double> mses(grid.size());
    std::vector<std::exception_ptr> errors(grid.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
    for (std::size_t i = 0; i < grid.size(); ++i) {
        try {
            mses[i] = backtest(series, method, grid[i], metric).mse;
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < grid.size(); ++i) {
        if (mses[i] < mses[best]) best = i;  // strict: first-in-grid wins ties
    }
    return OptimizeResult{grid[best], mses[best]};
}

}  // namespace

OptimizeResult optimize_constants(const std::vector<SeriesPoint>& series, Method method,
                                  const std::vector<Params>& grid, Metric metric) {
    return optimize_impl(series, method, grid, metric, true);
}

OptimizeResult optimize_constants_serial(const std::vector<SeriesPoint>& series,
                                         Method method, const std::vector<Params>& grid,
                                         Metric metric) {
    return optimize_impl(series, method, grid, metric, false);
}

std::map<PairKey, std::vector<SeriesPoint>> series_by_pair(
    const std::vector<TraceRecord>& trace, Metric metric) {
    std::map<PairKey, std::vector<SeriesPoint>> out;
    for (const auto& rec : trace) {
        PairKey key{rec.obs.qm, rec.obs.indexer};
        if (metric == Metric::Availability) {
            out[key].push_back({rec.obs.at, rec.obs.responded ? 1.0 : 0.0});
        } else if (rec.obs.responded) {
            out[key].push_back({rec.obs.at, *rec.obs.elapsed_s});
        } else {
            out[key];  // pair stays visible even with nothing predictable
        }
    }
    return out;
}

namespace {

MseReport fold_pair_results(const std::vector<const PairKey*>& keys,
                            const std::vector<std::optional<BacktestResult>>& results) {
    MseReport report;
    std::map<QmId, std::pair<double, std::uint64_t>> pool;  // (sq err sum, predictions)
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (!results[i]) {
            report.skipped.push_back(*keys[i]);
            continue;
        }
        report.per_pair.emplace(*keys[i], *results[i]);
        auto& [ssq, n] = pool[keys[i]->qm];
        ssq += results[i]->sq_err_sum;
        n += results[i]->n_predictions;
        auto [it, inserted] = report.per_qm_max.emplace(keys[i]->qm, results[i]->mse);
        if (!inserted) it->second = std::max(it->second, results[i]->mse);
    }
    for (const auto& [qm, acc] : pool) {
        BacktestResult pooled;
        pooled.sq_err_sum = acc.first;
        pooled.n_predictions = acc.second;
        pooled.mse = acc.first / static_cast<double>(acc.second);
        pooled.rms = std::sqrt(pooled.mse);
        report.per_qm.emplace(qm, pooled);
    }
    return report;
}

void flatten_groups(const std::map<PairKey, std::vector<SeriesPoint>>& grouped,
                    std::vector<const PairKey*>& keys,
                    std::vector<const std::vector<SeriesPoint>*>& series) {
    keys.reserve(grouped.size());
    series.reserve(grouped.size());
    for (const auto& [key, s] : grouped) {
        keys.push_back(&key);
        series.push_back(&s);
    }
}

MseReport per_indexer_mse_impl(const std::vector<TraceRecord>& trace, Method method,
                               const Params& params, Metric metric, bool parallel) {
    auto grouped = series_by_pair(trace, metric);
    std::vector<const PairKey*> keys;
    std::vector<const std::vector<SeriesPoint>*> series;
    flatten_groups(grouped, keys, series);

    std::vector<std::optional<BacktestResult>> results(keys.size());
    std::vector<std::exception_ptr> errors(keys.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (series[i]->size() < 2) continue;
        try {
            results[i] = backtest(*series[i], method, params, metric);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    return fold_pair_results(keys, results);
}

}  // namespace

MseReport per_indexer_mse(const std::vector<TraceRecord>& trace, Method method,
                          const Params& params, Metric metric) {
    return per_indexer_mse_impl(trace, method, params, metric, true);
}

MseReport per_indexer_mse_serial(const std::vector<TraceRecord>& trace, Method method,
                                 const Params& params, Metric metric) {
    return per_indexer_mse_impl(trace, method, params, metric, false);
}

OptimizedMseReport per_indexer_mse_optimized(const std::vector<TraceRecord>& trace,
                                             Method method, const std::vector<Params>& grid,
                                             Metric metric) {
    auto grouped = series_by_pair(trace, metric);
    std::vector<const PairKey*> keys;
    std::vector<const std::vector<SeriesPoint>*> series;
    flatten_groups(grouped, keys, series);

    std::vector<std::optional<BacktestResult>> results(keys.size());
    std::vector<Params> picked(keys.size());
    std::vector<std::exception_ptr> errors(keys.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (series[i]->size() < 2) continue;
        try {
            OptimizeResult best = optimize_constants_serial(*series[i], method, grid, metric);
            picked[i] = best.params;
            results[i] = backtest(*series[i], method, best.params, metric);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    OptimizedMseReport out;
    out.report = fold_pair_results(keys, results);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (results[i]) out.chosen.emplace(*keys[i], picked[i]);
    }
    return out;
}

}  // namespace qmed::predictors
