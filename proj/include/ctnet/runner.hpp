#pragma once

#include "ctnet/backtest.hpp"
#include "ctnet/ctrnn.hpp"
#include "ctnet/cycle.hpp"
#include "ctnet/error.hpp"
#include "ctnet/indicators.hpp"
#include "ctnet/market_data.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace ctnet::runner {

using market_data::Bar;
using market_data::Series;
using market_data::Timestamp;

enum class Mode { batch, stream };

struct RunnerConfig {
    Mode mode = Mode::batch;
    market_data::Timeframe timeframe = market_data::Timeframe::m5;
    std::size_t horizon = 10;
    std::filesystem::path universe;
    std::size_t basket_size = 20;
    std::uint64_t seed = 42;
    std::size_t workers = 1;
    std::filesystem::path output_dir = "out";

    // network and training
    std::size_t hidden_units = 8;
    double dt = 0.5;
    double tau = 1.0;
    std::size_t truncation_depth = 20;
    double base_rate = 1e-3;
    double adapt_decay = 0.99;
    double epsilon = 1e-8;

    // preprocessing
    std::size_t normalize_window = 20;
    bool clean = true;
    market_data::CleaningPolicy cleaning;
    market_data::SessionCalendar calendar;
    std::int64_t max_gap_seconds = 0;  // 0 disables the feed-gap pause

    // cycles and charting
    cycle::WaveletConfig wavelet;
    std::size_t cycle_every = 10;
    std::size_t plot_horizon = 8;
    std::size_t chart_history = 100;
    indicators::AdaptiveRule adaptive_rule;

    // selection and backtest
    std::size_t score_window = 20;
    std::size_t days = 41;

    void validate() const;
    ctrnn::Topology topology() const;
    ctrnn::TrainConfig train_config() const;
};

/// Reads a JSON object whose keys mirror RunnerConfig; missing keys keep `base` values.
RunnerConfig load_config(const std::filesystem::path& path, RunnerConfig base = {});
RunnerConfig config_from_json(const std::string& text, RunnerConfig base = {});
std::string config_to_json(const RunnerConfig& cfg);

/// Failure of one per-symbol task; carries the inner exit code.
class TaskError : public Error {
public:
    TaskError(std::string symbol, ExitCode code, const std::string& what)
        : Error(code, symbol + ": " + what), symbol_(std::move(symbol)) {}
    const std::string& symbol() const noexcept { return symbol_; }

private:
    std::string symbol_;
};

/// Runs `task(symbol)` for every symbol on `workers` threads. Results come back
/// sorted by symbol regardless of worker count. If any task throws, the call
/// throws TaskError for the first failing symbol in that order.
template <typename Task>
auto parallel_map(std::vector<std::string> symbols, Task task, std::size_t workers)
    -> std::vector<std::pair<std::string, std::invoke_result_t<Task&, const std::string&>>> {
    using Result = std::invoke_result_t<Task&, const std::string&>;
    std::sort(symbols.begin(), symbols.end());
    const std::size_t n = symbols.size();
    std::vector<std::optional<Result>> results(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                results[i].emplace(task(symbols[i]));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(std::max<std::size_t>(workers, 1), std::max<std::size_t>(n, 1));
    if (threads <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back(work);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!errors[i]) {
            continue;
        }
        try {
            std::rethrow_exception(errors[i]);
        } catch (const Error& e) {
            throw TaskError(symbols[i], e.code(), e.what());
        } catch (const std::exception& e) {
            throw TaskError(symbols[i], ExitCode::data, e.what());
        }
    }
    std::vector<std::pair<std::string, Result>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.emplace_back(std::move(symbols[i]), std::move(*results[i]));
    }
    return out;
}

/// Traces behind one Fig.-style chart: actual closes with the predicted
/// continuation, adaptive MACD and stochastic, and the wavelet peak-row power.
struct ChartBundle {
    std::string symbol;
    std::vector<Timestamp> timestamps;  // actual bars
    std::vector<double> actual_close;
    std::vector<double> predicted_return;  // 1-bar-ahead prediction made at the previous bar (NaN if none)
    std::vector<double> actual_return;
    std::vector<Timestamp> forward_timestamps;
    std::vector<double> predicted_close;  // plotted horizon
    double pearson_r = 0.0;
    double cycle_period = 0.0;
    // indicator lines over actual + forward rows
    std::vector<double> macd;
    std::vector<double> macd_signal;
    std::vector<double> macd_histogram;
    std::vector<double> stoch_k;
    std::vector<double> stoch_d;
    std::vector<double> wavelet_power;  // actual rows only

    std::size_t rows() const { return timestamps.size() + forward_timestamps.size(); }
};

struct Emission {
    std::string symbol;
    ctrnn::Prediction prediction;
    double realized_return = 0.0;  // return of the bar that produced the prediction
    double cycle_period = 0.0;
    double pearson_r = 0.0;
};

/// Incremental per-symbol pipeline: feed gap check, spike cleaning with a
/// one-bar hold, rolling normalisation, online network step and update,
/// periodic cycle re-estimation and adaptive indicator specs.
class SymbolPipeline {
public:
    SymbolPipeline(std::string symbol, market_data::Timeframe timeframe, const RunnerConfig& cfg);

    /// Emissions released by this bar (none during warm-up or while a spike candidate is held).
    std::vector<Emission> push(const Bar& bar);
    /// Releases a held bar at the end of the feed.
    std::vector<Emission> flush();

    ChartBundle bundle() const;

    const std::string& symbol() const { return symbol_; }
    bool paused() const { return paused_; }
    const std::vector<std::string>& audit() const { return audit_; }
    const std::vector<Bar>& removed() const { return removed_; }
    const ctrnn::OnlineTrainer& trainer() const { return trainer_; }
    const std::vector<Bar>& bars() const { return bars_; }
    indicators::IndicatorSpec macd_spec() const;
    indicators::IndicatorSpec stochastic_spec() const;

private:
    std::optional<Emission> process(const Bar& bar);
    void refresh_cycle();

    std::string symbol_;
    market_data::Timeframe timeframe_;
    const RunnerConfig& cfg_;
    ctrnn::OnlineTrainer trainer_;
    cycle::CycleTracker tracker_;
    std::vector<Bar> bars_;  // accepted (cleaned) history
    std::optional<Bar> held_;
    double held_mad_ = 0.0;
    std::vector<Bar> removed_;
    std::vector<std::string> audit_;
    bool paused_ = false;
    std::optional<Timestamp> last_seen_;
    std::vector<double> predicted_next_;  // aligned with bars_: 1-step prediction for this bar
    std::optional<ctrnn::Prediction> last_prediction_;
    std::vector<double> last_row_power_;  // peak-row power over the last cycle window
    std::optional<std::size_t> last_cycle_end_;
    std::size_t processed_since_cycle_ = 0;
};

struct SymbolStream {
    std::vector<Emission> emissions;
    ChartBundle bundle;
    std::vector<std::string> audit;
    std::vector<Bar> removed;
    std::size_t updates = 0;
};

using EmissionSink = std::function<void(const Emission&, const SymbolPipeline&)>;

/// Splits the feed by symbol and runs every symbol's pipeline, one task per
/// symbol on `cfg.workers` threads. Each symbol's emissions keep feed order.
/// The sink, if given, is called from worker threads.
std::vector<std::pair<std::string, SymbolStream>> run_stream(const RunnerConfig& cfg,
                                                             std::span<const std::pair<std::string, Bar>> feed,
                                                             const EmissionSink& sink = {});

/// Interleaves universe series into one feed ordered by (timestamp, symbol).
std::vector<std::pair<std::string, Bar>> make_feed(std::span<const Series> universe);

/// Loads every *.csv in a directory; the file stem is the symbol. Sorted by symbol.
std::vector<Series> load_universe(const std::filesystem::path& dir);

/// Writes `<dir>/<symbol>_predictions.csv` and the chart files for every symbol.
void export_stream(const std::vector<std::pair<std::string, SymbolStream>>& results, std::size_t horizon,
                   const std::filesystem::path& dir);

/// `<dir>/<symbol>_chart.csv` and `<dir>/<symbol>_chart.svg`.
std::vector<std::filesystem::path> export_chart(const ChartBundle& bundle, const std::filesystem::path& dir);
void write_chart_csv(std::ostream& out, const ChartBundle& bundle);
ChartBundle read_chart_csv(std::istream& in);
std::string render_chart_svg(const ChartBundle& bundle);

/// Backtest driven by the online network: each symbol's stream is run once
/// (it is causal), and the predictor on day d only reads emissions up to d.
backtest::BacktestReport run_network_backtest(const RunnerConfig& cfg, std::span<const Series> universe);

/// Forecast built from causal emissions: 1-step predicted vs realised returns,
/// and the latest prediction's cumulative return.
std::optional<backtest::Forecast> forecast_from_emissions(std::span<const Emission> emissions, Timestamp as_of);

}  // namespace ctnet::runner
