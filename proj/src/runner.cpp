#include "ctnet/runner.hpp"

#include "ctnet/selection.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace ctnet::runner {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using nlohmann::json;

template <typename T>
void read_key(const json& j, const char* key, T& target) {
    if (j.contains(key)) {
        target = j.at(key).get<T>();
    }
}

std::vector<double> tail_values(const indicators::IndicatorOutput& out, std::string_view name) {
    return out.line(name).values;
}

}  // namespace

void RunnerConfig::validate() const {
    if (horizon < 1) {
        throw ConfigError("horizon must be >= 1");
    }
    if (workers < 1) {
        throw ConfigError("worker count must be >= 1");
    }
    if (plot_horizon < 1 || cycle_every < 1 || chart_history < 3) {
        throw ConfigError("plot horizon, cycle cadence and chart history must be positive (history >= 3)");
    }
    if (normalize_window < 2) {
        throw ConfigError("normalize window must be >= 2");
    }
    if (basket_size < 1) {
        throw ConfigError("basket size must be >= 1");
    }
    cleaning.validate();
    calendar.validate();
    wavelet.validate();
    topology().validate();
    train_config().validate();
}

ctrnn::Topology RunnerConfig::topology() const {
    return ctrnn::Topology::make(market_data::kFeatureCount, hidden_units, horizon, dt, tau);
}

ctrnn::TrainConfig RunnerConfig::train_config() const {
    ctrnn::TrainConfig t;
    t.truncation_depth = truncation_depth;
    t.base_rate = base_rate;
    t.adapt_decay = adapt_decay;
    t.seed = seed;
    t.epsilon = epsilon;
    return t;
}

RunnerConfig config_from_json(const std::string& text, RunnerConfig cfg) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    try {
        if (j.contains("mode")) {
            const auto m = j.at("mode").get<std::string>();
            if (m != "batch" && m != "stream") {
                throw ConfigError("mode must be batch or stream");
            }
            cfg.mode = m == "batch" ? Mode::batch : Mode::stream;
        }
        if (j.contains("timeframe")) {
            cfg.timeframe = market_data::parse_timeframe(j.at("timeframe").get<std::string>());
        }
        if (j.contains("universe")) {
            cfg.universe = j.at("universe").get<std::string>();
        }
        if (j.contains("output_dir")) {
            cfg.output_dir = j.at("output_dir").get<std::string>();
        }
        read_key(j, "horizon", cfg.horizon);
        read_key(j, "basket_size", cfg.basket_size);
        read_key(j, "seed", cfg.seed);
        read_key(j, "workers", cfg.workers);
        read_key(j, "hidden_units", cfg.hidden_units);
        read_key(j, "dt", cfg.dt);
        read_key(j, "tau", cfg.tau);
        read_key(j, "truncation_depth", cfg.truncation_depth);
        read_key(j, "base_rate", cfg.base_rate);
        read_key(j, "adapt_decay", cfg.adapt_decay);
        read_key(j, "epsilon", cfg.epsilon);
        read_key(j, "normalize_window", cfg.normalize_window);
        read_key(j, "clean", cfg.clean);
        read_key(j, "max_gap_seconds", cfg.max_gap_seconds);
        read_key(j, "cycle_every", cfg.cycle_every);
        read_key(j, "plot_horizon", cfg.plot_horizon);
        read_key(j, "chart_history", cfg.chart_history);
        read_key(j, "score_window", cfg.score_window);
        read_key(j, "days", cfg.days);
        if (j.contains("cleaning")) {
            const auto& c = j.at("cleaning");
            read_key(c, "outlier_window", cfg.cleaning.outlier_window);
            read_key(c, "outlier_threshold", cfg.cleaning.outlier_threshold);
            if (c.contains("gap_policy")) {
                cfg.cleaning.gap_policy = market_data::parse_gap_policy(c.at("gap_policy").get<std::string>());
            }
        }
        if (j.contains("calendar")) {
            const auto& c = j.at("calendar");
            read_key(c, "session_open", cfg.calendar.session_open);
            read_key(c, "session_close", cfg.calendar.session_close);
            if (c.contains("trading_days")) {
                cfg.calendar.trading_days.fill(false);
                for (int d : c.at("trading_days").get<std::vector<int>>()) {
                    if (d < 0 || d > 6) {
                        throw ConfigError("trading_days entries are weekdays 0 (Sunday) .. 6");
                    }
                    cfg.calendar.trading_days[static_cast<std::size_t>(d)] = true;
                }
            }
        }
        if (j.contains("wavelet")) {
            const auto& w = j.at("wavelet");
            read_key(w, "omega0", cfg.wavelet.omega0);
            read_key(w, "min_period", cfg.wavelet.min_period);
            read_key(w, "max_period", cfg.wavelet.max_period);
            read_key(w, "voices_per_octave", cfg.wavelet.voices_per_octave);
            read_key(w, "window", cfg.wavelet.window);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return cfg;
}

RunnerConfig load_config(const std::filesystem::path& path, RunnerConfig base) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str(), std::move(base));
}

std::string config_to_json(const RunnerConfig& cfg) {
    json days = json::array();
    for (std::size_t d = 0; d < 7; ++d) {
        if (cfg.calendar.trading_days[d]) {
            days.push_back(d);
        }
    }
    json j{
        {"mode", cfg.mode == Mode::batch ? "batch" : "stream"},
        {"timeframe", market_data::to_string(cfg.timeframe)},
        {"horizon", cfg.horizon},
        {"universe", cfg.universe.string()},
        {"basket_size", cfg.basket_size},
        {"seed", cfg.seed},
        {"workers", cfg.workers},
        {"output_dir", cfg.output_dir.string()},
        {"hidden_units", cfg.hidden_units},
        {"dt", cfg.dt},
        {"tau", cfg.tau},
        {"truncation_depth", cfg.truncation_depth},
        {"base_rate", cfg.base_rate},
        {"adapt_decay", cfg.adapt_decay},
        {"epsilon", cfg.epsilon},
        {"normalize_window", cfg.normalize_window},
        {"clean", cfg.clean},
        {"max_gap_seconds", cfg.max_gap_seconds},
        {"cycle_every", cfg.cycle_every},
        {"plot_horizon", cfg.plot_horizon},
        {"chart_history", cfg.chart_history},
        {"score_window", cfg.score_window},
        {"days", cfg.days},
        {"cleaning",
         {{"outlier_window", cfg.cleaning.outlier_window},
          {"outlier_threshold", cfg.cleaning.outlier_threshold},
          {"gap_policy", market_data::to_string(cfg.cleaning.gap_policy)}}},
        {"calendar",
         {{"session_open", cfg.calendar.session_open},
          {"session_close", cfg.calendar.session_close},
          {"trading_days", days}}},
        {"wavelet",
         {{"omega0", cfg.wavelet.omega0},
          {"min_period", cfg.wavelet.min_period},
          {"max_period", cfg.wavelet.max_period},
          {"voices_per_octave", cfg.wavelet.voices_per_octave},
          {"window", cfg.wavelet.window}}},
    };
    return j.dump(2);
}

// --- SymbolPipeline ---------------------------------------------------------

SymbolPipeline::SymbolPipeline(std::string symbol, market_data::Timeframe timeframe, const RunnerConfig& cfg)
    : symbol_(std::move(symbol)),
      timeframe_(timeframe),
      cfg_(cfg),
      trainer_(cfg.topology(), cfg.train_config()),
      tracker_(20.0) {}

std::vector<Emission> SymbolPipeline::push(const Bar& bar) {
    std::vector<Emission> out;
    if (paused_) {
        return out;
    }
    if (last_seen_ && bar.timestamp <= *last_seen_) {
        throw DataError(symbol_ + ": feed out of order at " + market_data::format_timestamp(bar.timestamp));
    }
    if (cfg_.max_gap_seconds > 0 && last_seen_ && bar.timestamp - *last_seen_ > cfg_.max_gap_seconds) {
        paused_ = true;
        audit_.push_back("paused at " + market_data::format_timestamp(bar.timestamp) + ": feed gap of " +
                         std::to_string(bar.timestamp - *last_seen_) + " s exceeds the session policy");
        return out;
    }
    last_seen_ = bar.timestamp;
    market_data::validate_bar(bar);
    if (!(bar.close > 0.0)) {
        throw DataError(symbol_ + ": non-positive close at " + market_data::format_timestamp(bar.timestamp));
    }

    if (held_) {
        const double revert = std::abs(std::log(bar.close / bars_.back().close));
        if (revert <= held_mad_) {
            removed_.push_back(*held_);
            audit_.push_back("removed spike at " + market_data::format_timestamp(held_->timestamp));
        } else if (auto e = process(*held_)) {
            out.push_back(std::move(*e));
        }
        held_.reset();
    }

    const auto w = cfg_.cleaning.outlier_window;
    if (cfg_.clean && bars_.size() >= w + 1) {
        std::vector<double> r(w);
        for (std::size_t j = 0; j < w; ++j) {
            const auto i = bars_.size() - w + j;
            r[j] = std::log(bars_[i].close / bars_[i - 1].close);
        }
        std::vector<double> sorted = r;
        std::sort(sorted.begin(), sorted.end());
        auto med = [](const std::vector<double>& v) {
            const auto n = v.size();
            return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
        };
        const double m = med(sorted);
        for (auto& x : sorted) {
            x = std::abs(x - m);
        }
        std::sort(sorted.begin(), sorted.end());
        const double mad = med(sorted);
        if (std::abs(std::log(bar.close / bars_.back().close)) > cfg_.cleaning.outlier_threshold * mad) {
            held_ = bar;
            held_mad_ = mad;
            return out;
        }
    }
    if (auto e = process(bar)) {
        out.push_back(std::move(*e));
    }
    return out;
}

std::vector<Emission> SymbolPipeline::flush() {
    std::vector<Emission> out;
    if (held_) {
        if (auto e = process(*held_)) {
            out.push_back(std::move(*e));
        }
        held_.reset();
    }
    return out;
}

std::optional<Emission> SymbolPipeline::process(const Bar& bar) {
    bars_.push_back(bar);
    predicted_next_.push_back(last_prediction_ ? last_prediction_->values.front() : kNaN);
    const auto n = bars_.size();
    if (n <= cfg_.normalize_window) {
        return std::nullopt;
    }
    const auto first = n - cfg_.normalize_window - 1;
    Series tail{symbol_, timeframe_, std::vector<Bar>(bars_.begin() + static_cast<std::ptrdiff_t>(first), bars_.end())};
    const auto feats = market_data::normalize(tail, cfg_.normalize_window);
    const auto& f = feats.back().values;
    const double r = std::log(bars_[n - 1].close / bars_[n - 2].close);

    ctrnn::StreamSample sample{Eigen::Map<const ctrnn::Vector>(f.data(), static_cast<Eigen::Index>(f.size())), r,
                               bar.timestamp};
    auto pred = trainer_.observe(sample);
    last_prediction_ = pred;

    if (++processed_since_cycle_ >= cfg_.cycle_every) {
        processed_since_cycle_ = 0;
        refresh_cycle();
    }

    std::vector<double> p;
    std::vector<double> a;
    for (std::size_t i = n > cfg_.score_window ? n - cfg_.score_window : 1; i < n; ++i) {
        if (std::isfinite(predicted_next_[i])) {
            p.push_back(predicted_next_[i]);
            a.push_back(std::log(bars_[i].close / bars_[i - 1].close));
        }
    }
    const double corr = p.size() >= 3 ? selection::pearson(p, a).r : 0.0;
    return Emission{symbol_, std::move(pred), r, tracker_.period(), corr};
}

void SymbolPipeline::refresh_cycle() {
    const auto window = cfg_.wavelet.window;
    if (bars_.size() < window) {
        return;
    }
    std::vector<double> closes;
    closes.reserve(window);
    for (auto it = bars_.end() - static_cast<std::ptrdiff_t>(window); it != bars_.end(); ++it) {
        closes.push_back(it->close);
    }
    const auto sg = cycle::cwt_power(cycle::log_detrended(closes), cfg_.wavelet);
    tracker_.update(cycle::dominant_cycle(sg, cfg_.wavelet));
    last_row_power_ = cycle::row_power(sg, cycle::nearest_row(sg, tracker_.period()));
    last_cycle_end_ = bars_.size() - 1;
}

indicators::IndicatorSpec SymbolPipeline::macd_spec() const {
    return indicators::adapt_periods(indicators::default_spec(indicators::Kind::MACD), tracker_.current(),
                                     cfg_.adaptive_rule);
}

indicators::IndicatorSpec SymbolPipeline::stochastic_spec() const {
    return indicators::adapt_periods(indicators::default_spec(indicators::Kind::StochasticKD), tracker_.current(),
                                     cfg_.adaptive_rule);
}

ChartBundle SymbolPipeline::bundle() const {
    ChartBundle b;
    b.symbol = symbol_;
    b.cycle_period = tracker_.period();
    const auto n = bars_.size();
    const auto h = std::min(cfg_.chart_history, n);
    const auto first = n - h;
    for (std::size_t i = first; i < n; ++i) {
        b.timestamps.push_back(bars_[i].timestamp);
        b.actual_close.push_back(bars_[i].close);
        b.predicted_return.push_back(predicted_next_[i]);
        b.actual_return.push_back(i > 0 ? std::log(bars_[i].close / bars_[i - 1].close) : kNaN);
        double wp = kNaN;
        if (last_cycle_end_ && !last_row_power_.empty()) {
            const auto origin = static_cast<std::ptrdiff_t>(*last_cycle_end_) -
                                static_cast<std::ptrdiff_t>(last_row_power_.size()) + 1;
            const auto col = static_cast<std::ptrdiff_t>(i) - origin;
            if (col >= 0 && col < static_cast<std::ptrdiff_t>(last_row_power_.size())) {
                wp = last_row_power_[static_cast<std::size_t>(col)];
            }
        }
        b.wavelet_power.push_back(wp);
    }

    ctrnn::Prediction plotted;
    if (last_prediction_ && h > 0) {
        plotted = *last_prediction_;
        plotted.values.resize(std::min(cfg_.plot_horizon, plotted.values.size()));
        plotted.horizon = plotted.values.size();
        b.predicted_close = indicators::forward_closes(bars_.back().close, plotted.values);
        const auto step = market_data::seconds(timeframe_);
        for (std::size_t j = 0; j < plotted.values.size(); ++j) {
            b.forward_timestamps.push_back(bars_.back().timestamp + static_cast<std::int64_t>(j + 1) * step);
        }
    }

    std::vector<double> p;
    std::vector<double> a;
    for (std::size_t i = 0; i < h; ++i) {
        if (std::isfinite(b.predicted_return[i]) && std::isfinite(b.actual_return[i])) {
            p.push_back(b.predicted_return[i]);
            a.push_back(b.actual_return[i]);
        }
    }
    b.pearson_r = p.size() >= 3 ? selection::pearson(p, a).r : 0.0;

    if (h > 0) {
        const Series tail{symbol_, timeframe_,
                          std::vector<Bar>(bars_.begin() + static_cast<std::ptrdiff_t>(first), bars_.end())};
        auto run = [&](const indicators::IndicatorSpec& spec) {
            return plotted.values.empty() ? indicators::compute(tail.bars, spec)
                                          : indicators::compute_on_prediction(tail, plotted, spec);
        };
        const auto m = run(macd_spec());
        b.macd = tail_values(m, "macd");
        b.macd_signal = tail_values(m, "signal");
        b.macd_histogram = tail_values(m, "histogram");
        const auto s = run(stochastic_spec());
        b.stoch_k = tail_values(s, "k");
        b.stoch_d = tail_values(s, "d");
    }
    return b;
}

// --- stream orchestration ---------------------------------------------------

std::vector<std::pair<std::string, Bar>> make_feed(std::span<const Series> universe) {
    std::vector<std::pair<std::string, Bar>> feed;
    for (const auto& s : universe) {
        for (const auto& b : s.bars) {
            feed.emplace_back(s.symbol, b);
        }
    }
    std::stable_sort(feed.begin(), feed.end(), [](const auto& a, const auto& b) {
        return a.second.timestamp != b.second.timestamp ? a.second.timestamp < b.second.timestamp
                                                        : a.first < b.first;
    });
    return feed;
}

std::vector<std::pair<std::string, SymbolStream>> run_stream(const RunnerConfig& cfg,
                                                             std::span<const std::pair<std::string, Bar>> feed,
                                                             const EmissionSink& sink) {
    cfg.validate();
    std::map<std::string, std::vector<Bar>> per_symbol;
    for (const auto& [symbol, bar] : feed) {
        per_symbol[symbol].push_back(bar);
    }
    std::vector<std::string> symbols;
    for (const auto& kv : per_symbol) {
        symbols.push_back(kv.first);
    }
    auto task = [&](const std::string& symbol) {
        SymbolPipeline pipe(symbol, cfg.timeframe, cfg);
        SymbolStream result;
        auto take = [&](std::vector<Emission> batch) {
            for (auto& e : batch) {
                if (sink) {
                    sink(e, pipe);
                }
                result.emissions.push_back(std::move(e));
            }
        };
        for (const auto& bar : per_symbol.at(symbol)) {
            take(pipe.push(bar));
        }
        take(pipe.flush());
        result.bundle = pipe.bundle();
        result.audit = pipe.audit();
        result.removed = pipe.removed();
        result.updates = pipe.trainer().update_count();
        return result;
    };
    return parallel_map(symbols, task, cfg.workers);
}

std::vector<Series> load_universe(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("universe directory " + dir.string() + " does not exist");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".csv") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<Series> out;
    for (const auto& f : files) {
        std::ifstream in(f);
        if (!in) {
            throw IoError("cannot open " + f.string());
        }
        try {
            out.push_back(market_data::parse_csv(in, f.stem().string()));
        } catch (const DataError& e) {
            throw DataError(f.filename().string() + ": " + e.what());
        }
    }
    return out;
}

void export_stream(const std::vector<std::pair<std::string, SymbolStream>>& results, std::size_t horizon,
                   const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    char buf[64];
    for (const auto& [symbol, stream] : results) {
        const auto path = dir / (symbol + "_predictions.csv");
        std::ofstream out(path);
        if (!out) {
            throw IoError("cannot write " + path.string());
        }
        out << "timestamp,realized_return";
        for (std::size_t j = 1; j <= horizon; ++j) {
            out << ",p" << j;
        }
        out << ",cycle_period,pearson_r\n";
        for (const auto& e : stream.emissions) {
            out << market_data::format_timestamp(e.prediction.origin_timestamp);
            std::snprintf(buf, sizeof buf, ",%.17g", e.realized_return);
            out << buf;
            for (double v : e.prediction.values) {
                std::snprintf(buf, sizeof buf, ",%.17g", v);
                out << buf;
            }
            std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", e.cycle_period, e.pearson_r);
            out << buf;
        }
        if (!stream.removed.empty()) {
            std::ofstream audit(dir / (symbol + "_removed.csv"));
            market_data::write_removed_csv(audit, stream.removed);
        }
        export_chart(stream.bundle, dir);
    }
}

std::optional<backtest::Forecast> forecast_from_emissions(std::span<const Emission> emissions, Timestamp as_of) {
    const auto end = std::upper_bound(emissions.begin(), emissions.end(), as_of,
                                      [](Timestamp t, const Emission& e) { return t < e.prediction.origin_timestamp; });
    const auto count = static_cast<std::size_t>(end - emissions.begin());
    if (count == 0) {
        return std::nullopt;
    }
    backtest::Forecast fc;
    for (std::size_t i = 1; i < count; ++i) {
        fc.predicted.push_back(emissions[i - 1].prediction.values.front());
        fc.actual.push_back(emissions[i].realized_return);
    }
    fc.expected_return = emissions[count - 1].prediction.cumulative();
    return fc;
}

backtest::BacktestReport run_network_backtest(const RunnerConfig& cfg, std::span<const Series> universe) {
    cfg.validate();
    std::map<std::string, const Series*> by_symbol;
    std::vector<std::string> symbols;
    for (const auto& s : universe) {
        by_symbol.emplace(s.symbol, &s);
        symbols.push_back(s.symbol);
    }
    auto task = [&](const std::string& symbol) {
        const Series& s = *by_symbol.at(symbol);
        SymbolPipeline pipe(symbol, s.timeframe, cfg);
        std::vector<Emission> out;
        for (const auto& bar : s.bars) {
            for (auto& e : pipe.push(bar)) {
                out.push_back(std::move(e));
            }
        }
        for (auto& e : pipe.flush()) {
            out.push_back(std::move(e));
        }
        return out;
    };
    const auto streams = parallel_map(symbols, task, cfg.workers);
    std::map<std::string, const std::vector<Emission>*> lookup;
    for (const auto& [symbol, emissions] : streams) {
        lookup.emplace(symbol, &emissions);
    }

    backtest::BacktestConfig bt;
    bt.days = cfg.days;
    bt.basket_size = std::min(cfg.basket_size, universe.size());
    bt.score_window = cfg.score_window;
    bt.subbaskets.clear();
    const std::size_t half = bt.basket_size / 2;
    if (half == 0) {
        bt.subbaskets.push_back({1, bt.basket_size, "0 – " + std::to_string(bt.basket_size)});
    } else {
        bt.subbaskets.push_back({1, half, "0 – " + std::to_string(half)});
        bt.subbaskets.push_back(
            {half + 1, bt.basket_size, std::to_string(half + 1) + " – " + std::to_string(bt.basket_size)});
    }
    auto predictor = [&](const std::string& symbol,
                         std::span<const Bar> history) -> std::optional<backtest::Forecast> {
        if (history.empty()) {
            return std::nullopt;
        }
        const auto& emissions = *lookup.at(symbol);
        return forecast_from_emissions(emissions, history.back().timestamp);
    };
    auto selector = [](std::span<const selection::CorrelationScore> scores, const selection::BasketSpec& spec) {
        return selection::select_basket(scores, spec);
    };
    return backtest::run_backtest(universe, predictor, selector, bt);
}

}  // namespace ctnet::runner
