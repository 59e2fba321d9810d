#include "ctnet/backtest.hpp"
#include "ctnet/checkpoint.hpp"
#include "ctnet/error.hpp"
#include "ctnet/market_data.hpp"
#include "ctnet/runner.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace md = ctnet::market_data;
namespace rn = ctnet::runner;

namespace {

struct Flags {
    std::string config;
    std::string timeframe;
    std::string universe;
    std::string out;
    std::size_t horizon = 0;
    std::uint64_t seed = 0;
    std::size_t workers = 0;
    std::size_t days = 0;
    std::size_t basket = 0;
    bool clean = false;
};

struct Options {
    CLI::Option* config = nullptr;
    CLI::Option* timeframe = nullptr;
    CLI::Option* universe = nullptr;
    CLI::Option* out = nullptr;
    CLI::Option* horizon = nullptr;
    CLI::Option* seed = nullptr;
    CLI::Option* workers = nullptr;
    CLI::Option* days = nullptr;
    CLI::Option* basket = nullptr;
    CLI::Option* clean = nullptr;
};

template <typename T>
void set_if(const CLI::Option* opt, const T& value, T& target) {
    if (opt != nullptr && opt->count() > 0) {
        target = value;
    }
}

// Config file first, then any flag given on the command line.
rn::RunnerConfig resolve(const Flags& f, const Options& o) {
    rn::RunnerConfig cfg;
    if (o.config != nullptr && o.config->count() > 0) {
        cfg = rn::load_config(f.config);
    }
    if (o.timeframe != nullptr && o.timeframe->count() > 0) {
        cfg.timeframe = md::parse_timeframe(f.timeframe);
    }
    if (o.universe != nullptr && o.universe->count() > 0) {
        cfg.universe = f.universe;
    }
    if (o.out != nullptr && o.out->count() > 0) {
        cfg.output_dir = f.out;
    }
    set_if(o.horizon, f.horizon, cfg.horizon);
    set_if(o.seed, f.seed, cfg.seed);
    set_if(o.workers, f.workers, cfg.workers);
    set_if(o.days, f.days, cfg.days);
    set_if(o.basket, f.basket, cfg.basket_size);
    set_if(o.clean, f.clean, cfg.clean);
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* app, Flags& f, Options& o) {
    o.config = app->add_option("--config", f.config, "JSON config file; flags override its values");
    o.out = app->add_option("--out", f.out, "output directory");
    o.seed = app->add_option("--seed", f.seed, "random seed");
    o.horizon = app->add_option("--horizon", f.horizon, "prediction horizon in bars");
    o.timeframe = app->add_option("--timeframe", f.timeframe, "1m, 3m, 5m, 15m or 1d");
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw ctnet::IoError("cannot create " + dir.string() + ": " + ec.message());
    }
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw ctnet::IoError("cannot write " + path.string());
    }
    return out;
}

const md::Series& find_symbol(const std::vector<md::Series>& universe, const std::string& symbol) {
    for (const auto& s : universe) {
        if (s.symbol == symbol) {
            return s;
        }
    }
    throw ctnet::DataError("symbol " + symbol + " not found in universe");
}

rn::SymbolPipeline replay(const md::Series& s, const rn::RunnerConfig& cfg) {
    rn::SymbolPipeline pipe(s.symbol, s.timeframe, cfg);
    for (const auto& bar : s.bars) {
        pipe.push(bar);
    }
    pipe.flush();
    return pipe;
}

int cmd_ingest(const rn::RunnerConfig& cfg, const std::string& in_path, std::string symbol) {
    std::ifstream in(in_path);
    if (!in) {
        throw ctnet::IoError("cannot open " + in_path);
    }
    if (symbol.empty()) {
        symbol = std::filesystem::path(in_path).stem().string();
    }
    auto series = md::parse_csv(in, symbol);
    const auto raw_bars = series.bars.size();
    if (series.timeframe != cfg.timeframe) {
        series = md::resample(series, cfg.timeframe, cfg.calendar);
    }
    std::vector<md::Bar> removed;
    if (cfg.clean) {
        auto cleaned = md::remove_outliers(series, cfg.cleaning);
        series = std::move(cleaned.series);
        removed = std::move(cleaned.removed);
    }
    ensure_dir(cfg.output_dir);
    auto out = open_out(cfg.output_dir / (symbol + ".csv"));
    md::write_csv(out, series);
    if (!removed.empty()) {
        auto audit = open_out(cfg.output_dir / (symbol + "_removed.csv"));
        md::write_removed_csv(audit, removed);
    }
    std::printf("%s: %zu bars read, %zu written at %s, %zu removed\n", symbol.c_str(), raw_bars,
                series.bars.size(), md::to_string(series.timeframe).c_str(), removed.size());
    return 0;
}

int cmd_train(const rn::RunnerConfig& cfg) {
    const auto universe = rn::load_universe(cfg.universe);
    std::vector<std::string> symbols;
    for (const auto& s : universe) {
        symbols.push_back(s.symbol);
    }
    auto task = [&](const std::string& symbol) {
        const auto pipe = replay(find_symbol(universe, symbol), cfg);
        return ctnet::ctrnn::Checkpoint{cfg.topology(), pipe.trainer().weights(), cfg.seed,
                                        pipe.trainer().update_count()};
    };
    const auto results = rn::parallel_map(symbols, task, cfg.workers);
    ensure_dir(cfg.output_dir);
    for (const auto& [symbol, cp] : results) {
        ctnet::ctrnn::save_checkpoint(cfg.output_dir / (symbol + ".ckpt.json"), cp);
        std::printf("%s\tupdates=%llu\n", symbol.c_str(), static_cast<unsigned long long>(cp.update_count));
    }
    return 0;
}

int cmd_predict(const rn::RunnerConfig& cfg, const std::string& symbol, const std::string& checkpoint) {
    namespace ct = ctnet::ctrnn;
    const auto cp = ct::load_checkpoint(checkpoint);
    const auto universe = rn::load_universe(cfg.universe);
    const auto& series = find_symbol(universe, symbol);
    const auto features = md::normalize(series, cfg.normalize_window);
    if (features.empty()) {
        throw ctnet::DataError(symbol + ": not enough bars for the normalisation window");
    }
    ct::NetworkState state{ct::Vector::Zero(static_cast<Eigen::Index>(cp.topology.n_hidden))};
    for (const auto& f : features) {
        const ct::Vector x = Eigen::Map<const ct::Vector>(f.values.data(), static_cast<Eigen::Index>(f.values.size()));
        state = ct::advance_bar(state, cp.weights, x, cp.topology);
    }
    const auto pred = ct::predict(state, cp.weights, cp.topology, features.back().timestamp);
    if (!std::all_of(pred.values.begin(), pred.values.end(), [](double v) { return std::isfinite(v); })) {
        throw ctnet::NumericalError("non-finite prediction for " + symbol);
    }
    const auto prices = ctnet::indicators::forward_closes(series.bars.back().close, pred.values);
    std::printf("step,log_return,price\n");
    for (std::size_t j = 0; j < pred.values.size(); ++j) {
        std::printf("%zu,%.10g,%.10g\n", j + 1, pred.values[j], prices[j]);
    }
    return 0;
}

int cmd_backtest(const rn::RunnerConfig& cfg) {
    const auto universe = rn::load_universe(cfg.universe);
    const auto report = rn::run_network_backtest(cfg, universe);
    const auto rendered = ctnet::backtest::render_report(report);
    std::fputs(rendered.table.c_str(), stdout);
    ensure_dir(cfg.output_dir);
    open_out(cfg.output_dir / "report.csv") << rendered.csv;
    auto val = open_out(cfg.output_dir / "valuations.csv");
    ctnet::backtest::write_valuations_csv(val, report);
    auto trades = open_out(cfg.output_dir / "trades.csv");
    ctnet::backtest::write_trades_csv(trades, report);
    return 0;
}

int cmd_stream(const rn::RunnerConfig& cfg) {
    const auto universe = rn::load_universe(cfg.universe);
    const auto feed = rn::make_feed(universe);
    const auto results = rn::run_stream(cfg, feed);
    rn::export_stream(results, cfg.horizon, cfg.output_dir);
    for (const auto& [symbol, stream] : results) {
        std::printf("%s\temissions=%zu\tupdates=%zu\tr=%.4f\tcycle=%.2f\n", symbol.c_str(), stream.emissions.size(),
                    stream.updates, stream.bundle.pearson_r, stream.bundle.cycle_period);
        for (const auto& note : stream.audit) {
            std::fprintf(stderr, "%s: %s\n", symbol.c_str(), note.c_str());
        }
    }
    return 0;
}

int cmd_chart(const rn::RunnerConfig& cfg, const std::string& symbol) {
    const auto universe = rn::load_universe(cfg.universe);
    const auto pipe = replay(find_symbol(universe, symbol), cfg);
    for (const auto& p : rn::export_chart(pipe.bundle(), cfg.output_dir)) {
        std::printf("%s\n", p.string().c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ctnet: online continuous-time network forecasts, adaptive indicators and basket backtests"};
    app.require_subcommand(1);

    Flags f;
    std::string in_path;
    std::string symbol;
    std::string checkpoint;

    Options o_ingest;
    auto* ingest = app.add_subcommand("ingest", "parse, resample and clean one CSV");
    add_common(ingest, f, o_ingest);
    ingest->add_option("--in", in_path, "input CSV")->required();
    ingest->add_option("--symbol", symbol, "symbol (defaults to the file stem)");
    o_ingest.clean = ingest->add_flag("--clean", f.clean, "remove single-bar spikes");

    Options o_train;
    auto* train = app.add_subcommand("train", "train one network per symbol and save checkpoints");
    add_common(train, f, o_train);
    o_train.universe = train->add_option("--universe", f.universe, "directory of per-symbol CSVs");
    o_train.workers = train->add_option("--workers", f.workers, "worker threads");

    Options o_predict;
    auto* predict = app.add_subcommand("predict", "k-step prediction from a checkpoint");
    add_common(predict, f, o_predict);
    predict->add_option("--symbol", symbol, "symbol")->required();
    predict->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    o_predict.universe = predict->add_option("--universe", f.universe, "directory of per-symbol CSVs");

    Options o_backtest;
    auto* bt = app.add_subcommand("backtest", "correlation-ranked long/short basket backtest");
    add_common(bt, f, o_backtest);
    o_backtest.universe = bt->add_option("--universe", f.universe, "directory of per-symbol CSVs");
    o_backtest.days = bt->add_option("--days", f.days, "test days");
    o_backtest.basket = bt->add_option("--basket", f.basket, "basket size");
    o_backtest.workers = bt->add_option("--workers", f.workers, "worker threads");

    Options o_stream;
    auto* stream = app.add_subcommand("stream", "replay the universe as a live feed and export results");
    add_common(stream, f, o_stream);
    o_stream.universe = stream->add_option("--universe", f.universe, "directory of per-symbol CSVs");
    o_stream.workers = stream->add_option("--workers", f.workers, "worker threads");

    Options o_chart;
    auto* chart = app.add_subcommand("chart", "export the chart bundle of one symbol");
    add_common(chart, f, o_chart);
    chart->add_option("--symbol", symbol, "symbol")->required();
    o_chart.universe = chart->add_option("--universe", f.universe, "directory of per-symbol CSVs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ctnet::ExitCode::usage);
    }

    try {
        if (*ingest) {
            return cmd_ingest(resolve(f, o_ingest), in_path, symbol);
        }
        if (*train) {
            return cmd_train(resolve(f, o_train));
        }
        if (*predict) {
            return cmd_predict(resolve(f, o_predict), symbol, checkpoint);
        }
        if (*bt) {
            return cmd_backtest(resolve(f, o_backtest));
        }
        if (*stream) {
            return cmd_stream(resolve(f, o_stream));
        }
        if (*chart) {
            return cmd_chart(resolve(f, o_chart), symbol);
        }
    } catch (const ctnet::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(e.code());
    } catch (const ctnet::ContractViolation& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(ctnet::ExitCode::usage);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(ctnet::ExitCode::data);
    }
    return static_cast<int>(ctnet::ExitCode::usage);
}
