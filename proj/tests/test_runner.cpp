#include "ctnet/error.hpp"
#include "ctnet/runner.hpp"
#include "ctnet/selection.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <unistd.h>

using namespace ctnet;
using namespace ctnet::runner;
using ctnet::test::random_series;

namespace fs = std::filesystem;

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("ctnet_runner_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

RunnerConfig m5_config() {
    RunnerConfig cfg;
    cfg.timeframe = market_data::Timeframe::m5;
    return cfg;
}

std::vector<Emission> run_one(const RunnerConfig& cfg, const Series& s) {
    SymbolPipeline pipe(s.symbol, s.timeframe, cfg);
    std::vector<Emission> out;
    for (const auto& b : s.bars) {
        for (auto& e : pipe.push(b)) {
            out.push_back(std::move(e));
        }
    }
    for (auto& e : pipe.flush()) {
        out.push_back(std::move(e));
    }
    return out;
}

bool same(const Emission& a, const Emission& b) {
    return a.symbol == b.symbol && a.prediction.values == b.prediction.values &&
           a.prediction.origin_timestamp == b.prediction.origin_timestamp && a.realized_return == b.realized_return &&
           a.cycle_period == b.cycle_period && a.pearson_r == b.pearson_r;
}

bool same_trace(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(a[i] == b[i] || (std::isnan(a[i]) && std::isnan(b[i])))) {
            return false;
        }
    }
    return true;
}

std::vector<Series> universe(std::size_t n, std::size_t bars) {
    std::vector<Series> u;
    for (std::size_t i = 0; i < n; ++i) {
        u.push_back(random_series(100 + i, bars, market_data::Timeframe::m5, 1704182400, 0.004,
                                  "S" + std::to_string(i)));
    }
    return u;
}

// Tag balance only: every <x ...> closes in order, and self-closing tags stand alone.
bool balanced_xml(const std::string& text) {
    std::vector<std::string> stack;
    std::size_t pos = 0;
    while ((pos = text.find('<', pos)) != std::string::npos) {
        const auto end = text.find('>', pos);
        if (end == std::string::npos) {
            return false;
        }
        std::string tag = text.substr(pos + 1, end - pos - 1);
        pos = end + 1;
        if (tag.empty() || tag[0] == '?' || tag[0] == '!') {
            continue;
        }
        if (tag.back() == '/') {
            continue;
        }
        if (tag[0] == '/') {
            if (stack.empty() || stack.back() != tag.substr(1)) {
                return false;
            }
            stack.pop_back();
            continue;
        }
        stack.push_back(tag.substr(0, tag.find_first_of(" \t\n")));
    }
    return stack.empty();
}

ChartBundle fixed_bundle() {
    ChartBundle b;
    b.symbol = "GOLD<&>";
    b.pearson_r = 0.4375;
    b.cycle_period = 24.0;
    const std::size_t n = 40;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(i);
        b.timestamps.push_back(1704182400 + static_cast<Timestamp>(i) * 300);
        b.actual_close.push_back(100.0 + 2.0 * std::sin(x / 5.0));
        b.predicted_return.push_back(i < 5 ? nan : 0.001 * std::cos(x / 4.0));
        b.actual_return.push_back(i == 0 ? nan : std::log(b.actual_close[i] / b.actual_close[i - 1]));
        b.wavelet_power.push_back(i < 10 ? nan : 1.0 + 0.5 * std::sin(x / 3.0));
    }
    double c = b.actual_close.back();
    for (std::size_t j = 0; j < 8; ++j) {
        c *= std::exp(0.002);
        b.forward_timestamps.push_back(b.timestamps.back() + static_cast<Timestamp>(j + 1) * 300);
        b.predicted_close.push_back(c);
    }
    for (std::size_t i = 0; i < b.rows(); ++i) {
        const double x = static_cast<double>(i);
        b.macd.push_back(i < 12 ? nan : 0.3 * std::sin(x / 6.0));
        b.macd_signal.push_back(i < 16 ? nan : 0.25 * std::sin(x / 6.0 - 0.5));
        b.macd_histogram.push_back(i < 16 ? nan : b.macd[i] - b.macd_signal[i]);
        b.stoch_k.push_back(i < 4 ? nan : 50.0 + 40.0 * std::sin(x / 3.0));
        b.stoch_d.push_back(i < 6 ? nan : 50.0 + 35.0 * std::sin(x / 3.0 - 0.4));
    }
    return b;
}

}  // namespace

TEST_CASE("a 100-bar feed emits once per post-warm-up bar") {
    const auto cfg = m5_config();
    const auto s = random_series(1, 100, market_data::Timeframe::m5, 1704182400, 0.002, "ONE");
    const auto em = run_one(cfg, s);
    REQUIRE(em.size() == 100 - cfg.normalize_window);
    for (std::size_t i = 0; i < em.size(); ++i) {
        CHECK(em[i].prediction.origin_timestamp == s.bars[i + cfg.normalize_window].timestamp);
        CHECK(em[i].prediction.values.size() == cfg.horizon);
        CHECK(em[i].pearson_r >= -1.0);
        CHECK(em[i].pearson_r <= 1.0);
    }
}

TEST_CASE("chart bundle plots 8 of 10 predicted points") {
    const auto cfg = m5_config();
    const auto s = random_series(2, 150, market_data::Timeframe::m5, 1704182400, 0.002, "ONE");
    SymbolPipeline pipe(s.symbol, s.timeframe, cfg);
    for (const auto& b : s.bars) {
        pipe.push(b);
    }
    pipe.flush();
    const auto b = pipe.bundle();
    CHECK(b.predicted_close.size() == 8);
    CHECK(b.forward_timestamps.size() == 8);
    CHECK(b.timestamps.size() == cfg.chart_history);
    CHECK(b.macd.size() == b.rows());
    CHECK(b.stoch_k.size() == b.rows());
    CHECK(b.wavelet_power.size() == b.timestamps.size());
    std::vector<double> p;
    std::vector<double> a;
    for (std::size_t i = 0; i < b.timestamps.size(); ++i) {
        if (std::isfinite(b.predicted_return[i]) && std::isfinite(b.actual_return[i])) {
            p.push_back(b.predicted_return[i]);
            a.push_back(b.actual_return[i]);
        }
    }
    CHECK(b.pearson_r == selection::pearson(p, a).r);
    // adaptive specs follow the tracker, which starts at period 20
    CHECK(pipe.macd_spec().periods == std::vector<int>{10, 20, 5});
}

TEST_CASE("replaying a feed gives bit-identical emissions") {
    const auto cfg = m5_config();
    const auto s = random_series(3, 200, market_data::Timeframe::m5, 1704182400, 0.003, "ONE");
    const auto a = run_one(cfg, s);
    const auto b = run_one(cfg, s);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(same(a[i], b[i]));
    }
}

TEST_CASE("emissions never depend on later bars") {
    const auto cfg = m5_config();
    const auto s = random_series(4, 160, market_data::Timeframe::m5, 1704182400, 0.003, "ONE");
    const auto full = run_one(cfg, s);
    auto cut = s;
    cut.bars.resize(110);
    auto prefix = run_one(cfg, cut);
    // the last bar of the prefix may have been released by flush()
    prefix.pop_back();
    REQUIRE(prefix.size() <= full.size());
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        CHECK(same(prefix[i], full[i]));
    }
}

TEST_CASE("stream exports are identical for 1, 2 and 4 workers") {
    const auto u = universe(8, 220);
    const auto feed = make_feed(u);
    std::string reference;
    for (std::size_t workers : {1u, 2u, 4u, 1u}) {
        auto cfg = m5_config();
        cfg.workers = workers;
        const auto res = run_stream(cfg, feed);
        REQUIRE(res.size() == 8);
        const auto dir = scratch("w" + std::to_string(workers));
        export_stream(res, cfg.horizon, dir);
        std::string all;
        for (const auto& [symbol, stream] : res) {
            CHECK(stream.emissions.size() == 200);
            for (const auto* suffix : {"_predictions.csv", "_chart.csv", "_chart.svg"}) {
                const auto p = dir / (symbol + suffix);
                REQUIRE(fs::exists(p));
                all += slurp(p);
            }
            CHECK(fs::exists(dir / (symbol + "_removed.csv")) == !stream.removed.empty());
        }
        if (reference.empty()) {
            reference = all;
        }
        CHECK(all == reference);
    }
}

TEST_CASE("parallel_map merges by symbol and reports failures") {
    const auto none = parallel_map({}, [](const std::string& s) { return s.size(); }, 4);
    CHECK(none.empty());

    std::vector<std::string> syms;
    for (int i = 149; i >= 0; --i) {
        syms.push_back("E" + std::to_string(1000 + i));
    }
    const auto res = parallel_map(syms, [](const std::string& s) { return s + "!"; }, 4);
    REQUIRE(res.size() == 150);
    for (std::size_t i = 0; i < res.size(); ++i) {
        CHECK(res[i].first == "E" + std::to_string(1000 + i));
        CHECK(res[i].second == res[i].first + "!");
    }

    auto failing = [](const std::string& s) -> int {
        if (s == "E1042" || s == "E1100") {
            throw DataError("bad feed");
        }
        return 1;
    };
    for (std::size_t workers : {1u, 3u}) {
        try {
            parallel_map(syms, failing, workers);
            FAIL("expected a TaskError");
        } catch (const TaskError& e) {
            CHECK(e.symbol() == "E1042");
            CHECK(e.code() == ExitCode::data);
            CHECK(std::string(e.what()).find("E1042") != std::string::npos);
        }
    }
}

TEST_CASE("feed gap pauses the symbol with an audit note") {
    auto cfg = m5_config();
    cfg.max_gap_seconds = 600;
    auto s = random_series(5, 60, market_data::Timeframe::m5, 1704182400, 0.002, "GAP");
    for (std::size_t i = 40; i < s.bars.size(); ++i) {
        s.bars[i].timestamp += 3600;
    }
    SymbolPipeline pipe(s.symbol, s.timeframe, cfg);
    std::size_t emitted = 0;
    for (const auto& b : s.bars) {
        emitted += pipe.push(b).size();
    }
    CHECK(pipe.paused());
    CHECK(emitted <= 40 - cfg.normalize_window);
    REQUIRE(pipe.audit().size() == 1);
    CHECK(pipe.audit()[0].find("paused") != std::string::npos);
}

TEST_CASE("a reverting spike is dropped from the stream") {
    const auto cfg = m5_config();
    auto s = random_series(6, 90, market_data::Timeframe::m5, 1704182400, 0.002, "SPK");
    auto& spike = s.bars[60];
    spike.close *= 1.2;
    spike.high = std::max(spike.high, spike.close);
    s.bars[61].open = spike.close;
    s.bars[61].high = std::max(s.bars[61].high, s.bars[61].open);
    s.bars[61].close = s.bars[59].close;
    s.bars[61].low = std::min(s.bars[61].low, s.bars[61].close);
    SymbolPipeline pipe(s.symbol, s.timeframe, cfg);
    std::size_t emitted = 0;
    for (const auto& b : s.bars) {
        emitted += pipe.push(b).size();
    }
    emitted += pipe.flush().size();
    REQUIRE(pipe.removed().size() == 1);
    CHECK(pipe.removed()[0] == spike);
    CHECK(emitted == 90 - 1 - cfg.normalize_window);
    CHECK(pipe.bars().size() == 89);
}

TEST_CASE("chart CSV round trip") {
    const auto cfg = m5_config();
    std::vector<double> closes(60, 250.0);
    const auto s = ctnet::test::series_from_closes(closes, market_data::Timeframe::m5, 1704182400, "FLAT");
    SymbolPipeline pipe(s.symbol, s.timeframe, cfg);
    for (const auto& b : s.bars) {
        pipe.push(b);
    }
    for (const auto& b : {pipe.bundle(), fixed_bundle()}) {
        std::stringstream io;
        write_chart_csv(io, b);
        const auto back = read_chart_csv(io);
        CHECK(back.symbol == b.symbol);
        CHECK(back.pearson_r == b.pearson_r);
        CHECK(back.cycle_period == b.cycle_period);
        CHECK(back.timestamps == b.timestamps);
        CHECK(back.forward_timestamps == b.forward_timestamps);
        CHECK(same_trace(back.actual_close, b.actual_close));
        CHECK(same_trace(back.predicted_close, b.predicted_close));
        CHECK(same_trace(back.predicted_return, b.predicted_return));
        CHECK(same_trace(back.actual_return, b.actual_return));
        CHECK(same_trace(back.macd, b.macd));
        CHECK(same_trace(back.macd_signal, b.macd_signal));
        CHECK(same_trace(back.macd_histogram, b.macd_histogram));
        CHECK(same_trace(back.stoch_k, b.stoch_k));
        CHECK(same_trace(back.stoch_d, b.stoch_d));
        CHECK(same_trace(back.wavelet_power, b.wavelet_power));
    }
    std::istringstream bad("# symbol=X,pearson_r=0,cycle_period=20\nrow,timestamp\n1,2,3\n");
    CHECK_THROWS_AS(read_chart_csv(bad), ParseError);
}

TEST_CASE("chart SVG is well formed and matches the golden file") {
    const auto svg = render_chart_svg(fixed_bundle());
    CHECK(balanced_xml(svg));
    CHECK(svg.find("GOLD&lt;&amp;&gt;") != std::string::npos);
    const fs::path golden = fs::path(CTNET_TEST_DIR) / "golden" / "chart.svg";
    if (std::getenv("CTNET_UPDATE_GOLDEN") != nullptr) {
        std::ofstream(golden, std::ios::binary) << svg;
    }
    REQUIRE(fs::exists(golden));
    CHECK(slurp(golden) == svg);
}

TEST_CASE("export_chart writes both files or fails with an I/O error") {
    const auto dir = scratch("chart");
    const auto files = export_chart(fixed_bundle(), dir);
    CHECK(files.size() == 2);
    for (const auto& f : files) {
        CHECK(fs::file_size(f) > 0);
    }
    std::ofstream(dir / "plain") << "x";
    CHECK_THROWS_AS(export_chart(fixed_bundle(), dir / "plain" / "sub"), IoError);
}

TEST_CASE("config JSON round trip and validation") {
    RunnerConfig c;
    c.horizon = 7;
    c.workers = 3;
    c.hidden_units = 5;
    c.base_rate = 2.5e-4;
    c.wavelet.window = 512;
    c.cleaning.outlier_threshold = 12.5;
    c.max_gap_seconds = 900;
    const auto text = config_to_json(c);
    const auto back = config_from_json(text);
    CHECK(config_to_json(back) == text);
    CHECK(back.horizon == 7);
    CHECK(back.base_rate == 2.5e-4);
    CHECK(back.wavelet.window == 512);

    const auto partial = config_from_json(R"({"horizon": 4})", c);
    CHECK(partial.horizon == 4);
    CHECK(partial.workers == 3);

    CHECK_THROWS_AS(config_from_json("{not json"), ConfigError);
    RunnerConfig bad;
    bad.horizon = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = RunnerConfig{};
    bad.workers = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("forecast_from_emissions only reads emissions up to the decision time") {
    std::vector<Emission> em;
    for (int i = 0; i < 5; ++i) {
        ctrnn::Prediction p{2, {0.1 * i, 0.01}, 1000 + 60 * i};
        em.push_back(Emission{"X", p, 0.5 * i, 20.0, 0.0});
    }
    CHECK_FALSE(forecast_from_emissions(em, 999).has_value());
    const auto f = forecast_from_emissions(em, 1000 + 60 * 2 + 30);
    REQUIRE(f.has_value());
    CHECK(f->predicted == std::vector<double>{0.0, 0.1});
    CHECK(f->actual == std::vector<double>{0.5, 1.0});
    CHECK(f->expected_return == doctest::Approx(0.2 + 0.01));
}

TEST_CASE("network backtest runs end to end on a small universe") {
    auto cfg = m5_config();
    cfg.days = 10;
    cfg.basket_size = 4;
    cfg.score_window = 10;
    const auto u = universe(6, 120);
    const auto rep = run_network_backtest(cfg, u);
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[0].label == "0 – 2");
    CHECK(rep.rows[1].label == "3 – 4");
    CHECK(rep.rows[0].days == 10);
    cfg.workers = 3;
    const auto again = run_network_backtest(cfg, u);
    CHECK(backtest::render_report(again).csv == backtest::render_report(rep).csv);
}
