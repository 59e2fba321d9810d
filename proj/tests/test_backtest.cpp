#include "backtest_support.hpp"
#include "ctnet/backtest.hpp"
#include "ctnet/error.hpp"

#include <doctest.h>

#include <sstream>

using namespace ctnet;
using namespace ctnet::backtest;
using namespace ctnet::test;

namespace {

BacktestConfig small_config() {
    BacktestConfig cfg;
    cfg.days = 15;
    cfg.basket_size = 6;
    cfg.subbaskets = {{1, 3, "0 – 3"}, {4, 6, "4 – 6"}};
    return cfg;
}

std::string trades_text(const BacktestReport& r) {
    std::ostringstream out;
    write_trades_csv(out, r);
    return out.str();
}

}  // namespace

TEST_CASE("mark_to_market on long and short books") {
    PortfolioState lng{0.0, {{"A", Direction::long_side, 10.0, 100.0, 1}}, 1};
    CHECK(mark_to_market(lng, {{"A", 110.0}}) == doctest::Approx(1100.0));
    PortfolioState sht{0.0, {{"A", Direction::short_side, 10.0, 100.0, 1}}, 1};
    CHECK(mark_to_market(sht, {{"A", 90.0}}) == doctest::Approx(1100.0));
    PortfolioState empty{1000.0, {}, 1};
    CHECK(mark_to_market(empty, {}) == 1000.0);
    CHECK_THROWS_AS(mark_to_market(lng, {{"B", 1.0}}), DataError);
}

TEST_CASE("Table 1 fixture rows render in the published layout") {
    const ReportRow a{"0 – 10", 41, 1000, 1428, 42.80, 32, 1490, 49.00};
    const ReportRow b{"11 – 20", 41, 1000, 1462, 46.20, 38, 1471, 47.10};
    CHECK(render_row(a) == "0 – 10\t41\t1000\t1428\t42.80%\t32\t1490\t49.00%");
    CHECK(render_row(b) == "11 – 20\t41\t1000\t1462\t46.20%\t38\t1471\t47.10%");
    CHECK(report_header() ==
          "Position in portfolio\tNo. of days in test\tInitial capital\tValuation at end\tROI\tPeak Day\t"
          "Valuation at Peak\tPeak ROI");
}

TEST_CASE("make_row derives ROI and the earliest peak from a trace") {
    std::vector<double> trace(41, 1200.0);
    trace[31] = 1490.0;
    trace[35] = 1490.0;
    trace.back() = 1428.0;
    const auto row = make_row("0 – 10", 1000.0, trace);
    CHECK(row.peak_day == 32);
    CHECK(render_row(row) == "0 – 10\t41\t1000\t1428\t42.80%\t32\t1490\t49.00%");
}

TEST_CASE("constant prices give exactly zero ROI") {
    std::vector<Series> u;
    for (std::size_t i = 0; i < 6; ++i) {
        u.push_back(series_from_closes(std::vector<double>(60, 100.0 + i), Timeframe::d1, 1704153600, sym(i)));
    }
    const auto rep = run_backtest(u, momentum_predictor(), plain_selector(), small_config());
    for (const auto& row : rep.rows) {
        CHECK(row.final_valuation == 1000.0);
        CHECK(render_row(row).find("\t0.00%\t") != std::string::npos);
    }
}

TEST_CASE("single long symbol rising 10% ends at 1100") {
    BacktestConfig cfg;
    cfg.basket_size = 1;
    cfg.subbaskets = {{1, 1, "0 – 1"}};
    std::vector<double> closes(30, 100.0);
    for (std::size_t d = 0; d < cfg.days; ++d) {
        closes.push_back(100.0 + 10.0 * static_cast<double>(d) / static_cast<double>(cfg.days - 1));
    }
    const std::vector<Series> u{series_from_closes(closes, Timeframe::d1, 1704153600, "ONE")};
    const auto pred = [](const std::string&, std::span<const Bar>) {
        return std::optional<Forecast>(Forecast{{1, 2, 3, 2, 1}, {1, 2, 3, 2, 1}, 0.01});
    };
    cfg.score_window = 5;
    const auto rep = run_backtest(u, pred, plain_selector(), cfg);
    REQUIRE(rep.rows.size() == 1);
    CHECK(rep.rows[0].final_valuation == doctest::Approx(1100.0).epsilon(1e-12));
    CHECK(render_row(rep.rows[0]) == "0 – 1\t41\t1000\t1100\t10.00%\t41\t1100\t10.00%");
}

TEST_CASE("valuation changes equal position P&L") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto u = random_universe(seed, 30, 80);
        const auto rep = run_backtest(u, momentum_predictor(), plain_selector(), BacktestConfig{});
        CHECK(rep.valuations.size() == 2);
        CHECK(rep.valuations[0].size() == 41);
        CHECK(conservation_error(u, rep, 1000.0) <= 1e-9);
        CHECK_FALSE(rep.trades.empty());
    }
}

TEST_CASE("data after the cut day does not change earlier decisions") {
    const auto u = random_universe(11, 12, 50);
    const auto cfg = small_config();
    const auto base = run_backtest(u, momentum_predictor(), plain_selector(), cfg);
    for (std::size_t cut : {1u, 4u, 9u, 14u}) {
        auto v = u;
        const Timestamp cut_ts = base.day_timestamps[cut - 1];
        std::mt19937_64 rng(cut);
        for (auto& s : v) {
            for (auto& b : s.bars) {
                if (b.timestamp > cut_ts) {
                    const double f = std::exp(0.3 * std::normal_distribution<double>()(rng));
                    b.open *= f;
                    b.high *= f;
                    b.low *= f;
                    b.close *= f;
                }
            }
        }
        const auto alt = run_backtest(v, momentum_predictor(), plain_selector(), cfg);
        for (std::size_t d = 0; d < cut; ++d) {
            CHECK(alt.selections[d] == base.selections[d]);
            for (std::size_t k = 0; k < base.valuations.size(); ++k) {
                CHECK(alt.valuations[k][d] == base.valuations[k][d]);
            }
        }
        std::vector<Trade> ta;
        std::vector<Trade> tb;
        for (const auto& t : alt.trades) {
            if (t.day <= cut) {
                ta.push_back(t);
            }
        }
        for (const auto& t : base.trades) {
            if (t.day <= cut) {
                tb.push_back(t);
            }
        }
        CHECK(ta == tb);
    }
}

TEST_CASE("a perfect oracle makes money on trending symbols") {
    const auto u = random_universe(5, 30, 80, 0.01);
    std::map<std::string, const Series*> full;
    for (const auto& s : u) {
        full[s.symbol] = &s;
    }
    const auto oracle = [&](const std::string& s, std::span<const Bar> h) {
        auto f = momentum(h);
        if (!f) {
            return f;
        }
        const auto& bars = full.at(s)->bars;
        const std::size_t i = h.size() - 1;
        const std::size_t j = std::min(i + 5, bars.size() - 1);
        f->expected_return = std::log(bars[j].close / bars[i].close);
        return f;
    };
    const auto rep = run_backtest(u, oracle, plain_selector(), BacktestConfig{});
    for (const auto& row : rep.rows) {
        CHECK(row.roi_pct > 0.0);
    }
}

TEST_CASE("reruns are identical and the CSV parses back exactly") {
    const auto u = random_universe(3, 25, 70);
    const auto a = run_backtest(u, momentum_predictor(), plain_selector(), BacktestConfig{});
    const auto b = run_backtest(u, momentum_predictor(), plain_selector(), BacktestConfig{});
    CHECK(render_report(a).table == render_report(b).table);
    CHECK(render_report(a).csv == render_report(b).csv);
    CHECK(trades_text(a) == trades_text(b));
    std::istringstream in(render_report(a).csv);
    CHECK(parse_report_csv(in) == a.rows);
    std::ostringstream vals;
    write_valuations_csv(vals, a);
    const auto text = vals.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 42);
}

TEST_CASE("missing price for an open position is a data error") {
    auto u = random_universe(4, 6, 40);
    const auto cfg = small_config();
    const auto base = run_backtest(u, momentum_predictor(), plain_selector(), cfg);
    const std::string held = base.selections[0][0].symbol;
    for (auto& s : u) {
        if (s.symbol == held) {
            s.bars.erase(s.bars.end() - 3);
        }
    }
    CHECK_THROWS_AS(run_backtest(u, momentum_predictor(), plain_selector(), cfg), DataError);
}

TEST_CASE("backtest configuration validation") {
    CHECK_NOTHROW(BacktestConfig{}.validate());
    BacktestConfig c;
    c.days = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = BacktestConfig{};
    c.subbaskets = {{1, 10, "a"}, {12, 20, "b"}};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = BacktestConfig{};
    c.subbaskets = {{1, 10, "a"}};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = BacktestConfig{};
    c.initial_capital_per_subbasket = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = BacktestConfig{};
    c.score_window = 2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(run_backtest(random_universe(1, 30, 30), momentum_predictor(), plain_selector(), BacktestConfig{}),
                    DataError);
}
