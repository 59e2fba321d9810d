#pragma once

#include "ctnet/market_data.hpp"
#include "ctnet/selection.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ctnet::backtest {

using market_data::Bar;
using market_data::Series;
using market_data::Timestamp;

enum class Direction { long_side, short_side };

std::string to_string(Direction d);

struct Position {
    std::string symbol;
    Direction direction = Direction::long_side;
    double quantity = 0.0;
    double entry_price = 0.0;
    std::size_t entry_day = 0;
};

/// Long: qty*price. Short: qty*(2*entry - price), i.e. the entry notional plus short P&L.
double position_value(const Position& p, double price);

struct PortfolioState {
    double cash = 0.0;
    std::vector<Position> positions;
    std::size_t day = 0;
};

using PriceMap = std::map<std::string, double, std::less<>>;

/// cash + value of every open position. Throws DataError when a price is missing.
double mark_to_market(const PortfolioState& state, const PriceMap& closes);

struct SubBasket {
    std::size_t first_rank = 1;
    std::size_t last_rank = 10;
    std::string label;
};

struct BacktestConfig {
    double initial_capital_per_subbasket = 1000.0;
    std::size_t days = 41;
    std::size_t basket_size = 20;
    std::vector<SubBasket> subbaskets{{1, 10, "0 – 10"}, {11, 20, "11 – 20"}};
    std::size_t score_window = 20;

    /// days >= 1 and the sub-baskets tile ranks 1..basket_size exactly.
    void validate() const;
};

/// What a predictor reports for one symbol given its history up to the current day.
struct Forecast {
    std::vector<double> predicted;  // trace scored against `actual`
    std::vector<double> actual;
    double expected_return = 0.0;  // predicted k-step cumulative log-return
};

/// Sees only bars up to and including the decision day.
using Predictor = std::function<std::optional<Forecast>(const std::string& symbol, std::span<const Bar> history)>;
using Selector = std::function<std::vector<selection::BasketEntry>(std::span<const selection::CorrelationScore>,
                                                                   const selection::BasketSpec&)>;

struct Trade {
    std::size_t day = 0;  // 1-based test day
    std::string symbol;
    std::string action;  // open | close
    Direction direction = Direction::long_side;
    double quantity = 0.0;
    double price = 0.0;
    std::size_t subbasket = 0;

    friend bool operator==(const Trade&, const Trade&) = default;
};

struct ReportRow {
    std::string label;
    std::size_t days = 0;
    double initial_capital = 0.0;
    double final_valuation = 0.0;
    double roi_pct = 0.0;
    std::size_t peak_day = 0;  // 1-based, earliest on ties
    double peak_valuation = 0.0;
    double peak_roi_pct = 0.0;

    friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

/// Builds a row from a daily valuation trace.
ReportRow make_row(std::string label, double initial_capital, std::span<const double> trace);

struct BacktestReport {
    std::vector<ReportRow> rows;
    std::vector<Timestamp> day_timestamps;
    std::vector<std::vector<double>> valuations;  // [subbasket][day]
    std::vector<Trade> trades;
    std::vector<std::vector<selection::BasketEntry>> selections;  // per day
};

/// Daily loop over the last `cfg.days` timestamps of the universe: score,
/// select, rotate positions at the close, mark to market.
BacktestReport run_backtest(std::span<const Series> universe, const Predictor& predictor, const Selector& selector,
                            const BacktestConfig& cfg);

struct RenderedReport {
    std::string table;
    std::string csv;
};

/// One table row, tab separated, percentages to two decimals.
std::string render_row(const ReportRow& row);
RenderedReport render_report(const BacktestReport& report);
std::string report_header();

std::vector<ReportRow> parse_report_csv(std::istream& in);
void write_valuations_csv(std::ostream& out, const BacktestReport& report);
void write_trades_csv(std::ostream& out, const BacktestReport& report);

}  // namespace ctnet::backtest
