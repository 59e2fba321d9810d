#pragma once

#include "ctnet/ctrnn.hpp"
#include "ctnet/cycle.hpp"
#include "ctnet/market_data.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ctnet::indicators {

using market_data::Bar;
using market_data::Series;

enum class Kind {
    SMA,
    EMA,
    MACD,
    RSI,
    StochasticKD,
    CCI,
    ATR,
    Bollinger,
    Keltner,
    OBV,
    MFI,
    SupportResistance,
    FibonacciLevels,
};

std::string to_string(Kind kind);
Kind parse_kind(std::string_view name);

/// Kind plus its periods:
///   SMA/EMA/RSI/CCI/ATR/MFI: {period}
///   MACD: {fast, slow, signal}
///   StochasticKD: {lookback, smooth}
///   Bollinger/Keltner: {period}, band width in `width`
///   OBV: {}
///   SupportResistance/FibonacciLevels: {lookback}
struct IndicatorSpec {
    Kind kind = Kind::SMA;
    std::vector<int> periods;
    double width = 2.0;

    void validate() const;
    friend bool operator==(const IndicatorSpec&, const IndicatorSpec&) = default;
};

/// Murphy-style fixed defaults (MACD 12/26/9, RSI 14, Stochastic 14/3, Bollinger 20/2.0, ...).
IndicatorSpec default_spec(Kind kind);

struct Line {
    std::string name;
    std::vector<double> values;  // NaN where unavailable
    std::size_t warmup = 0;      // leading unavailable entries

    bool available(std::size_t i) const { return i >= warmup && i < values.size(); }
};

struct IndicatorOutput {
    std::vector<market_data::Timestamp> timestamps;
    std::vector<Line> lines;
    /// First index of the forward (predicted) segment, when computed on a prediction.
    std::optional<std::size_t> forward_begin;

    const Line& line(std::string_view name) const;
};

IndicatorOutput moving_average(std::span<const Bar> bars, Kind kind, int period);
IndicatorOutput macd(std::span<const Bar> bars, int fast, int slow, int signal);
IndicatorOutput rsi(std::span<const Bar> bars, int period);
IndicatorOutput stochastic_kd(std::span<const Bar> bars, int lookback, int smooth);
IndicatorOutput cci(std::span<const Bar> bars, int period);
/// kind is ATR, Bollinger or Keltner; Keltner uses `period` for both its EMA and ATR.
IndicatorOutput volatility_channel(std::span<const Bar> bars, Kind kind, int period, double width);
/// kind is OBV or MFI (period ignored for OBV).
IndicatorOutput volume_indicator(std::span<const Bar> bars, Kind kind, int period);

/// Dispatches on spec.kind for every line-valued kind.
IndicatorOutput compute(std::span<const Bar> bars, const IndicatorSpec& spec);

struct Level {
    enum class Type { support, resistance, fibonacci };
    Type type;
    double price;
    std::size_t index = 0;  // bar of the extremum; range end for Fibonacci
    double ratio = 0.0;     // Fibonacci retracement ratio
};

inline constexpr double kFibonacciRatios[] = {0.236, 0.382, 0.5, 0.618, 0.786};

/// SupportResistance: closes that are strict extrema of a centred (2m+1)
/// window, m = lookback. FibonacciLevels: high - ratio*(high - low) over the
/// last `lookback` bars.
std::vector<Level> structure_levels(std::span<const Bar> bars, Kind kind, int lookback);

struct AdaptiveRule {
    double macd_fast_div = 2.0;
    double macd_slow_div = 1.0;
    double macd_signal_div = 4.0;
    double rsi_div = 2.0;
    double stoch_lookback_div = 2.0;
    double stoch_smooth_div = 10.0;
    int stoch_smooth_min = 3;
    double other_div = 2.0;  // SMA, EMA, CCI, ATR, Bollinger, Keltner
    int min_period = 2;
    int max_period = 200;
};

/// Replaces the spec's periods from the cycle length; invalid estimates pass through.
IndicatorSpec adapt_periods(const IndicatorSpec& spec, const cycle::CycleEstimate& estimate,
                            const AdaptiveRule& rule = {});

/// Appends synthetic close-only bars (high = low = close, zero volume) from
/// the predicted log-returns and computes the indicator over the joined path.
/// ATR, Keltner and MFI need real ranges or volume and are refused.
IndicatorOutput compute_on_prediction(const Series& actual, const ctrnn::Prediction& pred,
                                      const IndicatorSpec& spec);

/// Forward price path implied by a prediction, anchored at `last_close`.
std::vector<double> forward_closes(double last_close, std::span<const double> log_returns);

/// timestamp column, one column per line, and a `predicted` flag column.
void write_csv(std::ostream& out, const IndicatorOutput& output);

}  // namespace ctnet::indicators
