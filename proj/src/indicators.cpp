#include "ctnet/indicators.hpp"

#include "ctnet/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace ctnet::indicators {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<market_data::Timestamp> stamps(std::span<const Bar> bars) {
    std::vector<market_data::Timestamp> out;
    out.reserve(bars.size());
    for (const auto& b : bars) {
        out.push_back(b.timestamp);
    }
    return out;
}

Line make_line(std::string name, std::vector<double> values, std::size_t warmup) {
    warmup = std::min(warmup, values.size());
    for (std::size_t i = 0; i < warmup; ++i) {
        values[i] = kNaN;
    }
    return Line{std::move(name), std::move(values), warmup};
}

std::vector<double> closes_of(std::span<const Bar> bars) {
    std::vector<double> c;
    c.reserve(bars.size());
    for (const auto& b : bars) {
        c.push_back(b.close);
    }
    return c;
}

std::vector<double> typical_prices(std::span<const Bar> bars) {
    std::vector<double> tp;
    tp.reserve(bars.size());
    for (const auto& b : bars) {
        tp.push_back((b.high + b.low + b.close) / 3.0);
    }
    return tp;
}

/// Trailing mean of `p` values ending at each index >= start + p - 1.
std::vector<double> sma_from(const std::vector<double>& v, std::size_t start, std::size_t p) {
    std::vector<double> out(v.size(), kNaN);
    for (std::size_t i = start + p - 1; i < v.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = i + 1 - p; j <= i; ++j) {
            s += v[j];
        }
        out[i] = s / static_cast<double>(p);
    }
    return out;
}

/// EMA with alpha = 2/(p+1), seeded by the SMA of v[start .. start+p-1].
std::vector<double> ema_from(const std::vector<double>& v, std::size_t start, std::size_t p) {
    std::vector<double> out(v.size(), kNaN);
    const std::size_t seed = start + p - 1;
    if (seed >= v.size()) {
        return out;
    }
    double s = 0.0;
    for (std::size_t j = start; j <= seed; ++j) {
        s += v[j];
    }
    out[seed] = s / static_cast<double>(p);
    const double alpha = 2.0 / (static_cast<double>(p) + 1.0);
    for (std::size_t i = seed + 1; i < v.size(); ++i) {
        out[i] = alpha * v[i] + (1.0 - alpha) * out[i - 1];
    }
    return out;
}

std::vector<double> true_ranges(std::span<const Bar> bars) {
    std::vector<double> tr(bars.size());
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const auto& b = bars[i];
        tr[i] = b.high - b.low;
        if (i > 0) {
            const double pc = bars[i - 1].close;
            tr[i] = std::max({tr[i], std::abs(b.high - pc), std::abs(b.low - pc)});
        }
    }
    return tr;
}

/// Wilder smoothing seeded with the simple mean of the first p values.
std::vector<double> wilder(const std::vector<double>& v, std::size_t start, std::size_t p) {
    std::vector<double> out(v.size(), kNaN);
    const std::size_t seed = start + p - 1;
    if (seed >= v.size()) {
        return out;
    }
    double s = 0.0;
    for (std::size_t j = start; j <= seed; ++j) {
        s += v[j];
    }
    const double pd = static_cast<double>(p);
    out[seed] = s / pd;
    for (std::size_t i = seed + 1; i < v.size(); ++i) {
        out[i] = (out[i - 1] * (pd - 1.0) + v[i]) / pd;
    }
    return out;
}

std::size_t as_size(int p) { return static_cast<std::size_t>(p); }

void require_period(int p, const char* what) {
    if (p < 1) {
        throw ConfigError(std::string(what) + " period must be >= 1");
    }
}

/// 100 - 100/(1 + up/down) with the flat and one-sided limits spelled out.
double ratio_index(double up, double down) {
    if (down == 0.0) {
        return up > 0.0 ? 100.0 : 50.0;
    }
    return 100.0 - 100.0 / (1.0 + up / down);
}

}  // namespace

std::string to_string(Kind kind) {
    switch (kind) {
        case Kind::SMA: return "SMA";
        case Kind::EMA: return "EMA";
        case Kind::MACD: return "MACD";
        case Kind::RSI: return "RSI";
        case Kind::StochasticKD: return "StochasticKD";
        case Kind::CCI: return "CCI";
        case Kind::ATR: return "ATR";
        case Kind::Bollinger: return "Bollinger";
        case Kind::Keltner: return "Keltner";
        case Kind::OBV: return "OBV";
        case Kind::MFI: return "MFI";
        case Kind::SupportResistance: return "SupportResistance";
        case Kind::FibonacciLevels: return "FibonacciLevels";
    }
    return "SMA";
}

Kind parse_kind(std::string_view name) {
    for (auto k : {Kind::SMA, Kind::EMA, Kind::MACD, Kind::RSI, Kind::StochasticKD, Kind::CCI, Kind::ATR,
                   Kind::Bollinger, Kind::Keltner, Kind::OBV, Kind::MFI, Kind::SupportResistance,
                   Kind::FibonacciLevels}) {
        if (to_string(k) == name) {
            return k;
        }
    }
    throw ConfigError("unknown indicator '" + std::string(name) + "'");
}

void IndicatorSpec::validate() const {
    std::size_t expected = 1;
    switch (kind) {
        case Kind::MACD: expected = 3; break;
        case Kind::StochasticKD: expected = 2; break;
        case Kind::OBV: expected = 0; break;
        default: break;
    }
    if (periods.size() != expected) {
        throw ConfigError(to_string(kind) + " takes " + std::to_string(expected) + " period(s)");
    }
    for (int p : periods) {
        if (p < 1) {
            throw ConfigError(to_string(kind) + " periods must be >= 1");
        }
    }
    if (kind == Kind::MACD && !(periods[0] < periods[1])) {
        throw ConfigError("MACD fast period must be below the slow period");
    }
    if ((kind == Kind::SupportResistance || kind == Kind::FibonacciLevels) && periods[0] < 3) {
        throw ConfigError("structure lookback must be >= 3");
    }
    if ((kind == Kind::Bollinger || kind == Kind::Keltner) && !(width > 0.0)) {
        throw ConfigError("band width must be > 0");
    }
}

IndicatorSpec default_spec(Kind kind) {
    switch (kind) {
        case Kind::SMA: return {kind, {20}, 2.0};
        case Kind::EMA: return {kind, {20}, 2.0};
        case Kind::MACD: return {kind, {12, 26, 9}, 2.0};
        case Kind::RSI: return {kind, {14}, 2.0};
        case Kind::StochasticKD: return {kind, {14, 3}, 2.0};
        case Kind::CCI: return {kind, {20}, 2.0};
        case Kind::ATR: return {kind, {14}, 2.0};
        case Kind::Bollinger: return {kind, {20}, 2.0};
        case Kind::Keltner: return {kind, {20}, 2.0};
        case Kind::OBV: return {kind, {}, 2.0};
        case Kind::MFI: return {kind, {14}, 2.0};
        case Kind::SupportResistance: return {kind, {5}, 2.0};
        case Kind::FibonacciLevels: return {kind, {50}, 2.0};
    }
    return {kind, {20}, 2.0};
}

const Line& IndicatorOutput::line(std::string_view name) const {
    for (const auto& l : lines) {
        if (l.name == name) {
            return l;
        }
    }
    throw ContractViolation("indicator output has no line '" + std::string(name) + "'");
}

IndicatorOutput moving_average(std::span<const Bar> bars, Kind kind, int period) {
    require_period(period, "moving average");
    const auto c = closes_of(bars);
    const auto p = as_size(period);
    if (kind == Kind::SMA) {
        return {stamps(bars), {make_line("sma", sma_from(c, 0, p), p - 1)}, {}};
    }
    if (kind == Kind::EMA) {
        return {stamps(bars), {make_line("ema", ema_from(c, 0, p), p - 1)}, {}};
    }
    throw ContractViolation("moving_average takes SMA or EMA");
}

IndicatorOutput macd(std::span<const Bar> bars, int fast, int slow, int signal) {
    require_period(fast, "MACD fast");
    require_period(signal, "MACD signal");
    if (!(fast < slow)) {
        throw ConfigError("MACD fast period must be below the slow period");
    }
    const auto c = closes_of(bars);
    const auto n = c.size();
    const auto f = ema_from(c, 0, as_size(fast));
    const auto s = ema_from(c, 0, as_size(slow));
    std::vector<double> line(n, kNaN);
    const std::size_t start = as_size(slow) - 1;
    for (std::size_t i = start; i < n; ++i) {
        line[i] = f[i] - s[i];
    }
    const auto sig = ema_from(line, start, as_size(signal));
    std::vector<double> hist(n, kNaN);
    const std::size_t sig_start = start + as_size(signal) - 1;
    for (std::size_t i = sig_start; i < n; ++i) {
        hist[i] = line[i] - sig[i];
    }
    return {stamps(bars),
            {make_line("macd", line, start), make_line("signal", sig, sig_start),
             make_line("histogram", hist, sig_start)},
            {}};
}

IndicatorOutput rsi(std::span<const Bar> bars, int period) {
    require_period(period, "RSI");
    const auto n = bars.size();
    const auto p = as_size(period);
    std::vector<double> gains(n, 0.0);
    std::vector<double> losses(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) {
        const double d = bars[i].close - bars[i - 1].close;
        gains[i] = d > 0.0 ? d : 0.0;
        losses[i] = d < 0.0 ? -d : 0.0;
    }
    const auto ag = wilder(gains, 1, p);
    const auto al = wilder(losses, 1, p);
    std::vector<double> out(n, kNaN);
    for (std::size_t i = p; i < n; ++i) {
        out[i] = std::clamp(ratio_index(ag[i], al[i]), 0.0, 100.0);
    }
    return {stamps(bars), {make_line("rsi", out, p)}, {}};
}

IndicatorOutput stochastic_kd(std::span<const Bar> bars, int lookback, int smooth) {
    require_period(lookback, "stochastic lookback");
    require_period(smooth, "stochastic smoothing");
    const auto n = bars.size();
    const auto lb = as_size(lookback);
    std::vector<double> k(n, kNaN);
    for (std::size_t i = lb - 1; i < n; ++i) {
        double hh = bars[i].high;
        double ll = bars[i].low;
        for (std::size_t j = i + 1 - lb; j < i; ++j) {
            hh = std::max(hh, bars[j].high);
            ll = std::min(ll, bars[j].low);
        }
        k[i] = hh > ll ? std::clamp(100.0 * (bars[i].close - ll) / (hh - ll), 0.0, 100.0) : 50.0;
    }
    const auto d = sma_from(k, lb - 1, as_size(smooth));
    return {stamps(bars), {make_line("k", k, lb - 1), make_line("d", d, lb - 1 + as_size(smooth) - 1)}, {}};
}

IndicatorOutput cci(std::span<const Bar> bars, int period) {
    require_period(period, "CCI");
    const auto tp = typical_prices(bars);
    const auto p = as_size(period);
    const auto mean = sma_from(tp, 0, p);
    std::vector<double> out(tp.size(), kNaN);
    for (std::size_t i = p - 1; i < tp.size(); ++i) {
        double dev = 0.0;
        for (std::size_t j = i + 1 - p; j <= i; ++j) {
            dev += std::abs(tp[j] - mean[i]);
        }
        dev /= static_cast<double>(p);
        out[i] = dev > 0.0 ? (tp[i] - mean[i]) / (0.015 * dev) : 0.0;
    }
    return {stamps(bars), {make_line("cci", out, p - 1)}, {}};
}

IndicatorOutput volatility_channel(std::span<const Bar> bars, Kind kind, int period, double width) {
    require_period(period, "volatility");
    const auto p = as_size(period);
    const auto n = bars.size();
    if (kind == Kind::ATR) {
        return {stamps(bars), {make_line("atr", wilder(true_ranges(bars), 0, p), p - 1)}, {}};
    }
    std::vector<double> mid;
    std::vector<double> spread(n, kNaN);
    if (kind == Kind::Bollinger) {
        const auto c = closes_of(bars);
        mid = sma_from(c, 0, p);
        for (std::size_t i = p - 1; i < n; ++i) {
            double ss = 0.0;
            for (std::size_t j = i + 1 - p; j <= i; ++j) {
                ss += (c[j] - mid[i]) * (c[j] - mid[i]);
            }
            spread[i] = width * std::sqrt(ss / static_cast<double>(p));
        }
    } else if (kind == Kind::Keltner) {
        mid = ema_from(closes_of(bars), 0, p);
        const auto atr = wilder(true_ranges(bars), 0, p);
        for (std::size_t i = p - 1; i < n; ++i) {
            spread[i] = width * atr[i];
        }
    } else {
        throw ContractViolation("volatility_channel takes ATR, Bollinger or Keltner");
    }
    std::vector<double> upper(n, kNaN);
    std::vector<double> lower(n, kNaN);
    for (std::size_t i = p - 1; i < n; ++i) {
        upper[i] = mid[i] + spread[i];
        lower[i] = mid[i] - spread[i];
    }
    return {stamps(bars),
            {make_line("upper", upper, p - 1), make_line("mid", mid, p - 1), make_line("lower", lower, p - 1)},
            {}};
}

IndicatorOutput volume_indicator(std::span<const Bar> bars, Kind kind, int period) {
    const auto n = bars.size();
    if (kind == Kind::OBV) {
        std::vector<double> obv(n, 0.0);
        for (std::size_t i = 1; i < n; ++i) {
            const double d = bars[i].close - bars[i - 1].close;
            obv[i] = obv[i - 1] + (d > 0.0 ? bars[i].volume : d < 0.0 ? -bars[i].volume : 0.0);
        }
        return {stamps(bars), {make_line("obv", obv, 0)}, {}};
    }
    if (kind != Kind::MFI) {
        throw ContractViolation("volume_indicator takes OBV or MFI");
    }
    require_period(period, "MFI");
    const auto p = as_size(period);
    const auto tp = typical_prices(bars);
    std::vector<double> pos(n, 0.0);
    std::vector<double> neg(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) {
        const double flow = tp[i] * bars[i].volume;
        if (tp[i] > tp[i - 1]) {
            pos[i] = flow;
        } else if (tp[i] < tp[i - 1]) {
            neg[i] = flow;
        }
    }
    std::vector<double> out(n, kNaN);
    for (std::size_t i = p; i < n; ++i) {
        double up = 0.0;
        double down = 0.0;
        for (std::size_t j = i + 1 - p; j <= i; ++j) {
            up += pos[j];
            down += neg[j];
        }
        out[i] = std::clamp(ratio_index(up, down), 0.0, 100.0);
    }
    return {stamps(bars), {make_line("mfi", out, p)}, {}};
}

IndicatorOutput compute(std::span<const Bar> bars, const IndicatorSpec& spec) {
    spec.validate();
    const auto& p = spec.periods;
    switch (spec.kind) {
        case Kind::SMA:
        case Kind::EMA: return moving_average(bars, spec.kind, p[0]);
        case Kind::MACD: return macd(bars, p[0], p[1], p[2]);
        case Kind::RSI: return rsi(bars, p[0]);
        case Kind::StochasticKD: return stochastic_kd(bars, p[0], p[1]);
        case Kind::CCI: return cci(bars, p[0]);
        case Kind::ATR:
        case Kind::Bollinger:
        case Kind::Keltner: return volatility_channel(bars, spec.kind, p[0], spec.width);
        case Kind::OBV: return volume_indicator(bars, spec.kind, 0);
        case Kind::MFI: return volume_indicator(bars, spec.kind, p[0]);
        case Kind::SupportResistance:
        case Kind::FibonacciLevels: break;
    }
    throw ConfigError(to_string(spec.kind) + " yields price levels, use structure_levels");
}

std::vector<Level> structure_levels(std::span<const Bar> bars, Kind kind, int lookback) {
    if (lookback < 3) {
        throw ConfigError("structure lookback must be >= 3");
    }
    const auto m = as_size(lookback);
    const auto n = bars.size();
    std::vector<Level> out;
    if (kind == Kind::SupportResistance) {
        for (std::size_t i = m; i + m < n; ++i) {
            const double c = bars[i].close;
            bool is_max = true;
            bool is_min = true;
            for (std::size_t j = i - m; j <= i + m; ++j) {
                if (j == i) {
                    continue;
                }
                is_max = is_max && c > bars[j].close;
                is_min = is_min && c < bars[j].close;
            }
            if (is_max) {
                out.push_back(Level{Level::Type::resistance, c, i, 0.0});
            } else if (is_min) {
                out.push_back(Level{Level::Type::support, c, i, 0.0});
            }
        }
        return out;
    }
    if (kind != Kind::FibonacciLevels) {
        throw ContractViolation("structure_levels takes SupportResistance or FibonacciLevels");
    }
    if (n == 0) {
        return out;
    }
    const std::size_t first = n > m ? n - m : 0;
    double hi = bars[first].high;
    double lo = bars[first].low;
    for (std::size_t i = first; i < n; ++i) {
        hi = std::max(hi, bars[i].high);
        lo = std::min(lo, bars[i].low);
    }
    for (double r : kFibonacciRatios) {
        out.push_back(Level{Level::Type::fibonacci, hi - r * (hi - lo), n - 1, r});
    }
    return out;
}

IndicatorSpec adapt_periods(const IndicatorSpec& spec, const cycle::CycleEstimate& estimate,
                            const AdaptiveRule& rule) {
    if (!estimate.valid) {
        return spec;
    }
    const double period = estimate.period;
    auto map = [&](double div) {
        return std::clamp(static_cast<int>(std::lround(period / div)), rule.min_period, rule.max_period);
    };
    IndicatorSpec out = spec;
    switch (spec.kind) {
        case Kind::MACD: {
            int fast = map(rule.macd_fast_div);
            int slow = map(rule.macd_slow_div);
            if (fast >= slow) {
                slow = std::min(fast + 1, rule.max_period);
                fast = slow - 1;
            }
            out.periods = {fast, slow, map(rule.macd_signal_div)};
            break;
        }
        case Kind::RSI: out.periods = {map(rule.rsi_div)}; break;
        case Kind::StochasticKD:
            out.periods = {map(rule.stoch_lookback_div),
                           std::clamp(std::max(rule.stoch_smooth_min,
                                               static_cast<int>(std::lround(period / rule.stoch_smooth_div))),
                                      rule.min_period, rule.max_period)};
            break;
        case Kind::SMA:
        case Kind::EMA:
        case Kind::CCI:
        case Kind::ATR:
        case Kind::Bollinger:
        case Kind::Keltner: out.periods = {map(rule.other_div)}; break;
        // volume and structure kinds keep their configured periods
        case Kind::OBV:
        case Kind::MFI:
        case Kind::SupportResistance:
        case Kind::FibonacciLevels: break;
    }
    out.validate();
    return out;
}

std::vector<double> forward_closes(double last_close, std::span<const double> log_returns) {
    std::vector<double> out;
    out.reserve(log_returns.size());
    double cum = 0.0;
    for (double r : log_returns) {
        cum += r;
        out.push_back(last_close * std::exp(cum));
    }
    return out;
}

IndicatorOutput compute_on_prediction(const Series& actual, const ctrnn::Prediction& pred,
                                      const IndicatorSpec& spec) {
    if (spec.kind == Kind::ATR || spec.kind == Kind::Keltner || spec.kind == Kind::MFI) {
        throw ConfigError(to_string(spec.kind) +
                          " needs true high/low/volume, which a close-only predicted path does not have");
    }
    if (actual.empty()) {
        throw ContractViolation("prediction must be anchored at an actual bar");
    }
    std::vector<Bar> joined = actual.bars;
    const auto& last = actual.bars.back();
    const auto step = market_data::seconds(actual.timeframe);
    const auto path = forward_closes(last.close, pred.values);
    for (std::size_t j = 0; j < path.size(); ++j) {
        const double c = path[j];
        joined.push_back(Bar{last.timestamp + static_cast<std::int64_t>(j + 1) * step, c, c, c, c, 0.0});
    }
    auto out = compute(joined, spec);
    out.forward_begin = actual.size();
    return out;
}

void write_csv(std::ostream& out, const IndicatorOutput& output) {
    out << "timestamp";
    for (const auto& l : output.lines) {
        out << ',' << l.name;
    }
    out << ",predicted\n";
    char buf[64];
    for (std::size_t i = 0; i < output.timestamps.size(); ++i) {
        out << market_data::format_timestamp(output.timestamps[i]);
        for (const auto& l : output.lines) {
            if (l.available(i)) {
                std::snprintf(buf, sizeof buf, ",%.17g", l.values[i]);
                out << buf;
            } else {
                out << ',';
            }
        }
        const bool predicted = output.forward_begin && i >= *output.forward_begin;
        out << ',' << (predicted ? 1 : 0) << '\n';
    }
}

}  // namespace ctnet::indicators
