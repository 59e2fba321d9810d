#pragma once

#include "ctnet/market_data.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace ctnet::test {

using market_data::Bar;
using market_data::Series;
using market_data::Timeframe;
using market_data::Timestamp;

inline Timestamp ts(const char* iso) { return market_data::parse_timestamp(iso); }

/// Geometric random walk with valid OHLC and integer volumes.
inline Series random_series(std::uint64_t seed, std::size_t n, Timeframe tf = Timeframe::m1,
                            Timestamp start = 1704182400 /* 2024-01-02T08:00:00Z */, double vol = 0.01,
                            std::string symbol = "SYM") {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> step(0.0, vol);
    std::uniform_real_distribution<double> wick(0.0, vol);
    std::uniform_int_distribution<int> volume(100, 10000);
    Series s{std::move(symbol), tf, {}};
    double price = 100.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double open = price;
        price *= std::exp(step(rng));
        const double high = std::max(open, price) * (1.0 + wick(rng));
        const double low = std::min(open, price) * (1.0 - wick(rng));
        s.bars.push_back(Bar{start + static_cast<Timestamp>(i) * market_data::seconds(tf), open, high, low, price,
                             static_cast<double>(volume(rng))});
    }
    return s;
}

/// Bars whose close follows `closes`; open is the previous close, wicks are tight.
inline Series series_from_closes(const std::vector<double>& closes, Timeframe tf = Timeframe::m1,
                                 Timestamp start = 1704182400, std::string symbol = "SYM") {
    Series s{std::move(symbol), tf, {}};
    for (std::size_t i = 0; i < closes.size(); ++i) {
        const double open = i == 0 ? closes[0] : closes[i - 1];
        const double c = closes[i];
        s.bars.push_back(Bar{start + static_cast<Timestamp>(i) * market_data::seconds(tf), open,
                             std::max(open, c), std::min(open, c), c, 1000.0});
    }
    return s;
}

inline std::vector<double> sine(std::size_t n, double period, double amplitude = 1.0, double phase = 0.0) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = amplitude * std::sin(2.0 * M_PI * static_cast<double>(i) / period + phase);
    }
    return v;
}

}  // namespace ctnet::test
