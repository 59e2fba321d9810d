#include "ctnet/selection.hpp"

#include "ctnet/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <unordered_map>

namespace ctnet::selection {

namespace {

bool ranks_before(const CorrelationScore& a, const CorrelationScore& b) {
    if (a.r != b.r) {
        return a.r > b.r;
    }
    return a.symbol < b.symbol;
}

}  // namespace

PearsonResult pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw ContractViolation("pearson needs sequences of equal length");
    }
    if (x.size() < 3) {
        throw ContractViolation("pearson needs at least 3 points");
    }
    const auto n = static_cast<double>(x.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) {
        return {0.0, true};
    }
    return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

ScoreResult score_universe(std::span<const TracePair> pairs, std::size_t window) {
    if (window < 3) {
        throw ConfigError("correlation window must be >= 3");
    }
    ScoreResult out;
    for (const auto& pair : pairs) {
        if (pair.predicted.size() != pair.actual.size()) {
            throw ContractViolation("traces of " + pair.symbol + " are not aligned");
        }
        if (pair.actual.size() < window) {
            out.audit.push_back(pair.symbol + ": only " + std::to_string(pair.actual.size()) + " of " +
                                std::to_string(window) + " points available");
            continue;
        }
        const auto first = pair.actual.size() - window;
        const std::span<const double> p(pair.predicted.data() + first, window);
        const std::span<const double> a(pair.actual.data() + first, window);
        const bool missing = std::any_of(p.begin(), p.end(), [](double v) { return !std::isfinite(v); }) ||
                             std::any_of(a.begin(), a.end(), [](double v) { return !std::isfinite(v); });
        if (missing) {
            out.audit.push_back(pair.symbol + ": missing data within the scoring window");
            continue;
        }
        const auto res = pearson(p, a);
        out.scores.push_back(CorrelationScore{pair.symbol, res.r, window, res.degenerate});
    }
    return out;
}

std::vector<BasketEntry> select_basket(std::span<const CorrelationScore> scores, const BasketSpec& spec) {
    if (scores.size() < spec.size) {
        throw SelectionError("basket of " + std::to_string(spec.size) + " needs at least that many scores, got " +
                             std::to_string(scores.size()));
    }
    std::vector<CorrelationScore> sorted(scores.begin(), scores.end());
    const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(spec.size);
    std::partial_sort(sorted.begin(), mid, sorted.end(), ranks_before);
    std::vector<BasketEntry> basket;
    basket.reserve(spec.size);
    for (std::size_t i = 0; i < spec.size; ++i) {
        basket.push_back(BasketEntry{sorted[i].symbol, sorted[i].r, i + 1});
    }
    return basket;
}

void write_scores_csv(std::ostream& out, std::span<const CorrelationScore> scores,
                      std::span<const BasketEntry> basket) {
    std::unordered_map<std::string, std::size_t> selected;
    for (const auto& e : basket) {
        selected.emplace(e.symbol, e.rank);
    }
    std::vector<CorrelationScore> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end(), ranks_before);
    out << "symbol,r,window,rank,selected\n";
    char buf[64];
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const auto& s = sorted[i];
        std::snprintf(buf, sizeof buf, "%.17g", s.r);
        out << s.symbol << ',' << buf << ',' << s.window << ',' << (i + 1) << ','
            << (selected.count(s.symbol) ? 1 : 0) << '\n';
    }
}

}  // namespace ctnet::selection
