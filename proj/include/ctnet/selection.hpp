#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ctnet::selection {

struct PearsonResult {
    double r = 0.0;
    bool degenerate = false;  // one side had zero variance; r is reported as 0
};

/// Product-moment correlation (two-pass, mean-centred). Throws
/// ContractViolation on unequal lengths or fewer than 3 points.
PearsonResult pearson(std::span<const double> x, std::span<const double> y);

struct CorrelationScore {
    std::string symbol;
    double r = 0.0;
    std::size_t window = 0;
    bool degenerate = false;
};

/// Predicted and realised traces of one symbol, aligned index by index.
/// NaN marks a missing observation.
struct TracePair {
    std::string symbol;
    std::vector<double> predicted;
    std::vector<double> actual;
};

struct ScoreResult {
    std::vector<CorrelationScore> scores;  // input order, skipped symbols omitted
    std::vector<std::string> audit;        // one note per skipped symbol
};

/// Scores the trailing `window` points of every pair.
ScoreResult score_universe(std::span<const TracePair> pairs, std::size_t window);

struct BasketSpec {
    std::vector<std::string> universe;
    std::size_t size = 20;
};

struct BasketEntry {
    std::string symbol;
    double r = 0.0;
    std::size_t rank = 0;  // 1-based

    friend bool operator==(const BasketEntry&, const BasketEntry&) = default;
};

/// Top `spec.size` scores by r descending, ties broken by symbol ascending.
/// Throws SelectionError when there are fewer scores than the basket size.
std::vector<BasketEntry> select_basket(std::span<const CorrelationScore> scores, const BasketSpec& spec);

/// `symbol,r,window,rank,selected`, one row per score in ranked order.
void write_scores_csv(std::ostream& out, std::span<const CorrelationScore> scores,
                      std::span<const BasketEntry> basket);

}  // namespace ctnet::selection
