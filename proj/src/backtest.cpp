#include "ctnet/backtest.hpp"

#include "ctnet/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace ctnet::backtest {

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string percent(double v) {
    if (std::abs(v) < 0.005) {
        v = 0.0;  // no "-0.00%"
    }
    return fmt("%.2f", v) + "%";
}

std::string whole(double v) {
    const double r = std::round(v);
    return fmt("%.0f", r == 0.0 ? 0.0 : r);
}

std::string exact(double v) { return fmt("%.17g", v); }

double parse_number(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw DataError("bad number '" + s + "' in report CSV");
    }
    return v;
}

const Bar* bar_at(const Series& s, Timestamp ts) {
    const auto it = std::lower_bound(s.bars.begin(), s.bars.end(), ts,
                                     [](const Bar& b, Timestamp t) { return b.timestamp < t; });
    return (it != s.bars.end() && it->timestamp == ts) ? &*it : nullptr;
}

}  // namespace

std::string to_string(Direction d) { return d == Direction::long_side ? "long" : "short"; }

double position_value(const Position& p, double price) {
    return p.direction == Direction::long_side ? p.quantity * price
                                               : p.quantity * (2.0 * p.entry_price - price);
}

double mark_to_market(const PortfolioState& state, const PriceMap& closes) {
    double v = state.cash;
    for (const auto& p : state.positions) {
        const auto it = closes.find(p.symbol);
        if (it == closes.end()) {
            throw DataError("no price for open position in " + p.symbol);
        }
        v += position_value(p, it->second);
    }
    return v;
}

void BacktestConfig::validate() const {
    if (days < 1) {
        throw ConfigError("backtest needs at least one day");
    }
    if (!(initial_capital_per_subbasket > 0.0)) {
        throw ConfigError("initial capital must be > 0");
    }
    if (score_window < 3) {
        throw ConfigError("score window must be >= 3");
    }
    std::vector<SubBasket> sorted = subbaskets;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first_rank < b.first_rank; });
    std::size_t next = 1;
    for (const auto& sb : sorted) {
        if (sb.first_rank != next || sb.last_rank < sb.first_rank) {
            throw ConfigError("sub-baskets must tile ranks 1.." + std::to_string(basket_size) + " without gaps");
        }
        next = sb.last_rank + 1;
    }
    if (next != basket_size + 1) {
        throw ConfigError("sub-baskets must cover the basket exactly");
    }
}

ReportRow make_row(std::string label, double initial_capital, std::span<const double> trace) {
    ReportRow row;
    row.label = std::move(label);
    row.days = trace.size();
    row.initial_capital = initial_capital;
    if (trace.empty()) {
        row.final_valuation = initial_capital;
        row.peak_valuation = initial_capital;
        return row;
    }
    row.final_valuation = trace.back();
    row.roi_pct = (row.final_valuation / initial_capital - 1.0) * 100.0;
    const auto peak = std::max_element(trace.begin(), trace.end());  // first maximum
    row.peak_day = static_cast<std::size_t>(peak - trace.begin()) + 1;
    row.peak_valuation = *peak;
    row.peak_roi_pct = (row.peak_valuation / initial_capital - 1.0) * 100.0;
    return row;
}

BacktestReport run_backtest(std::span<const Series> universe, const Predictor& predictor, const Selector& selector,
                            const BacktestConfig& cfg) {
    cfg.validate();
    std::set<Timestamp> axis_set;
    for (const auto& s : universe) {
        for (const auto& b : s.bars) {
            axis_set.insert(b.timestamp);
        }
    }
    const std::vector<Timestamp> axis(axis_set.begin(), axis_set.end());
    if (axis.size() < cfg.days) {
        throw DataError("universe covers " + std::to_string(axis.size()) + " timestamps, backtest needs " +
                        std::to_string(cfg.days));
    }
    const std::size_t start = axis.size() - cfg.days;

    BacktestReport report;
    report.valuations.assign(cfg.subbaskets.size(), {});
    std::vector<PortfolioState> books(cfg.subbaskets.size());
    for (auto& b : books) {
        b.cash = cfg.initial_capital_per_subbasket;
    }

    for (std::size_t d = start; d < axis.size(); ++d) {
        const Timestamp ts = axis[d];
        const std::size_t day = d - start + 1;
        report.day_timestamps.push_back(ts);

        PriceMap closes;
        std::vector<selection::TracePair> pairs;
        std::unordered_map<std::string, double> expected;
        for (const auto& s : universe) {
            const Bar* bar = bar_at(s, ts);
            if (bar == nullptr) {
                continue;
            }
            closes.emplace(s.symbol, bar->close);
            const auto end = static_cast<std::size_t>(bar - s.bars.data()) + 1;
            auto fc = predictor(s.symbol, std::span<const Bar>(s.bars.data(), end));
            if (!fc) {
                continue;
            }
            expected.emplace(s.symbol, fc->expected_return);
            pairs.push_back(selection::TracePair{s.symbol, std::move(fc->predicted), std::move(fc->actual)});
        }

        const auto scored = selection::score_universe(pairs, cfg.score_window);
        selection::BasketSpec spec;
        for (const auto& sc : scored.scores) {
            spec.universe.push_back(sc.symbol);
        }
        spec.size = std::min(cfg.basket_size, scored.scores.size());
        const auto basket = selector(scored.scores, spec);
        report.selections.push_back(basket);

        for (std::size_t k = 0; k < cfg.subbaskets.size(); ++k) {
            const auto& sb = cfg.subbaskets[k];
            auto& book = books[k];
            book.day = day;
            std::vector<const selection::BasketEntry*> members;
            for (const auto& e : basket) {
                if (e.rank >= sb.first_rank && e.rank <= sb.last_rank) {
                    members.push_back(&e);
                }
            }
            auto is_member = [&](const std::string& sym) {
                return std::any_of(members.begin(), members.end(), [&](const auto* e) { return e->symbol == sym; });
            };
            // exits
            std::vector<Position> kept;
            for (auto& p : book.positions) {
                const auto it = closes.find(p.symbol);
                if (it == closes.end()) {
                    throw DataError("missing price for open position " + p.symbol + " on " +
                                    market_data::format_timestamp(ts));
                }
                if (is_member(p.symbol)) {
                    kept.push_back(std::move(p));
                    continue;
                }
                book.cash += position_value(p, it->second);
                report.trades.push_back(Trade{day, p.symbol, "close", p.direction, p.quantity, it->second, k});
            }
            book.positions = std::move(kept);
            // entries, equal weight over the cash freed up
            std::vector<const selection::BasketEntry*> entrants;
            for (const auto* e : members) {
                const bool held = std::any_of(book.positions.begin(), book.positions.end(),
                                              [&](const Position& p) { return p.symbol == e->symbol; });
                if (!held) {
                    entrants.push_back(e);
                }
            }
            if (!entrants.empty()) {
                const double alloc = book.cash / static_cast<double>(entrants.size());
                for (const auto* e : entrants) {
                    const double price = closes.at(e->symbol);
                    if (!(price > 0.0)) {
                        throw DataError("non-positive price for " + e->symbol);
                    }
                    const Direction dir =
                        expected.at(e->symbol) >= 0.0 ? Direction::long_side : Direction::short_side;
                    Position p{e->symbol, dir, alloc / price, price, day};
                    book.cash -= alloc;
                    report.trades.push_back(Trade{day, p.symbol, "open", dir, p.quantity, price, k});
                    book.positions.push_back(std::move(p));
                }
            }
            report.valuations[k].push_back(mark_to_market(book, closes));
        }
    }

    for (std::size_t k = 0; k < cfg.subbaskets.size(); ++k) {
        report.rows.push_back(
            make_row(cfg.subbaskets[k].label, cfg.initial_capital_per_subbasket, report.valuations[k]));
    }
    return report;
}

std::string report_header() {
    return "Position in portfolio\tNo. of days in test\tInitial capital\tValuation at end\tROI\tPeak Day\t"
           "Valuation at Peak\tPeak ROI";
}

std::string render_row(const ReportRow& row) {
    return row.label + '\t' + std::to_string(row.days) + '\t' + whole(row.initial_capital) + '\t' +
           whole(row.final_valuation) + '\t' + percent(row.roi_pct) + '\t' + std::to_string(row.peak_day) + '\t' +
           whole(row.peak_valuation) + '\t' + percent(row.peak_roi_pct);
}

RenderedReport render_report(const BacktestReport& report) {
    RenderedReport out;
    out.table = report_header() + '\n';
    out.csv = "position,days,initial_capital,final_valuation,roi_pct,peak_day,peak_valuation,peak_roi_pct\n";
    for (const auto& row : report.rows) {
        out.table += render_row(row) + '\n';
        out.csv += '"' + row.label + "\"," + std::to_string(row.days) + ',' + exact(row.initial_capital) + ',' +
                   exact(row.final_valuation) + ',' + exact(row.roi_pct) + ',' + std::to_string(row.peak_day) + ',' +
                   exact(row.peak_valuation) + ',' + exact(row.peak_roi_pct) + '\n';
    }
    return out;
}

std::vector<ReportRow> parse_report_csv(std::istream& in) {
    std::string line;
    std::vector<ReportRow> rows;
    if (!std::getline(in, line)) {
        throw DataError("empty report CSV");
    }
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        ReportRow row;
        std::size_t pos = 0;
        if (line.front() == '"') {
            const auto close = line.find('"', 1);
            if (close == std::string::npos) {
                throw DataError("unterminated label in report CSV");
            }
            row.label = line.substr(1, close - 1);
            pos = close + 2;
        } else {
            const auto comma = line.find(',');
            row.label = line.substr(0, comma);
            pos = comma + 1;
        }
        std::vector<std::string> fields;
        std::stringstream rest(line.substr(pos));
        std::string f;
        while (std::getline(rest, f, ',')) {
            fields.push_back(f);
        }
        if (fields.size() != 7) {
            throw DataError("report CSV row has " + std::to_string(fields.size() + 1) + " fields, expected 8");
        }
        row.days = static_cast<std::size_t>(parse_number(fields[0]));
        row.initial_capital = parse_number(fields[1]);
        row.final_valuation = parse_number(fields[2]);
        row.roi_pct = parse_number(fields[3]);
        row.peak_day = static_cast<std::size_t>(parse_number(fields[4]));
        row.peak_valuation = parse_number(fields[5]);
        row.peak_roi_pct = parse_number(fields[6]);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_valuations_csv(std::ostream& out, const BacktestReport& report) {
    out << "day,timestamp";
    for (std::size_t k = 0; k < report.valuations.size(); ++k) {
        out << ",subbasket_" << k;
    }
    out << ",total\n";
    for (std::size_t d = 0; d < report.day_timestamps.size(); ++d) {
        out << (d + 1) << ',' << market_data::format_timestamp(report.day_timestamps[d]);
        double total = 0.0;
        for (const auto& trace : report.valuations) {
            out << ',' << exact(trace[d]);
            total += trace[d];
        }
        out << ',' << exact(total) << '\n';
    }
}

void write_trades_csv(std::ostream& out, const BacktestReport& report) {
    out << "day,symbol,action,direction,qty,price\n";
    for (const auto& t : report.trades) {
        out << t.day << ',' << t.symbol << ',' << t.action << ',' << to_string(t.direction) << ','
            << exact(t.quantity) << ',' << exact(t.price) << '\n';
    }
}

}  // namespace ctnet::backtest
