#include "ctnet/market_data.hpp"

#include "ctnet/error.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>

namespace ctnet::market_data {

namespace {

constexpr std::int64_t kSecondsPerDay = 86400;

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) {
        --q;
    }
    return q;
}

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view line, char delim) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        if (pos == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return out;
}

bool parse_double(std::string_view text, double& out) {
    if (text.empty()) {
        return false;
    }
    if (text.front() == '+') {
        text.remove_prefix(1);
    }
    const auto* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, out);
    return res.ec == std::errc{} && res.ptr == end && std::isfinite(out);
}

template <typename Int>
bool parse_int(std::string_view text, Int& out) {
    const auto* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, out);
    return res.ec == std::errc{} && res.ptr == end;
}

double median_of(std::vector<double> v) {
    const auto n = v.size();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (n % 2 == 1) {
        return *mid;
    }
    const double upper = *mid;
    const double lower = *std::max_element(v.begin(), mid);
    return 0.5 * (lower + upper);
}

double mad_of(std::span<const double> values) {
    std::vector<double> v(values.begin(), values.end());
    const double med = median_of(v);
    for (auto& x : v) {
        x = std::abs(x - med);
    }
    return median_of(std::move(v));
}

void require_positive_closes(std::span<const Bar> bars) {
    for (const auto& b : bars) {
        if (!(b.close > 0.0)) {
            throw DataError("non-positive close at " + format_timestamp(b.timestamp) +
                            "; clean the series first");
        }
    }
}

struct MeanStd {
    double mean;
    double std;
};

MeanStd mean_std(std::span<const double> v) {
    double sum = 0.0;
    for (double x : v) {
        sum += x;
    }
    const double mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) {
        ss += (x - mean) * (x - mean);
    }
    return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

double zscore(double x, const MeanStd& ms) {
    // a constant window can leave a rounding-level std
    return ms.std > 1e-14 * std::abs(ms.mean) ? (x - ms.mean) / ms.std : 0.0;
}

}  // namespace

std::int64_t seconds(Timeframe tf) {
    switch (tf) {
        case Timeframe::m1: return 60;
        case Timeframe::m3: return 180;
        case Timeframe::m5: return 300;
        case Timeframe::m15: return 900;
        case Timeframe::d1: return kSecondsPerDay;
    }
    return 60;
}

std::string to_string(Timeframe tf) {
    switch (tf) {
        case Timeframe::m1: return "1m";
        case Timeframe::m3: return "3m";
        case Timeframe::m5: return "5m";
        case Timeframe::m15: return "15m";
        case Timeframe::d1: return "1d";
    }
    return "1m";
}

Timeframe parse_timeframe(std::string_view text) {
    if (text == "1m") return Timeframe::m1;
    if (text == "3m") return Timeframe::m3;
    if (text == "5m") return Timeframe::m5;
    if (text == "15m") return Timeframe::m15;
    if (text == "1d") return Timeframe::d1;
    throw ConfigError("unknown timeframe '" + std::string(text) + "' (expected 1m, 3m, 5m, 15m or 1d)");
}

Timestamp parse_timestamp(std::string_view text) {
    text = trim(text);
    // YYYY-MM-DDTHH:MM:SS[Z]
    if (!text.empty() && (text.back() == 'Z' || text.back() == 'z')) {
        text.remove_suffix(1);
    }
    if (text.size() != 19 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') ||
        text[13] != ':' || text[16] != ':') {
        throw DataError("malformed timestamp '" + std::string(text) + "'");
    }
    int y = 0;
    unsigned mo = 0, d = 0;
    int hh = 0, mm = 0, ss = 0;
    if (!parse_int(text.substr(0, 4), y) || !parse_int(text.substr(5, 2), mo) || !parse_int(text.substr(8, 2), d) ||
        !parse_int(text.substr(11, 2), hh) || !parse_int(text.substr(14, 2), mm) ||
        !parse_int(text.substr(17, 2), ss)) {
        throw DataError("malformed timestamp '" + std::string(text) + "'");
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{mo}, std::chrono::day{d}};
    if (!ymd.ok() || hh > 23 || mm > 59 || ss > 59 || hh < 0 || mm < 0 || ss < 0) {
        throw DataError("invalid timestamp '" + std::string(text) + "'");
    }
    const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
    return static_cast<Timestamp>(days) * kSecondsPerDay + hh * 3600 + mm * 60 + ss;
}

std::string format_timestamp(Timestamp ts) {
    const auto day = floor_div(ts, kSecondsPerDay);
    const auto tod = ts - day * kSecondsPerDay;
    const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{day}}};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(tod / 3600), static_cast<int>((tod % 3600) / 60), static_cast<int>(tod % 60));
    return buf;
}

void validate_bar(const Bar& b) {
    if (!std::isfinite(b.open) || !std::isfinite(b.high) || !std::isfinite(b.low) || !std::isfinite(b.close) ||
        !std::isfinite(b.volume)) {
        throw ValidationError("non-finite field in bar at " + format_timestamp(b.timestamp));
    }
    if (!(b.low <= b.high) || !(b.low <= b.open && b.open <= b.high) || !(b.low <= b.close && b.close <= b.high)) {
        throw ValidationError("OHLC ordering violated at " + format_timestamp(b.timestamp));
    }
    if (b.volume < 0.0) {
        throw ValidationError("negative volume at " + format_timestamp(b.timestamp));
    }
}

std::vector<double> Series::closes() const {
    std::vector<double> out;
    out.reserve(bars.size());
    for (const auto& b : bars) {
        out.push_back(b.close);
    }
    return out;
}

void validate_series(const Series& series) {
    for (std::size_t i = 0; i < series.bars.size(); ++i) {
        validate_bar(series.bars[i]);
        if (i > 0 && series.bars[i].timestamp <= series.bars[i - 1].timestamp) {
            throw ValidationError("timestamps not strictly increasing at " +
                                  format_timestamp(series.bars[i].timestamp));
        }
    }
}

GapPolicy parse_gap_policy(std::string_view text) {
    if (text == "split_sessions") return GapPolicy::split_sessions;
    if (text == "carry_forward") return GapPolicy::carry_forward;
    if (text == "drop_overnight") return GapPolicy::drop_overnight;
    throw ConfigError("unknown gap policy '" + std::string(text) + "'");
}

std::string to_string(GapPolicy policy) {
    switch (policy) {
        case GapPolicy::split_sessions: return "split_sessions";
        case GapPolicy::carry_forward: return "carry_forward";
        case GapPolicy::drop_overnight: return "drop_overnight";
    }
    return "split_sessions";
}

void CleaningPolicy::validate() const {
    if (!(outlier_threshold > 0.0)) {
        throw ConfigError("outlier_threshold must be > 0");
    }
    if (outlier_window < 8) {
        throw ConfigError("outlier_window must be >= 8");
    }
}

void SessionCalendar::validate() const {
    if (session_open < 0 || session_close > kSecondsPerDay || !(session_open < session_close)) {
        throw ConfigError("session_open must precede session_close within one day");
    }
}

std::int64_t day_index(Timestamp ts) { return floor_div(ts, kSecondsPerDay); }

int time_of_day(Timestamp ts) { return static_cast<int>(ts - day_index(ts) * kSecondsPerDay); }

bool SessionCalendar::is_trading_day(Timestamp ts) const {
    // 1970-01-01 was a Thursday.
    const auto weekday = static_cast<std::size_t>((day_index(ts) % 7 + 7 + 4) % 7);
    return trading_days[weekday];
}

bool SessionCalendar::in_session(Timestamp ts) const {
    const int tod = time_of_day(ts);
    return is_trading_day(ts) && tod >= session_open && tod < session_close;
}

namespace {

Timeframe infer_timeframe(const std::vector<Bar>& bars) {
    std::int64_t min_gap = std::numeric_limits<std::int64_t>::max();
    for (std::size_t i = 1; i < bars.size(); ++i) {
        min_gap = std::min(min_gap, bars[i].timestamp - bars[i - 1].timestamp);
    }
    if (bars.size() < 2) {
        return Timeframe::m1;
    }
    for (auto tf : {Timeframe::m1, Timeframe::m3, Timeframe::m5, Timeframe::m15, Timeframe::d1}) {
        if (seconds(tf) == min_gap) {
            return tf;
        }
    }
    if (min_gap > kSecondsPerDay) {
        return Timeframe::d1;
    }
    throw ValidationError("bar spacing of " + std::to_string(min_gap) +
                          " s does not match a supported timeframe");
}

Series parse_rows(std::istream& in, std::string symbol) {
    std::string line;
    std::size_t line_no = 0;
    std::array<int, 6> column{-1, -1, -1, -1, -1, -1};
    static constexpr std::array<std::string_view, 6> names{"timestamp", "open", "high", "low", "close", "volume"};
    bool have_header = false;
    std::size_t width = 0;
    std::vector<std::pair<std::size_t, Bar>> rows;

    while (std::getline(in, line)) {
        ++line_no;
        const auto view = trim(line);
        if (view.empty()) {
            continue;
        }
        const auto fields = split(view, ',');
        if (!have_header) {
            for (std::size_t c = 0; c < fields.size(); ++c) {
                std::string lower(fields[c]);
                std::transform(lower.begin(), lower.end(), lower.begin(),
                               [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
                for (std::size_t k = 0; k < names.size(); ++k) {
                    if (lower == names[k]) {
                        column[k] = static_cast<int>(c);
                    }
                }
            }
            for (std::size_t k = 0; k < names.size(); ++k) {
                if (column[k] < 0) {
                    throw ParseError(line_no, "header is missing column '" + std::string(names[k]) + "'");
                }
            }
            width = fields.size();
            have_header = true;
            continue;
        }
        if (fields.size() != width) {
            throw ParseError(line_no, "expected " + std::to_string(width) + " fields, found " +
                                          std::to_string(fields.size()));
        }
        Bar bar;
        try {
            bar.timestamp = parse_timestamp(fields[static_cast<std::size_t>(column[0])]);
        } catch (const DataError& e) {
            throw ParseError(line_no, e.what());
        }
        double* targets[5] = {&bar.open, &bar.high, &bar.low, &bar.close, &bar.volume};
        for (std::size_t k = 1; k < names.size(); ++k) {
            const auto field = fields[static_cast<std::size_t>(column[k])];
            if (!parse_double(field, *targets[k - 1])) {
                throw ParseError(line_no, "bad " + std::string(names[k]) + " value '" + std::string(field) + "'");
            }
        }
        try {
            validate_bar(bar);
        } catch (const ValidationError& e) {
            throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
        }
        rows.emplace_back(line_no, bar);
    }
    if (!have_header) {
        throw ParseError(line_no, "missing header row");
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) { return a.second.timestamp < b.second.timestamp; });
    Series series;
    series.symbol = std::move(symbol);
    series.bars.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i > 0 && rows[i].second.timestamp == rows[i - 1].second.timestamp) {
            throw ValidationError("duplicate timestamp " + format_timestamp(rows[i].second.timestamp) +
                                  " (lines " + std::to_string(rows[i - 1].first) + " and " +
                                  std::to_string(rows[i].first) + ")");
        }
        series.bars.push_back(rows[i].second);
    }
    return series;
}

}  // namespace

Series parse_csv(std::istream& in, std::string symbol) {
    auto series = parse_rows(in, std::move(symbol));
    series.timeframe = infer_timeframe(series.bars);
    return series;
}

Series parse_csv(std::istream& in, std::string symbol, Timeframe timeframe) {
    auto series = parse_rows(in, std::move(symbol));
    series.timeframe = timeframe;
    return series;
}

void write_csv(std::ostream& out, const Series& series) {
    out << "timestamp,open,high,low,close,volume\n";
    char buf[256];
    for (const auto& b : series.bars) {
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g\n", format_timestamp(b.timestamp).c_str(),
                      b.open, b.high, b.low, b.close, b.volume);
        out << buf;
    }
}

Series resample(const Series& series, Timeframe target, const SessionCalendar& calendar) {
    const auto src = seconds(series.timeframe);
    const auto tgt = seconds(target);
    if (tgt % src != 0) {
        throw ConfigError("cannot resample " + to_string(series.timeframe) + " to " + to_string(target) +
                          ": target is not an integer multiple of the source");
    }
    Series out{series.symbol, target, {}};
    if (tgt == src) {
        out.bars = series.bars;
        return out;
    }
    auto bucket_of = [&](Timestamp ts) -> Timestamp {
        const auto day_start = day_index(ts) * kSecondsPerDay;
        if (target == Timeframe::d1) {
            return day_start;
        }
        const auto anchor = day_start + calendar.session_open;
        return anchor + floor_div(ts - anchor, tgt) * tgt;
    };
    for (const auto& b : series.bars) {
        const auto key = bucket_of(b.timestamp);
        if (out.bars.empty() || out.bars.back().timestamp != key) {
            out.bars.push_back(Bar{key, b.open, b.high, b.low, b.close, b.volume});
            continue;
        }
        auto& agg = out.bars.back();
        agg.high = std::max(agg.high, b.high);
        agg.low = std::min(agg.low, b.low);
        agg.close = b.close;
        agg.volume += b.volume;
    }
    return out;
}

std::vector<double> log_returns(std::span<const Bar> bars) {
    std::vector<double> r(bars.size(), 0.0);
    for (std::size_t i = 1; i < bars.size(); ++i) {
        r[i] = std::log(bars[i].close / bars[i - 1].close);
    }
    return r;
}

CleanResult remove_outliers(const Series& series, const CleaningPolicy& policy) {
    policy.validate();
    CleanResult result{series, {}, false};
    if (series.size() < policy.outlier_window) {
        result.too_short = true;
        return result;
    }
    require_positive_closes(series.bars);
    const auto w = policy.outlier_window;
    auto& bars = result.series.bars;
    bool changed = true;
    while (changed) {
        changed = false;
        const auto r = log_returns(bars);
        // returns r[i-w .. i-1] must all exist (index >= 1), and bar i+1 must exist
        for (std::size_t i = w + 1; i + 1 < bars.size(); ++i) {
            const double mad = mad_of(std::span<const double>(r).subspan(i - w, w));
            if (!(std::abs(r[i]) > policy.outlier_threshold * mad)) {
                continue;
            }
            const double revert = std::abs(std::log(bars[i + 1].close / bars[i - 1].close));
            if (revert <= mad) {
                result.removed.push_back(bars[i]);
                bars.erase(bars.begin() + static_cast<std::ptrdiff_t>(i));
                changed = true;
                break;
            }
        }
    }
    std::sort(result.removed.begin(), result.removed.end(),
              [](const Bar& a, const Bar& b) { return a.timestamp < b.timestamp; });
    return result;
}

void write_removed_csv(std::ostream& out, std::span<const Bar> removed, std::string_view reason) {
    out << "timestamp,open,high,low,close,volume,reason\n";
    char buf[256];
    for (const auto& b : removed) {
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,", format_timestamp(b.timestamp).c_str(),
                      b.open, b.high, b.low, b.close, b.volume);
        out << buf << reason << '\n';
    }
}

std::vector<Segment> mark_session_gaps(const Series& series, const SessionCalendar& calendar,
                                       const CleaningPolicy& policy) {
    calendar.validate();
    std::vector<Segment> out;
    if (series.empty()) {
        return out;
    }
    auto joined = [&](std::vector<Bar> bars) {
        Segment seg{Series{series.symbol, series.timeframe, std::move(bars)}, {}};
        for (std::size_t i = 1; i < seg.series.bars.size(); ++i) {
            if (day_index(seg.series.bars[i].timestamp) != day_index(seg.series.bars[i - 1].timestamp)) {
                seg.discontinuities.push_back(i);
            }
        }
        return seg;
    };
    switch (policy.gap_policy) {
        case GapPolicy::split_sessions: {
            for (const auto& b : series.bars) {
                if (out.empty() || day_index(out.back().series.bars.back().timestamp) != day_index(b.timestamp)) {
                    out.push_back(Segment{Series{series.symbol, series.timeframe, {}}, {}});
                }
                out.back().series.bars.push_back(b);
            }
            break;
        }
        case GapPolicy::carry_forward:
            out.push_back(joined(series.bars));
            break;
        case GapPolicy::drop_overnight: {
            std::vector<Bar> kept;
            for (const auto& b : series.bars) {
                if (calendar.in_session(b.timestamp)) {
                    kept.push_back(b);
                }
            }
            if (!kept.empty()) {
                out.push_back(joined(std::move(kept)));
            }
            break;
        }
    }
    return out;
}

std::vector<Feature> normalize(const Series& series, std::size_t window) {
    if (window < 2) {
        throw ConfigError("normalization window must be >= 2");
    }
    require_positive_closes(series.bars);
    std::vector<Feature> out;
    const auto n = series.size();
    if (n <= window) {
        return out;
    }
    const auto r = log_returns(series.bars);
    std::vector<double> lv(n);
    for (std::size_t i = 0; i < n; ++i) {
        lv[i] = std::log1p(series.bars[i].volume);
    }
    out.reserve(n - window);
    for (std::size_t t = window; t < n; ++t) {
        const auto first = t + 1 - window;
        const auto rs = mean_std(std::span<const double>(r).subspan(first, window));
        const auto vs = mean_std(std::span<const double>(lv).subspan(first, window));
        const auto& b = series.bars[t];
        out.push_back(Feature{b.timestamp, {zscore(r[t], rs), zscore(lv[t], vs), (b.high - b.low) / b.close}});
    }
    return out;
}

}  // namespace ctnet::market_data
