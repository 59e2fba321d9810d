#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ctnet::market_data {

/// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

enum class Timeframe { m1, m3, m5, m15, d1 };

std::int64_t seconds(Timeframe tf);
std::string to_string(Timeframe tf);
Timeframe parse_timeframe(std::string_view text);

/// ISO-8601 UTC ("2024-01-02T08:00:00Z"; the trailing Z is optional).
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp ts);

struct Bar {
    Timestamp timestamp = 0;
    double open = 0.0;
    double high = 0.0;
    double low = 0.0;
    double close = 0.0;
    double volume = 0.0;

    friend bool operator==(const Bar&, const Bar&) = default;
};

/// Throws ValidationError when OHLC ordering or volume sign is broken.
void validate_bar(const Bar& bar);

struct Series {
    std::string symbol;
    Timeframe timeframe = Timeframe::m1;
    std::vector<Bar> bars;

    std::size_t size() const noexcept { return bars.size(); }
    bool empty() const noexcept { return bars.empty(); }
    std::vector<double> closes() const;

    friend bool operator==(const Series&, const Series&) = default;
};

/// Checks every Bar invariant and strictly increasing timestamps.
void validate_series(const Series& series);

enum class GapPolicy { split_sessions, carry_forward, drop_overnight };

GapPolicy parse_gap_policy(std::string_view text);
std::string to_string(GapPolicy policy);

struct CleaningPolicy {
    std::size_t outlier_window = 32;
    double outlier_threshold = 10.0;  // multiples of the rolling MAD
    GapPolicy gap_policy = GapPolicy::split_sessions;

    void validate() const;
};

/// Trading session in UTC time-of-day seconds.
struct SessionCalendar {
    int session_open = 8 * 3600;
    int session_close = 16 * 3600 + 30 * 60;
    std::array<bool, 7> trading_days{false, true, true, true, true, true, false};  // Sun..Sat

    void validate() const;
    bool is_trading_day(Timestamp ts) const;
    bool in_session(Timestamp ts) const;
};

/// Day index (days since epoch) and time-of-day of a timestamp.
std::int64_t day_index(Timestamp ts);
int time_of_day(Timestamp ts);

/// Parses `timestamp,open,high,low,close,volume` CSV. Rows are sorted by
/// timestamp; the timeframe is inferred from the smallest spacing unless given.
Series parse_csv(std::istream& in, std::string symbol = {});
Series parse_csv(std::istream& in, std::string symbol, Timeframe timeframe);
void write_csv(std::ostream& out, const Series& series);

/// Aggregates bars into `target` buckets aligned to the calendar's session open.
Series resample(const Series& series, Timeframe target, const SessionCalendar& calendar = {});

struct CleanResult {
    Series series;
    std::vector<Bar> removed;
    bool too_short = false;  // passthrough: fewer bars than the outlier window
};

/// Removes single-bar spikes: |log-return| above threshold x MAD of the
/// preceding `outlier_window` log-returns, followed by a bar that reverts to
/// within one MAD of the pre-spike close. Repeats until no bar qualifies.
CleanResult remove_outliers(const Series& series, const CleaningPolicy& policy);

/// Audit CSV of removed bars with a `reason` column.
void write_removed_csv(std::ostream& out, std::span<const Bar> removed,
                       std::string_view reason = "spike_revert");

struct Segment {
    Series series;
    /// Indices into series.bars where a new session starts after a join.
    std::vector<std::size_t> discontinuities;
};

std::vector<Segment> mark_session_gaps(const Series& series, const SessionCalendar& calendar,
                                       const CleaningPolicy& policy);

inline constexpr std::size_t kFeatureCount = 3;

struct Feature {
    Timestamp timestamp = 0;
    /// z-scored log-return, z-scored log volume, (high - low) / close.
    std::array<double, kFeatureCount> values{};
};

/// Rolling-window features; the first `window` bars are warm-up and emit nothing.
std::vector<Feature> normalize(const Series& series, std::size_t window);

/// Log-return of each bar against the previous close (first entry is 0).
std::vector<double> log_returns(std::span<const Bar> bars);

}  // namespace ctnet::market_data
