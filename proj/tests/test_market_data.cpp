#include "ctnet/error.hpp"
#include "ctnet/market_data.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

using namespace ctnet;
using namespace ctnet::market_data;
using ctnet::test::random_series;
using ctnet::test::series_from_closes;
using ctnet::test::ts;

namespace {

Series parse(const std::string& text, const std::string& symbol = "X") {
    std::istringstream in(text);
    return parse_csv(in, symbol);
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Brute-force spike rule, one pass over the explicit series.
std::vector<std::size_t> spike_candidates(const std::vector<double>& c, std::size_t w, double thr) {
    std::vector<std::size_t> out;
    for (std::size_t i = w + 1; i + 1 < c.size(); ++i) {
        std::vector<double> r;
        for (std::size_t j = i - w; j < i; ++j) {
            r.push_back(std::log(c[j] / c[j - 1]));
        }
        const double m = median_of(r);
        for (auto& x : r) {
            x = std::abs(x - m);
        }
        const double mad = median_of(r);
        if (std::abs(std::log(c[i] / c[i - 1])) > thr * mad && std::abs(std::log(c[i + 1] / c[i - 1])) <= mad) {
            out.push_back(i);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("timestamps round-trip through ISO text") {
    const auto t = ts("2024-01-02T08:00:00Z");
    CHECK(t == 1704182400);
    CHECK(format_timestamp(t) == "2024-01-02T08:00:00Z");
    CHECK(parse_timestamp("2024-01-02T08:00:00") == t);
    CHECK_THROWS_AS(parse_timestamp("2024-13-02T08:00:00Z"), DataError);
    CHECK_THROWS_AS(parse_timestamp("yesterday"), DataError);
}

TEST_CASE("timeframes parse and report their length") {
    CHECK(parse_timeframe("1m") == Timeframe::m1);
    CHECK(parse_timeframe("15m") == Timeframe::m15);
    CHECK(seconds(Timeframe::m3) == 180);
    CHECK(seconds(Timeframe::d1) == 86400);
    CHECK(to_string(Timeframe::m5) == "5m");
    CHECK_THROWS_AS(parse_timeframe("2m"), ConfigError);
}

TEST_CASE("parse_csv maps one row to one bar") {
    const auto s = parse("timestamp,open,high,low,close,volume\n2024-01-02T08:00:00Z,100,101,99,100.5,5000\n");
    REQUIRE(s.size() == 1);
    CHECK(s.bars[0] == Bar{ts("2024-01-02T08:00:00Z"), 100.0, 101.0, 99.0, 100.5, 5000.0});
    CHECK(s.symbol == "X");
}

TEST_CASE("parse_csv on a header-only file gives an empty series") {
    const auto s = parse("timestamp,open,high,low,close,volume\n");
    CHECK(s.empty());
}

TEST_CASE("parse_csv sorts rows into ascending time") {
    const std::string header = "timestamp,open,high,low,close,volume\n";
    const std::string a = "2024-01-02T08:00:00Z,100,101,99,100.5,5000\n";
    const std::string b = "2024-01-02T08:01:00Z,100.5,102,100,101,4000\n";
    CHECK(parse(header + b + a) == parse(header + a + b));
}

TEST_CASE("parse_csv accepts reordered columns") {
    const auto s = parse("close,volume,timestamp,open,low,high\n100.5,5000,2024-01-02T08:00:00Z,100,99,101\n");
    CHECK(s.bars.at(0) == Bar{ts("2024-01-02T08:00:00Z"), 100.0, 101.0, 99.0, 100.5, 5000.0});
}

TEST_CASE("parse_csv errors name the offending line") {
    const std::string header = "timestamp,open,high,low,close,volume\n";
    try {
        parse(header + "2024-01-02T08:00:00Z,100,101,99,100.5,5000\n2024-01-02T08:01:00Z,abc,1,1,1,1\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(parse(header + "2024-01-02T08:00:00Z,100,101,99\n"), ParseError);
    CHECK_THROWS_AS(parse("time,open\n"), ParseError);
}

TEST_CASE("parse_csv rejects duplicate timestamps and broken bars") {
    const std::string header = "timestamp,open,high,low,close,volume\n";
    const std::string row = "2024-01-02T08:00:00Z,100,101,99,100.5,5000\n";
    CHECK_THROWS_AS(parse(header + row + row), ValidationError);
    CHECK_THROWS_AS(parse(header + "2024-01-02T08:00:00Z,100,99,101,100,5\n"), ValidationError);
    CHECK_THROWS_AS(parse(header + "2024-01-02T08:00:00Z,100,101,99,100,-5\n"), ValidationError);
}

TEST_CASE("write_csv then parse_csv reproduces the series exactly") {
    const auto s = random_series(3, 50, Timeframe::m5);
    std::stringstream io;
    write_csv(io, s);
    const auto back = parse_csv(io, s.symbol);
    CHECK(back == s);
}

TEST_CASE("resample aggregates a bucket definitionally") {
    Series s{"X", Timeframe::m1, {}};
    const auto t0 = ts("2024-01-02T08:00:00Z");
    for (int i = 0; i < 5; ++i) {
        const double c = i + 1.0;
        s.bars.push_back(Bar{t0 + 60 * i, c, c + 0.5, c - 0.5, c, 10.0});
    }
    const auto r = resample(s, Timeframe::m5);
    REQUIRE(r.size() == 1);
    CHECK(r.timeframe == Timeframe::m5);
    CHECK(r.bars[0].timestamp == t0);
    CHECK(r.bars[0].open == 1.0);
    CHECK(r.bars[0].close == 5.0);
    CHECK(r.bars[0].high == 5.5);
    CHECK(r.bars[0].low == 0.5);
    CHECK(r.bars[0].volume == 50.0);
}

TEST_CASE("resample to the same timeframe is the identity") {
    const auto s = random_series(1, 1);
    CHECK(resample(s, Timeframe::m1) == s);
}

TEST_CASE("resample rejects a target that is not a whole multiple") {
    const auto s = random_series(1, 10, Timeframe::m5);
    CHECK_THROWS_AS(resample(s, Timeframe::m3), ConfigError);
    CHECK_THROWS_AS(resample(s, Timeframe::m1), ConfigError);
}

TEST_CASE("resample of 60 one-minute bars preserves volume and span closes") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto s = random_series(seed, 60);
        const auto r = resample(s, Timeframe::m5);
        REQUIRE(r.size() == 12);
        double src = 0.0;
        double dst = 0.0;
        for (const auto& b : s.bars) {
            src += b.volume;
        }
        for (const auto& b : r.bars) {
            dst += b.volume;
        }
        CHECK(src == dst);
        CHECK(r.bars.front().open == s.bars.front().open);
        CHECK(r.bars.back().close == s.bars.back().close);
        CHECK_NOTHROW(validate_series(r));
        // brute-force bucket oracle
        for (std::size_t k = 0; k < 12; ++k) {
            double hi = -1e300;
            double lo = 1e300;
            for (std::size_t j = 5 * k; j < 5 * k + 5; ++j) {
                hi = std::max(hi, s.bars[j].high);
                lo = std::min(lo, s.bars[j].low);
            }
            CHECK(r.bars[k].high == hi);
            CHECK(r.bars[k].low == lo);
            CHECK(r.bars[k].open == s.bars[5 * k].open);
            CHECK(r.bars[k].close == s.bars[5 * k + 4].close);
        }
    }
}

TEST_CASE("resample buckets align to the session open") {
    // 08:00 open; a series starting at 08:02 must still bucket on 08:00, 08:15, ...
    const auto s = random_series(9, 30, Timeframe::m1, ts("2024-01-02T08:02:00Z"));
    const auto r = resample(s, Timeframe::m15);
    REQUIRE(r.size() == 3);
    CHECK(r.bars[0].timestamp == ts("2024-01-02T08:00:00Z"));
    CHECK(r.bars[1].timestamp == ts("2024-01-02T08:15:00Z"));
    CHECK(r.bars[2].timestamp == ts("2024-01-02T08:30:00Z"));
}

TEST_CASE("remove_outliers drops a spike on a flat series") {
    std::vector<double> closes(60, 100.0);
    closes[40] = 200.0;
    const auto s = series_from_closes(closes);
    const auto res = remove_outliers(s, CleaningPolicy{});
    REQUIRE(res.removed.size() == 1);
    CHECK(res.removed[0] == s.bars[40]);
    REQUIRE(res.series.size() == 59);
    for (std::size_t i = 0, j = 0; i < s.size(); ++i) {
        if (i == 40) {
            continue;
        }
        CHECK(res.series.bars[j++] == s.bars[i]);
    }
}

TEST_CASE("remove_outliers leaves a monotone ramp alone") {
    std::vector<double> closes(100);
    for (std::size_t i = 0; i < closes.size(); ++i) {
        closes[i] = 100.0 + static_cast<double>(i);
    }
    const auto s = series_from_closes(closes);
    const auto res = remove_outliers(s, CleaningPolicy{});
    CHECK(res.removed.empty());
    CHECK(res.series == s);
}

TEST_CASE("remove_outliers passes short series through with a flag") {
    const auto s = random_series(2, 10);
    const auto res = remove_outliers(s, CleaningPolicy{});
    CHECK(res.too_short);
    CHECK(res.removed.empty());
    CHECK(res.series == s);
}

TEST_CASE("remove_outliers matches the brute-force rule and is idempotent") {
    const CleaningPolicy policy{16, 8.0, GapPolicy::split_sessions};
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        auto s = random_series(seed, 200, Timeframe::m1, 1704182400, 0.002);
        std::mt19937_64 rng(seed + 1000);
        for (int k = 0; k < 3; ++k) {
            const auto i = 30 + rng() % 160;
            auto& b = s.bars[i];
            b.close *= (rng() % 2) ? 1.2 : 0.8;
            b.high = std::max({b.high, b.close, b.open});
            b.low = std::min({b.low, b.close, b.open});
        }
        const auto once = remove_outliers(s, policy);
        CHECK(spike_candidates(once.series.closes(), policy.outlier_window, policy.outlier_threshold).empty());
        const auto twice = remove_outliers(once.series, policy);
        CHECK(twice.series == once.series);
        CHECK(twice.removed.empty());
        CHECK(once.series.size() + once.removed.size() == s.size());
        // survivors are untouched copies, in order
        std::size_t j = 0;
        for (const auto& b : s.bars) {
            if (j < once.series.size() && once.series.bars[j] == b) {
                ++j;
            }
        }
        CHECK(j == once.series.size());
    }
}

TEST_CASE("remove_outliers needs positive closes") {
    auto s = series_from_closes(std::vector<double>(40, 1.0));
    s.bars[5] = Bar{s.bars[5].timestamp, 0.0, 0.0, 0.0, 0.0, 1.0};
    CHECK_THROWS_AS(remove_outliers(s, CleaningPolicy{}), DataError);
}

TEST_CASE("cleaning policy and calendar validation") {
    CHECK_THROWS_AS((CleaningPolicy{4, 10.0, GapPolicy::split_sessions}.validate()), ConfigError);
    CHECK_THROWS_AS((CleaningPolicy{32, 0.0, GapPolicy::split_sessions}.validate()), ConfigError);
    SessionCalendar cal;
    cal.session_open = cal.session_close;
    CHECK_THROWS_AS(cal.validate(), ConfigError);
    CHECK(parse_gap_policy("carry_forward") == GapPolicy::carry_forward);
    CHECK_THROWS_AS(parse_gap_policy("fill"), ConfigError);
}

namespace {

Series two_days() {
    Series s{"X", Timeframe::m15, {}};
    for (const char* day : {"2024-01-02", "2024-01-03"}) {
        const auto open = ts((std::string(day) + "T08:00:00Z").c_str());
        for (int i = 0; i < 10; ++i) {
            s.bars.push_back(Bar{open + 900 * i, 10, 11, 9, 10, 100});
        }
    }
    return s;
}

}  // namespace

TEST_CASE("split_sessions yields one segment per session") {
    CleaningPolicy p;
    p.gap_policy = GapPolicy::split_sessions;
    const auto segs = mark_session_gaps(two_days(), SessionCalendar{}, p);
    REQUIRE(segs.size() == 2);
    for (const auto& seg : segs) {
        CHECK(seg.series.size() == 10);
        CHECK(day_index(seg.series.bars.front().timestamp) == day_index(seg.series.bars.back().timestamp));
    }
}

TEST_CASE("carry_forward joins two days with one marker") {
    CleaningPolicy p;
    p.gap_policy = GapPolicy::carry_forward;
    const auto segs = mark_session_gaps(two_days(), SessionCalendar{}, p);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].series.size() == 20);
    REQUIRE(segs[0].discontinuities.size() == 1);
    CHECK(segs[0].discontinuities[0] == 10);
}

TEST_CASE("drop_overnight removes exactly the out-of-session bars") {
    auto s = two_days();
    s.bars.insert(s.bars.begin() + 10, Bar{ts("2024-01-03T03:00:00Z"), 10, 11, 9, 10, 100});
    s.bars.push_back(Bar{ts("2024-01-03T16:30:00Z"), 10, 11, 9, 10, 100});  // close is exclusive
    CleaningPolicy p;
    p.gap_policy = GapPolicy::drop_overnight;
    const auto segs = mark_session_gaps(s, SessionCalendar{}, p);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].series.size() == 20);
    for (const auto& b : segs[0].series.bars) {
        CHECK(b.timestamp != ts("2024-01-03T03:00:00Z"));
        CHECK(b.timestamp != ts("2024-01-03T16:30:00Z"));
    }
}

TEST_CASE("session segments partition the input") {
    const SessionCalendar cal;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto s = random_series(seed, 400, Timeframe::m15, ts("2024-01-01T00:00:00Z"));
        for (auto policy : {GapPolicy::split_sessions, GapPolicy::carry_forward, GapPolicy::drop_overnight}) {
            CleaningPolicy p;
            p.gap_policy = policy;
            std::vector<Bar> joined;
            for (const auto& seg : mark_session_gaps(s, cal, p)) {
                CHECK_NOTHROW(validate_series(seg.series));
                joined.insert(joined.end(), seg.series.bars.begin(), seg.series.bars.end());
            }
            std::vector<Bar> expected;
            for (const auto& b : s.bars) {
                if (policy != GapPolicy::drop_overnight || cal.in_session(b.timestamp)) {
                    expected.push_back(b);
                }
            }
            CHECK(joined == expected);
        }
    }
    CHECK(mark_session_gaps(Series{}, cal, CleaningPolicy{}).empty());
}

TEST_CASE("normalize on constant prices gives zero z-scores") {
    const auto s = series_from_closes(std::vector<double>(40, 50.0));
    const auto f = normalize(s, 10);
    REQUIRE(f.size() == 30);
    for (const auto& x : f) {
        CHECK(x.values[0] == 0.0);
        CHECK(x.values[1] == 0.0);
        CHECK(x.values[2] == 0.0);
    }
}

TEST_CASE("normalize output length is input minus window") {
    for (std::size_t n : {5u, 20u, 21u, 100u}) {
        const auto s = random_series(n, n);
        CHECK(normalize(s, 20).size() == (n > 20 ? n - 20 : 0));
    }
    CHECK_THROWS_AS(normalize(random_series(1, 10), 1), ConfigError);
}

TEST_CASE("normalize matches a direct rolling z-score") {
    const auto s = random_series(4, 80);
    const std::size_t w = 12;
    const auto f = normalize(s, w);
    for (std::size_t k = 0; k < f.size(); ++k) {
        const auto t = k + w;
        std::vector<double> r;
        for (std::size_t j = t + 1 - w; j <= t; ++j) {
            r.push_back(std::log(s.bars[j].close / s.bars[j - 1].close));
        }
        const double mean = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(w);
        double var = 0.0;
        for (double x : r) {
            var += (x - mean) * (x - mean);
        }
        const double sd = std::sqrt(var / static_cast<double>(w));
        CHECK(f[k].timestamp == s.bars[t].timestamp);
        CHECK(f[k].values[0] == doctest::Approx((r.back() - mean) / sd).epsilon(1e-9));
        CHECK(f[k].values[2] == doctest::Approx((s.bars[t].high - s.bars[t].low) / s.bars[t].close));
    }
}

TEST_CASE("rolling z features average near zero over a long run") {
    const auto s = random_series(77, 20000);
    const auto f = normalize(s, 50);
    double m0 = 0.0;
    double m1 = 0.0;
    for (const auto& x : f) {
        m0 += x.values[0];
        m1 += x.values[1];
    }
    m0 /= static_cast<double>(f.size());
    m1 /= static_cast<double>(f.size());
    CHECK(std::abs(m0) < 0.1);
    CHECK(std::abs(m1) < 0.1);
}

TEST_CASE("normalize refuses non-positive closes") {
    auto s = random_series(1, 30);
    s.bars[3].close = 0.0;
    s.bars[3].low = 0.0;
    CHECK_THROWS_AS(normalize(s, 5), DataError);
}

TEST_CASE("removed-bar audit CSV carries a reason column") {
    std::vector<double> closes(60, 100.0);
    closes[40] = 200.0;
    const auto res = remove_outliers(series_from_closes(closes), CleaningPolicy{});
    std::ostringstream out;
    write_removed_csv(out, res.removed);
    const auto text = out.str();
    CHECK(text.rfind("timestamp,open,high,low,close,volume,reason\n", 0) == 0);
    CHECK(text.find("spike_revert") != std::string::npos);
}
