#include "ctnet/runner.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>

namespace ctnet::runner {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) {
    if (!std::isfinite(v)) {
        return "";
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

double parse_field(const std::string& s, std::size_t line) {
    if (s.empty()) {
        return kNaN;
    }
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw ParseError(line, "bad number '" + s + "' in chart CSV");
    }
    return v;
}

double at(const std::vector<double>& v, std::size_t i) { return i < v.size() ? v[i] : kNaN; }

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Pane {
    double top;
    double height;
    std::string title;
};

constexpr double kWidth = 900.0;
constexpr double kLeft = 60.0;
constexpr double kRight = 20.0;

class Canvas {
public:
    explicit Canvas(std::size_t rows) : rows_(rows) {}

    double x(std::size_t i) const {
        const double span = kWidth - kLeft - kRight;
        return rows_ <= 1 ? kLeft : kLeft + span * static_cast<double>(i) / static_cast<double>(rows_ - 1);
    }

    void frame(const Pane& p) {
        out_ << "<rect x=\"" << coord(kLeft) << "\" y=\"" << coord(p.top) << "\" width=\""
             << coord(kWidth - kLeft - kRight) << "\" height=\"" << coord(p.height)
             << "\" fill=\"none\" stroke=\"#999999\"/>\n";
        out_ << "<text x=\"" << coord(kLeft + 4) << "\" y=\"" << coord(p.top + 14)
             << "\" font-size=\"12\" font-family=\"sans-serif\">" << escape(p.title) << "</text>\n";
    }

    // Lines are split at NaN gaps; the y range covers every finite value in `series`.
    void lines(const Pane& p, const std::vector<std::pair<const std::vector<double>*, const char*>>& series,
               std::size_t offset = 0) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (const auto& [v, color] : series) {
            for (double y : *v) {
                if (std::isfinite(y)) {
                    lo = std::min(lo, y);
                    hi = std::max(hi, y);
                }
            }
        }
        if (!(lo <= hi)) {
            return;
        }
        if (hi == lo) {
            hi += 0.5;
            lo -= 0.5;
        }
        const double pad = 6.0;
        auto y_of = [&](double y) { return p.top + pad + (hi - y) / (hi - lo) * (p.height - 2 * pad); };
        for (const auto& [v, color] : series) {
            std::string points;
            auto emit = [&] {
                if (!points.empty()) {
                    out_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\" points=\""
                         << points << "\"/>\n";
                    points.clear();
                }
            };
            for (std::size_t i = 0; i < v->size(); ++i) {
                const double y = (*v)[i];
                if (!std::isfinite(y)) {
                    emit();
                    continue;
                }
                if (!points.empty()) {
                    points += ' ';
                }
                points += coord(x(i + offset)) + ',' + coord(y_of(y));
            }
            emit();
        }
    }

    void divider(std::size_t i, double top, double bottom) {
        out_ << "<line x1=\"" << coord(x(i)) << "\" y1=\"" << coord(top) << "\" x2=\"" << coord(x(i))
             << "\" y2=\"" << coord(bottom) << "\" stroke=\"#cccccc\" stroke-dasharray=\"4 3\"/>\n";
    }

    std::string str() const { return out_.str(); }
    std::ostringstream& raw() { return out_; }

private:
    std::size_t rows_;
    std::ostringstream out_;
};

}  // namespace

void write_chart_csv(std::ostream& out, const ChartBundle& b) {
    out << "# symbol=" << b.symbol << ",pearson_r=" << num(b.pearson_r) << ",cycle_period=" << num(b.cycle_period)
        << '\n';
    out << "row,timestamp,actual_close,predicted_close,predicted_return,actual_return,macd,macd_signal,"
           "macd_histogram,stoch_k,stoch_d,wavelet_power,predicted\n";
    const auto n = b.timestamps.size();
    for (std::size_t i = 0; i < b.rows(); ++i) {
        const bool fwd = i >= n;
        const auto ts = fwd ? b.forward_timestamps[i - n] : b.timestamps[i];
        out << i << ',' << market_data::format_timestamp(ts) << ',' << (fwd ? "" : num(b.actual_close[i])) << ','
            << (fwd ? num(b.predicted_close[i - n]) : "") << ',' << (fwd ? "" : num(at(b.predicted_return, i)))
            << ',' << (fwd ? "" : num(at(b.actual_return, i))) << ',' << num(at(b.macd, i)) << ','
            << num(at(b.macd_signal, i)) << ',' << num(at(b.macd_histogram, i)) << ',' << num(at(b.stoch_k, i))
            << ',' << num(at(b.stoch_d, i)) << ',' << (fwd ? "" : num(at(b.wavelet_power, i))) << ','
            << (fwd ? 1 : 0) << '\n';
    }
}

ChartBundle read_chart_csv(std::istream& in) {
    ChartBundle b;
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line) || line.rfind("# ", 0) != 0) {
        throw ParseError(1, "chart CSV must start with a metadata comment");
    }
    ++lineno;
    {
        std::stringstream meta(line.substr(2));
        std::string kv;
        while (std::getline(meta, kv, ',')) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) {
                throw ParseError(1, "bad metadata entry '" + kv + "'");
            }
            const auto key = kv.substr(0, eq);
            const auto value = kv.substr(eq + 1);
            if (key == "symbol") {
                b.symbol = value;
            } else if (key == "pearson_r") {
                b.pearson_r = parse_field(value, 1);
            } else if (key == "cycle_period") {
                b.cycle_period = parse_field(value, 1);
            }
        }
    }
    if (!std::getline(in, line)) {
        throw ParseError(2, "chart CSV has no column header");
    }
    ++lineno;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            f.push_back(cell);
        }
        if (line.back() == ',') {
            f.emplace_back();
        }
        if (f.size() != 13) {
            throw ParseError(lineno, "expected 13 fields, got " + std::to_string(f.size()));
        }
        Timestamp ts = 0;
        try {
            ts = market_data::parse_timestamp(f[1]);
        } catch (const Error& e) {
            throw ParseError(lineno, e.what());
        }
        const bool fwd = f[12] == "1";
        if (fwd) {
            b.forward_timestamps.push_back(ts);
            b.predicted_close.push_back(parse_field(f[3], lineno));
        } else {
            if (!b.forward_timestamps.empty()) {
                throw ParseError(lineno, "actual row after predicted rows");
            }
            b.timestamps.push_back(ts);
            b.actual_close.push_back(parse_field(f[2], lineno));
            b.predicted_return.push_back(parse_field(f[4], lineno));
            b.actual_return.push_back(parse_field(f[5], lineno));
            b.wavelet_power.push_back(parse_field(f[11], lineno));
        }
        b.macd.push_back(parse_field(f[6], lineno));
        b.macd_signal.push_back(parse_field(f[7], lineno));
        b.macd_histogram.push_back(parse_field(f[8], lineno));
        b.stoch_k.push_back(parse_field(f[9], lineno));
        b.stoch_d.push_back(parse_field(f[10], lineno));
    }
    return b;
}

std::string render_chart_svg(const ChartBundle& b) {
    const std::vector<Pane> panes{
        {40.0, 240.0, "Price: actual and predicted"},
        {300.0, 120.0, "MACD"},
        {440.0, 120.0, "Stochastic %K / %D"},
        {580.0, 100.0, "Wavelet power"},
    };
    const double height = 700.0;
    const auto n = b.timestamps.size();
    const auto rows = b.rows();
    Canvas c(rows);
    auto& o = c.raw();
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << coord(kWidth) << "\" height=\"" << coord(height)
      << "\" viewBox=\"0 0 " << coord(kWidth) << ' ' << coord(height) << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
    char title[160];
    std::snprintf(title, sizeof title, " r=%.3f cycle=%.1f bars", b.pearson_r, b.cycle_period);
    o << "<text x=\"" << coord(kLeft) << "\" y=\"24\" font-size=\"16\" font-family=\"sans-serif\">"
      << escape(b.symbol) << title << "</text>\n";
    for (const auto& p : panes) {
        c.frame(p);
    }

    // price: the predicted path starts from the last actual close
    std::vector<double> actual(b.actual_close);
    actual.resize(rows, kNaN);
    std::vector<double> predicted(rows, kNaN);
    if (!b.predicted_close.empty() && n > 0) {
        predicted[n - 1] = b.actual_close.back();
        for (std::size_t j = 0; j < b.predicted_close.size(); ++j) {
            predicted[n + j] = b.predicted_close[j];
        }
    }
    c.lines(panes[0], {{&actual, "#1f77b4"}, {&predicted, "#d62728"}});
    c.lines(panes[1], {{&b.macd, "#1f77b4"}, {&b.macd_signal, "#ff7f0e"}, {&b.macd_histogram, "#7f7f7f"}});
    c.lines(panes[2], {{&b.stoch_k, "#1f77b4"}, {&b.stoch_d, "#ff7f0e"}});
    c.lines(panes[3], {{&b.wavelet_power, "#2ca02c"}});
    if (n > 0 && rows > n) {
        c.divider(n - 1, panes.front().top, panes.back().top + panes.back().height);
    }
    o << "</svg>\n";
    return c.str();
}

std::vector<std::filesystem::path> export_chart(const ChartBundle& bundle, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    const auto csv = dir / (bundle.symbol + "_chart.csv");
    const auto svg = dir / (bundle.symbol + "_chart.svg");
    std::ofstream c(csv);
    std::ofstream s(svg);
    if (!c || !s) {
        throw IoError("cannot write chart files in " + dir.string());
    }
    write_chart_csv(c, bundle);
    s << render_chart_svg(bundle);
    return {csv, svg};
}

}  // namespace ctnet::runner
