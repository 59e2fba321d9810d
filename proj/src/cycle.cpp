#include "ctnet/cycle.hpp"

#include "ctnet/error.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>
#include <ostream>

namespace ctnet::cycle {

namespace {

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) {
        p <<= 1;
    }
    return p;
}

double median(std::vector<double> v) {
    const auto n = v.size();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (n % 2 == 1) {
        return *mid;
    }
    return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

}  // namespace

void WaveletConfig::validate() const {
    if (!(omega0 > 0.0)) {
        throw ConfigError("Morlet omega0 must be > 0");
    }
    if (min_period < 4.0) {
        throw ConfigError("min_period must be >= 4 bars");
    }
    if (!(max_period > min_period)) {
        throw ConfigError("max_period must exceed min_period");
    }
    if (max_period > static_cast<double>(window) / 2.0) {
        throw ConfigError("max_period must be <= window / 2");
    }
    if (voices_per_octave < 1) {
        throw ConfigError("voices_per_octave must be >= 1");
    }
}

std::vector<double> WaveletConfig::periods() const {
    std::vector<double> out;
    const double ratio = std::pow(2.0, 1.0 / voices_per_octave);
    for (int j = 0;; ++j) {
        const double p = min_period * std::pow(ratio, j);
        if (p > max_period * (1.0 + 1e-12)) {
            break;
        }
        out.push_back(p);
    }
    return out;
}

double WaveletConfig::fourier_factor() const {
    return 4.0 * std::numbers::pi / (omega0 + std::sqrt(2.0 + omega0 * omega0));
}

bool Scalogram::in_cone(std::size_t row, std::size_t col) const {
    const auto n = columns();
    return col >= coi[row] && col + coi[row] < n;
}

std::optional<std::size_t> Scalogram::latest_in_cone(std::size_t row) const {
    const auto n = columns();
    if (2 * coi[row] >= n) {
        return std::nullopt;
    }
    return n - 1 - coi[row];
}

std::vector<double> detrend_linear(std::span<const double> values) {
    const auto n = values.size();
    std::vector<double> out(values.begin(), values.end());
    if (n < 2) {
        for (auto& v : out) {
            v = 0.0;
        }
        return out;
    }
    const double tm = 0.5 * static_cast<double>(n - 1);
    double ym = 0.0;
    for (double v : values) {
        ym += v;
    }
    ym /= static_cast<double>(n);
    double sty = 0.0;
    double stt = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dt = static_cast<double>(i) - tm;
        sty += dt * (values[i] - ym);
        stt += dt * dt;
    }
    const double slope = sty / stt;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = values[i] - ym - slope * (static_cast<double>(i) - tm);
    }
    return out;
}

std::vector<double> log_detrended(std::span<const double> closes) {
    std::vector<double> logs;
    logs.reserve(closes.size());
    for (double c : closes) {
        if (!(c > 0.0)) {
            throw DataError("cycle analysis needs positive closes");
        }
        logs.push_back(std::log(c));
    }
    return detrend_linear(logs);
}

Scalogram cwt_power(std::span<const double> signal, const WaveletConfig& cfg) {
    cfg.validate();
    if (signal.size() < cfg.window) {
        throw ConfigError("cwt needs " + std::to_string(cfg.window) + " samples, got " +
                          std::to_string(signal.size()));
    }
    const auto n = cfg.window;
    const auto tail = signal.subspan(signal.size() - n);
    const std::vector<double> x = cfg.detrend ? detrend_linear(tail) : std::vector<double>(tail.begin(), tail.end());

    Scalogram sg;
    sg.periods = cfg.periods();
    const double ff = cfg.fourier_factor();
    for (double p : sg.periods) {
        const double s = p / ff;
        sg.scales.push_back(s);
        sg.coi.push_back(static_cast<std::size_t>(std::ceil(std::sqrt(2.0) * s)));
    }
    sg.power = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sg.periods.size()), static_cast<Eigen::Index>(n));

    // Zero-padded so the circular convolution equals the linear one over the window.
    const std::size_t m = next_pow2(2 * n);
    std::vector<double> padded(m, 0.0);
    std::copy(x.begin(), x.end(), padded.begin());
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> spectrum;
    fft.fwd(spectrum, padded);

    const double norm0 = std::pow(std::numbers::pi, -0.25);
    std::vector<std::complex<double>> product(m);
    std::vector<std::complex<double>> coeffs;
    for (std::size_t row = 0; row < sg.scales.size(); ++row) {
        const double s = sg.scales[row];
        const double norm = std::sqrt(2.0 * std::numbers::pi * s) * norm0;
        for (std::size_t k = 0; k < m; ++k) {
            // only positive frequencies carry the analytic Morlet
            double w = 0.0;
            if (k > 0 && k <= m / 2) {
                const double omega = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(m);
                const double d = s * omega - cfg.omega0;
                w = norm * std::exp(-0.5 * d * d);
            }
            product[k] = spectrum[k] * w;
        }
        fft.inv(coeffs, product);
        for (std::size_t t = 0; t < n; ++t) {
            sg.power(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(t)) = std::norm(coeffs[t]);
        }
    }
    return sg;
}

CycleEstimate dominant_cycle(const Scalogram& sg, const WaveletConfig& cfg) {
    std::vector<std::size_t> rows;
    std::vector<double> spectrum;
    for (std::size_t r = 0; r < sg.rows(); ++r) {
        const auto last = sg.latest_in_cone(r);
        if (!last) {
            continue;
        }
        double sum = 0.0;
        for (std::size_t t = sg.coi[r]; t <= *last; ++t) {
            sum += sg.power(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t));
        }
        rows.push_back(r);
        spectrum.push_back(sum / static_cast<double>(*last - sg.coi[r] + 1));
    }
    CycleEstimate est;
    if (rows.empty()) {
        return est;
    }
    const auto peak_it = std::max_element(spectrum.begin(), spectrum.end());
    const auto peak = static_cast<std::size_t>(peak_it - spectrum.begin());
    const double med = median(spectrum);
    est.power = *peak_it;
    est.valid = *peak_it > 0.0 && *peak_it >= 2.0 * med;

    const std::size_t lo = peak >= 2 ? peak - 2 : 0;
    const std::size_t hi = std::min(rows.size() - 1, peak + 2);
    double wsum = 0.0;
    double psum = 0.0;
    for (std::size_t i = lo; i <= hi; ++i) {
        const auto r = rows[i];
        const double w = sg.power(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(*sg.latest_in_cone(r)));
        wsum += w;
        psum += w * sg.periods[r];
    }
    est.period = wsum > 0.0 ? psum / wsum : sg.periods[rows[peak]];
    est.period = std::clamp(est.period, cfg.min_period, cfg.max_period);
    return est;
}

std::vector<double> row_power(const Scalogram& sg, std::size_t row) {
    std::vector<double> out(sg.columns());
    for (std::size_t t = 0; t < out.size(); ++t) {
        out[t] = sg.power(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(t));
    }
    return out;
}

std::size_t nearest_row(const Scalogram& sg, double period) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < sg.rows(); ++r) {
        if (std::abs(std::log(sg.periods[r] / period)) < std::abs(std::log(sg.periods[best] / period))) {
            best = r;
        }
    }
    return best;
}

void write_scalogram_csv(std::ostream& out, const Scalogram& sg) {
    out << "period";
    for (std::size_t t = 0; t < sg.columns(); ++t) {
        out << ",t" << t;
    }
    out << '\n';
    char buf[64];
    for (std::size_t r = 0; r < sg.rows(); ++r) {
        std::snprintf(buf, sizeof buf, "%.17g", sg.periods[r]);
        out << buf;
        for (std::size_t t = 0; t < sg.columns(); ++t) {
            std::snprintf(buf, sizeof buf, ",%.17g",
                          sg.power(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)));
            out << buf;
        }
        out << '\n';
    }
}

void CycleTracker::update(const CycleEstimate& estimate) {
    if (estimate.valid) {
        last_valid_ = estimate;
    }
}

CycleEstimate CycleTracker::current() const {
    if (last_valid_) {
        return *last_valid_;
    }
    return CycleEstimate{default_period_, 0.0, true};
}

}  // namespace ctnet::cycle
