#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace ctnet::cycle {

/// Morlet continuous wavelet transform settings. Scales are laid out on a
/// geometric grid of Fourier periods (in bars).
struct WaveletConfig {
    double omega0 = 6.0;
    double min_period = 8.0;
    double max_period = 128.0;
    int voices_per_octave = 8;  // grid ratio 2^(1/voices)
    std::size_t window = 1024;  // bars analysed (the most recent ones)
    bool detrend = true;        // remove a least-squares line before the transform

    void validate() const;
    std::vector<double> periods() const;
    /// Fourier period of a Morlet wavelet at unit scale.
    double fourier_factor() const;
};

struct Scalogram {
    std::vector<double> periods;  // one per row
    std::vector<double> scales;
    Eigen::MatrixXd power;        // periods.size() x window
    /// Half-width of the cone of influence per row (one e-folding, sqrt(2)*scale).
    std::vector<std::size_t> coi;

    std::size_t rows() const { return periods.size(); }
    std::size_t columns() const { return static_cast<std::size_t>(power.cols()); }
    bool in_cone(std::size_t row, std::size_t col) const;
    /// Latest column outside the cone of influence, if the row has any.
    std::optional<std::size_t> latest_in_cone(std::size_t row) const;
};

struct CycleEstimate {
    double period = 0.0;
    double power = 0.0;
    bool valid = false;
};

/// |W(s,t)|^2 of the last `cfg.window` samples. Throws ConfigError when fewer are given.
Scalogram cwt_power(std::span<const double> signal, const WaveletConfig& cfg);

/// Peak of the in-cone time-averaged spectrum; the period is refined as the
/// power-weighted mean over the peak row and its two neighbours on each side,
/// using each row's latest in-cone column. Invalid when the peak is below twice
/// the median across rows, or when there is no power at all.
CycleEstimate dominant_cycle(const Scalogram& scalogram, const WaveletConfig& cfg);

/// Least-squares linear detrend.
std::vector<double> detrend_linear(std::span<const double> values);

/// log of each close, linearly detrended: the input convention for price cycles.
std::vector<double> log_detrended(std::span<const double> closes);

/// Power of one row over time ("wavelet growth" pane).
std::vector<double> row_power(const Scalogram& scalogram, std::size_t row);

/// Index of the row whose period is closest to `period`.
std::size_t nearest_row(const Scalogram& scalogram, double period);

/// Rows are periods, columns are time.
void write_scalogram_csv(std::ostream& out, const Scalogram& scalogram);

/// Holds the last valid estimate; falls back to `default_period` before one exists.
class CycleTracker {
public:
    explicit CycleTracker(double default_period = 20.0) : default_period_(default_period) {}

    void update(const CycleEstimate& estimate);
    double period() const { return last_valid_ ? last_valid_->period : default_period_; }
    const std::optional<CycleEstimate>& last_valid() const { return last_valid_; }
    /// The estimate that adaptive indicators should use (valid with the fallback period if none yet).
    CycleEstimate current() const;

private:
    double default_period_;
    std::optional<CycleEstimate> last_valid_;
};

}  // namespace ctnet::cycle
