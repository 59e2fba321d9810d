#pragma once

// Continuous-time recurrent network with forward-Euler dynamics
//
//   tau_i * dy_i/dt = -y_i + tanh((W_rec y)_i + (W_in x)_i + b_i)
//
// integrated on a mesh of `dt` (in bar intervals), a linear k-step readout of
// predicted log-returns, truncated backpropagation through time and per-weight
// RMS-normalised online updates. A batch-trained feedforward network is kept
// as the comparison baseline.

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <span>
#include <stdexcept>
#include <vector>

namespace ctnet::ctrnn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Timestamp = std::int64_t;

/// History shorter than the truncation depth.
class WarmupError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Topology {
    std::size_t n_in = 1;
    std::size_t n_hidden = 8;
    std::size_t n_out = 10;  // prediction horizon k
    double dt = 0.5;
    Vector tau;  // per hidden unit, same units as dt

    /// Uniform time constant for every hidden unit.
    static Topology make(std::size_t n_in, std::size_t n_hidden, std::size_t n_out, double dt = 0.5,
                         double tau = 1.0);

    /// Throws ConfigError on zero counts, a tau of the wrong size or dt outside (0, min tau].
    void validate() const;

    /// Mesh steps covering one bar interval, round(1/dt).
    std::size_t steps_per_bar() const;

    friend bool operator==(const Topology& a, const Topology& b) {
        return a.n_in == b.n_in && a.n_hidden == b.n_hidden && a.n_out == b.n_out && a.dt == b.dt &&
               a.tau.size() == b.tau.size() && a.tau == b.tau;
    }
};

struct Weights {
    Matrix w_in;   // n_hidden x n_in
    Matrix w_rec;  // n_hidden x n_hidden
    Matrix w_out;  // n_out x n_hidden
    Vector b_hidden;
    Vector b_out;

    static Weights zeros(const Topology& topo);

    std::size_t parameter_count() const;
    /// Row-major concatenation of w_in, w_rec, w_out, b_hidden, b_out.
    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);
    bool all_finite() const;

    friend bool operator==(const Weights& a, const Weights& b);
};

/// Gradients share the parameter layout.
using Gradient = Weights;

struct NetworkState {
    Vector y;

    static NetworkState zeros(const Topology& topo);
};

struct Prediction {
    std::size_t horizon = 0;
    std::vector<double> values;  // values[j]: predicted log-return j+1 bars ahead
    Timestamp origin_timestamp = 0;

    /// Sum of the predicted log-returns over the horizon.
    double cumulative() const;
};

struct TrainConfig {
    std::size_t truncation_depth = 20;  // mesh steps
    double base_rate = 1e-3;
    double adapt_decay = 0.99;
    std::uint64_t seed = 42;
    double epsilon = 1e-8;

    void validate() const;
};

struct RunningError {
    double summed_sq_error = 0.0;
    std::size_t n_terms = 0;

    void add(double term);
    double mean() const { return n_terms == 0 ? 0.0 : summed_sq_error / static_cast<double>(n_terms); }
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per matrix; biases start at zero.
Weights init_weights(const Topology& topo, std::uint64_t seed);

/// One forward-Euler mesh step.
NetworkState step(const NetworkState& state, const Weights& w, const Vector& x, const Topology& topo);

/// steps_per_bar() mesh steps holding the input fixed.
NetworkState advance_bar(const NetworkState& state, const Weights& w, const Vector& x, const Topology& topo);

Prediction predict(const NetworkState& state, const Weights& w, const Topology& topo, Timestamp origin = 0);

/// Mean squared error over the horizon.
double loss(const Prediction& pred, std::span<const double> target);

struct GradientResult {
    Gradient gradient;
    double loss = 0.0;
};

/// Exact gradient of loss(predict(y_h), target) where y_h is reached from
/// `initial` through the mesh steps driven by `inputs`. Dependence on weights
/// before the window is truncated (`initial` is a constant).
///
/// `inputs` must hold exactly `depth` mesh inputs; fewer throws WarmupError.
GradientResult bptt_gradient(const Weights& w, const NetworkState& initial, std::span<const Vector> inputs,
                             std::span<const double> target, const Topology& topo, std::size_t depth);

struct UpdateResult {
    Weights weights;
    Weights stats;  // running mean of squared gradients
};

/// stats <- decay*stats + (1-decay)*g^2;  w <- w - rate*g / (sqrt(stats) + eps)
UpdateResult online_update(const Weights& w, const Gradient& g, const Weights& stats, const TrainConfig& cfg);

struct StreamSample {
    Vector features;
    double realized_return = 0.0;  // log-return of this bar
    Timestamp timestamp = 0;
};

/// Online learner: per bar it advances the dynamics, predicts the next k
/// returns, and once the prediction made k bars ago has matured it sums the
/// error and applies one truncated-gradient update.
class OnlineTrainer {
public:
    OnlineTrainer(Topology topo, TrainConfig cfg);
    OnlineTrainer(Topology topo, TrainConfig cfg, Weights initial);

    Prediction observe(const StreamSample& sample);

    const Topology& topology() const noexcept { return topo_; }
    const TrainConfig& config() const noexcept { return cfg_; }
    const Weights& weights() const noexcept { return weights_; }
    const Weights& stats() const noexcept { return stats_; }
    const NetworkState& state() const noexcept { return state_; }
    const RunningError& error() const noexcept { return error_; }
    std::size_t update_count() const noexcept { return updates_; }
    std::size_t bars_seen() const noexcept { return bars_; }

private:
    struct MeshRecord {
        NetworkState before;
        Vector input;
    };
    struct Pending {
        Prediction prediction;
        std::size_t mesh_end;  // absolute mesh index after the bar
        std::size_t bar;
    };

    void mature();

    Topology topo_;
    TrainConfig cfg_;
    Weights weights_;
    Weights stats_;
    NetworkState state_;
    RunningError error_;
    std::deque<MeshRecord> mesh_;
    std::size_t mesh_offset_ = 0;  // absolute index of mesh_.front()
    std::deque<Pending> pending_;
    std::deque<double> returns_;  // realized returns of the last k bars
    std::size_t bars_ = 0;
    std::size_t updates_ = 0;
};

struct TrainResult {
    Weights weights;
    std::vector<RunningError> trace;  // one entry per matured prediction
    std::vector<Prediction> predictions;
    std::size_t updates = 0;
};

TrainResult train_online(std::span<const StreamSample> stream, const Topology& topo, const TrainConfig& cfg);

struct BaselineConfig {
    std::size_t n_hidden = 16;
    std::size_t epochs = 2000;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 7;
};

/// Single-hidden-layer tanh network over a fixed input window, trained with
/// full-batch backprop on squared error.
class FeedforwardBaseline {
public:
    FeedforwardBaseline() = default;
    FeedforwardBaseline(std::size_t n_in, std::size_t n_hidden, std::size_t n_out, std::uint64_t seed);

    static FeedforwardBaseline zeros(std::size_t n_in, std::size_t n_hidden, std::size_t n_out);

    Prediction predict(std::span<const double> window, Timestamp origin = 0) const;

    /// Rows of `inputs` and `targets` are samples; loss is the mean over samples of the per-sample MSE.
    double loss(const Matrix& inputs, const Matrix& targets) const;
    std::vector<double> gradient(const Matrix& inputs, const Matrix& targets) const;

    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);

    std::size_t n_in() const { return static_cast<std::size_t>(w1_.cols()); }
    std::size_t n_out() const { return static_cast<std::size_t>(w2_.rows()); }

private:
    Matrix w1_;  // n_hidden x n_in
    Vector b1_;
    Matrix w2_;  // n_out x n_hidden
    Vector b2_;
};

FeedforwardBaseline feedforward_baseline(const Matrix& inputs, const Matrix& targets, const BaselineConfig& cfg);

}  // namespace ctnet::ctrnn
