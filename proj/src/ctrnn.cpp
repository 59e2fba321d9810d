#include "ctnet/ctrnn.hpp"

#include "ctnet/error.hpp"

#include <cmath>
#include <random>
#include <string>

namespace ctnet::ctrnn {

namespace {

void fill_uniform(Matrix& m, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            m(r, c) = dist(rng);
        }
    }
}

template <typename M>
void append_row_major(const M& m, std::vector<double>& out) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            out.push_back(m(r, c));
        }
    }
}

template <typename M>
void read_row_major(M& m, std::span<const double> flat, std::size_t& pos) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            m(r, c) = flat[pos++];
        }
    }
}

void check_dims(const NetworkState& s, const Vector& x, const Topology& topo) {
    if (static_cast<std::size_t>(s.y.size()) != topo.n_hidden || static_cast<std::size_t>(x.size()) != topo.n_in) {
        throw ContractViolation("state/input dimensions do not match the topology");
    }
}

Vector rate(const Topology& topo) { return (topo.dt / topo.tau.array()).matrix(); }

}  // namespace

Topology Topology::make(std::size_t n_in, std::size_t n_hidden, std::size_t n_out, double dt, double tau) {
    Topology t;
    t.n_in = n_in;
    t.n_hidden = n_hidden;
    t.n_out = n_out;
    t.dt = dt;
    t.tau = Vector::Constant(static_cast<Eigen::Index>(n_hidden), tau);
    return t;
}

void Topology::validate() const {
    if (n_in < 1 || n_hidden < 1 || n_out < 1) {
        throw ConfigError("topology unit counts must be >= 1");
    }
    if (static_cast<std::size_t>(tau.size()) != n_hidden) {
        throw ConfigError("tau must have one entry per hidden unit");
    }
    if (!(tau.array() > 0.0).all()) {
        throw ConfigError("tau entries must be > 0");
    }
    if (!(dt > 0.0) || dt > tau.minCoeff()) {
        throw ConfigError("dt must satisfy 0 < dt <= min(tau) for a stable Euler step");
    }
}

std::size_t Topology::steps_per_bar() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(1.0 / dt)));
}

Weights Weights::zeros(const Topology& topo) {
    const auto in = static_cast<Eigen::Index>(topo.n_in);
    const auto hid = static_cast<Eigen::Index>(topo.n_hidden);
    const auto out = static_cast<Eigen::Index>(topo.n_out);
    return Weights{Matrix::Zero(hid, in), Matrix::Zero(hid, hid), Matrix::Zero(out, hid), Vector::Zero(hid),
                   Vector::Zero(out)};
}

std::size_t Weights::parameter_count() const {
    return static_cast<std::size_t>(w_in.size() + w_rec.size() + w_out.size() + b_hidden.size() + b_out.size());
}

std::vector<double> Weights::flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    append_row_major(w_in, out);
    append_row_major(w_rec, out);
    append_row_major(w_out, out);
    append_row_major(b_hidden, out);
    append_row_major(b_out, out);
    return out;
}

void Weights::assign(std::span<const double> flat) {
    if (flat.size() != parameter_count()) {
        throw ContractViolation("flat parameter vector has the wrong length");
    }
    std::size_t pos = 0;
    read_row_major(w_in, flat, pos);
    read_row_major(w_rec, flat, pos);
    read_row_major(w_out, flat, pos);
    read_row_major(b_hidden, flat, pos);
    read_row_major(b_out, flat, pos);
}

bool Weights::all_finite() const {
    return w_in.allFinite() && w_rec.allFinite() && w_out.allFinite() && b_hidden.allFinite() && b_out.allFinite();
}

bool operator==(const Weights& a, const Weights& b) {
    auto same = [](const auto& x, const auto& y) {
        return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
    };
    return same(a.w_in, b.w_in) && same(a.w_rec, b.w_rec) && same(a.w_out, b.w_out) &&
           same(a.b_hidden, b.b_hidden) && same(a.b_out, b.b_out);
}

NetworkState NetworkState::zeros(const Topology& topo) {
    return NetworkState{Vector::Zero(static_cast<Eigen::Index>(topo.n_hidden))};
}

double Prediction::cumulative() const {
    double s = 0.0;
    for (double v : values) {
        s += v;
    }
    return s;
}

void TrainConfig::validate() const {
    if (truncation_depth < 1) {
        throw ConfigError("truncation depth must be >= 1");
    }
    if (!(base_rate > 0.0)) {
        throw ConfigError("base_rate must be > 0");
    }
    if (!(adapt_decay > 0.0 && adapt_decay < 1.0)) {
        throw ConfigError("adapt_decay must lie in (0, 1)");
    }
    if (!(epsilon >= 0.0)) {
        throw ConfigError("epsilon must be >= 0");
    }
}

void RunningError::add(double term) {
    summed_sq_error += term;
    ++n_terms;
}

Weights init_weights(const Topology& topo, std::uint64_t seed) {
    topo.validate();
    std::mt19937_64 rng(seed);
    auto w = Weights::zeros(topo);
    fill_uniform(w.w_in, 1.0 / std::sqrt(static_cast<double>(topo.n_in)), rng);
    fill_uniform(w.w_rec, 1.0 / std::sqrt(static_cast<double>(topo.n_hidden)), rng);
    fill_uniform(w.w_out, 1.0 / std::sqrt(static_cast<double>(topo.n_hidden)), rng);
    return w;
}

NetworkState step(const NetworkState& state, const Weights& w, const Vector& x, const Topology& topo) {
    check_dims(state, x, topo);
    const Vector net = w.w_rec * state.y + w.w_in * x + w.b_hidden;
    const Vector a = rate(topo);
    return NetworkState{state.y + a.cwiseProduct(net.array().tanh().matrix() - state.y)};
}

NetworkState advance_bar(const NetworkState& state, const Weights& w, const Vector& x, const Topology& topo) {
    NetworkState s = state;
    for (std::size_t i = 0; i < topo.steps_per_bar(); ++i) {
        s = step(s, w, x, topo);
    }
    return s;
}

Prediction predict(const NetworkState& state, const Weights& w, const Topology& topo, Timestamp origin) {
    const Vector v = w.w_out * state.y + w.b_out;
    return Prediction{topo.n_out, std::vector<double>(v.data(), v.data() + v.size()), origin};
}

double loss(const Prediction& pred, std::span<const double> target) {
    if (pred.values.size() != target.size() || target.empty()) {
        throw ContractViolation("prediction and target lengths differ");
    }
    double s = 0.0;
    for (std::size_t j = 0; j < target.size(); ++j) {
        const double d = pred.values[j] - target[j];
        s += d * d;
    }
    return s / static_cast<double>(target.size());
}

GradientResult bptt_gradient(const Weights& w, const NetworkState& initial, std::span<const Vector> inputs,
                             std::span<const double> target, const Topology& topo, std::size_t depth) {
    if (depth < 1) {
        throw ContractViolation("truncation depth must be >= 1");
    }
    if (inputs.size() < depth) {
        throw WarmupError("bptt needs " + std::to_string(depth) + " mesh steps of history, have " +
                          std::to_string(inputs.size()));
    }
    if (inputs.size() != depth) {
        throw ContractViolation("bptt expects exactly `depth` inputs");
    }
    if (target.size() != topo.n_out) {
        throw ContractViolation("target length must equal the prediction horizon");
    }
    const Vector a = rate(topo);

    // Forward pass, keeping y_t and tanh(net_t).
    std::vector<Vector> ys;
    std::vector<Vector> acts;
    ys.reserve(depth + 1);
    acts.reserve(depth);
    ys.push_back(initial.y);
    for (std::size_t t = 0; t < depth; ++t) {
        check_dims(NetworkState{ys.back()}, inputs[t], topo);
        const Vector s = (w.w_rec * ys.back() + w.w_in * inputs[t] + w.b_hidden).array().tanh().matrix();
        ys.push_back(ys.back() + a.cwiseProduct(s - ys.back()));
        acts.push_back(s);
    }

    const Vector out = w.w_out * ys.back() + w.b_out;
    const Eigen::Map<const Vector> tgt(target.data(), static_cast<Eigen::Index>(target.size()));
    const Vector resid = out - tgt;
    const double k = static_cast<double>(topo.n_out);

    GradientResult result{Weights::zeros(topo), resid.squaredNorm() / k};
    auto& g = result.gradient;
    const Vector e = (2.0 / k) * resid;
    g.w_out = e * ys.back().transpose();
    g.b_out = e;

    Vector delta = w.w_out.transpose() * e;  // dL/dy_t
    const Vector keep = Vector::Ones(a.size()) - a;
    for (std::size_t t = depth; t-- > 0;) {
        const Vector& s = acts[t];
        const Vector dnet = delta.cwiseProduct(a).cwiseProduct((1.0 - s.array().square()).matrix());
        g.w_rec.noalias() += dnet * ys[t].transpose();
        g.w_in.noalias() += dnet * inputs[t].transpose();
        g.b_hidden += dnet;
        delta = delta.cwiseProduct(keep) + w.w_rec.transpose() * dnet;
    }
    return result;
}

UpdateResult online_update(const Weights& w, const Gradient& g, const Weights& stats, const TrainConfig& cfg) {
    UpdateResult r{w, stats};
    const double decay = cfg.adapt_decay;
    auto apply = [&](auto& param, auto& st, const auto& grad) {
        st = decay * st + (1.0 - decay) * grad.cwiseProduct(grad);
        param.array() -= cfg.base_rate * grad.array() / (st.array().sqrt() + cfg.epsilon);
    };
    apply(r.weights.w_in, r.stats.w_in, g.w_in);
    apply(r.weights.w_rec, r.stats.w_rec, g.w_rec);
    apply(r.weights.w_out, r.stats.w_out, g.w_out);
    apply(r.weights.b_hidden, r.stats.b_hidden, g.b_hidden);
    apply(r.weights.b_out, r.stats.b_out, g.b_out);
    return r;
}

OnlineTrainer::OnlineTrainer(Topology topo, TrainConfig cfg)
    : OnlineTrainer(topo, cfg, init_weights(topo, cfg.seed)) {}

OnlineTrainer::OnlineTrainer(Topology topo, TrainConfig cfg, Weights initial)
    : topo_(std::move(topo)), cfg_(cfg), weights_(std::move(initial)) {
    topo_.validate();
    cfg_.validate();
    stats_ = Weights::zeros(topo_);
    state_ = NetworkState::zeros(topo_);
}

Prediction OnlineTrainer::observe(const StreamSample& sample) {
    const auto spb = topo_.steps_per_bar();
    for (std::size_t i = 0; i < spb; ++i) {
        mesh_.push_back(MeshRecord{state_, sample.features});
        state_ = step(state_, weights_, sample.features, topo_);
    }
    const std::size_t mesh_end = mesh_offset_ + mesh_.size();
    auto pred = predict(state_, weights_, topo_, sample.timestamp);
    pending_.push_back(Pending{pred, mesh_end, bars_});

    returns_.push_back(sample.realized_return);
    if (returns_.size() > topo_.n_out) {
        returns_.pop_front();
    }
    ++bars_;
    mature();

    // Keep enough mesh history for the oldest pending prediction.
    const std::size_t oldest_end = pending_.empty() ? mesh_end : pending_.front().mesh_end;
    const std::size_t keep_from = oldest_end > cfg_.truncation_depth ? oldest_end - cfg_.truncation_depth : 0;
    while (mesh_offset_ < keep_from && !mesh_.empty()) {
        mesh_.pop_front();
        ++mesh_offset_;
    }
    return pred;
}

void OnlineTrainer::mature() {
    const std::size_t k = topo_.n_out;
    if (pending_.empty() || pending_.front().bar + k + 1 != bars_) {
        return;
    }
    const Pending p = std::move(pending_.front());
    pending_.pop_front();
    const std::vector<double> target(returns_.begin(), returns_.end());
    const double emitted_loss = loss(p.prediction, target);
    if (!std::isfinite(emitted_loss)) {
        throw NumericalError("non-finite prediction error");
    }
    error_.add(emitted_loss);

    const std::size_t h = cfg_.truncation_depth;
    if (p.mesh_end < h) {
        return;  // warm-up
    }
    const std::size_t begin = p.mesh_end - h - mesh_offset_;
    std::vector<Vector> inputs;
    inputs.reserve(h);
    for (std::size_t i = 0; i < h; ++i) {
        inputs.push_back(mesh_[begin + i].input);
    }
    const auto grad = bptt_gradient(weights_, mesh_[begin].before, inputs, target, topo_, h);
    auto upd = online_update(weights_, grad.gradient, stats_, cfg_);
    if (!upd.weights.all_finite()) {
        throw NumericalError("non-finite weights after online update");
    }
    weights_ = std::move(upd.weights);
    stats_ = std::move(upd.stats);
    ++updates_;
}

TrainResult train_online(std::span<const StreamSample> stream, const Topology& topo, const TrainConfig& cfg) {
    OnlineTrainer trainer(topo, cfg);
    TrainResult result;
    result.predictions.reserve(stream.size());
    std::size_t terms = 0;
    for (const auto& sample : stream) {
        result.predictions.push_back(trainer.observe(sample));
        if (trainer.error().n_terms != terms) {
            terms = trainer.error().n_terms;
            result.trace.push_back(trainer.error());
        }
    }
    result.weights = trainer.weights();
    result.updates = trainer.update_count();
    return result;
}

// --- feedforward baseline -------------------------------------------------

FeedforwardBaseline::FeedforwardBaseline(std::size_t n_in, std::size_t n_hidden, std::size_t n_out,
                                         std::uint64_t seed) {
    *this = zeros(n_in, n_hidden, n_out);
    std::mt19937_64 rng(seed);
    fill_uniform(w1_, 1.0 / std::sqrt(static_cast<double>(n_in)), rng);
    fill_uniform(w2_, 1.0 / std::sqrt(static_cast<double>(n_hidden)), rng);
}

FeedforwardBaseline FeedforwardBaseline::zeros(std::size_t n_in, std::size_t n_hidden, std::size_t n_out) {
    FeedforwardBaseline f;
    const auto in = static_cast<Eigen::Index>(n_in);
    const auto hid = static_cast<Eigen::Index>(n_hidden);
    const auto out = static_cast<Eigen::Index>(n_out);
    f.w1_ = Matrix::Zero(hid, in);
    f.b1_ = Vector::Zero(hid);
    f.w2_ = Matrix::Zero(out, hid);
    f.b2_ = Vector::Zero(out);
    return f;
}

Prediction FeedforwardBaseline::predict(std::span<const double> window, Timestamp origin) const {
    if (window.size() != n_in()) {
        throw ContractViolation("baseline input window has the wrong length");
    }
    const Eigen::Map<const Vector> x(window.data(), static_cast<Eigen::Index>(window.size()));
    const Vector h = (w1_ * x + b1_).array().tanh().matrix();
    const Vector v = w2_ * h + b2_;
    return Prediction{n_out(), std::vector<double>(v.data(), v.data() + v.size()), origin};
}

double FeedforwardBaseline::loss(const Matrix& inputs, const Matrix& targets) const {
    const Matrix h = ((w1_ * inputs.transpose()).colwise() + b1_).array().tanh().matrix();
    const Matrix out = (w2_ * h).colwise() + b2_;
    return (out - targets.transpose()).squaredNorm() / static_cast<double>(targets.size());
}

std::vector<double> FeedforwardBaseline::gradient(const Matrix& inputs, const Matrix& targets) const {
    const Matrix x = inputs.transpose();  // n_in x N
    const Matrix h = ((w1_ * x).colwise() + b1_).array().tanh().matrix();
    const Matrix out = (w2_ * h).colwise() + b2_;
    const Matrix e = (2.0 / static_cast<double>(targets.size())) * (out - targets.transpose());
    const Matrix g_w2 = e * h.transpose();
    const Vector g_b2 = e.rowwise().sum();
    const Matrix dh = (w2_.transpose() * e).cwiseProduct((1.0 - h.array().square()).matrix());
    const Matrix g_w1 = dh * x.transpose();
    const Vector g_b1 = dh.rowwise().sum();
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w1_.size() + b1_.size() + w2_.size() + b2_.size()));
    append_row_major(g_w1, flat);
    append_row_major(g_b1, flat);
    append_row_major(g_w2, flat);
    append_row_major(g_b2, flat);
    return flat;
}

std::vector<double> FeedforwardBaseline::flatten() const {
    std::vector<double> flat;
    append_row_major(w1_, flat);
    append_row_major(b1_, flat);
    append_row_major(w2_, flat);
    append_row_major(b2_, flat);
    return flat;
}

void FeedforwardBaseline::assign(std::span<const double> flat) {
    if (flat.size() != static_cast<std::size_t>(w1_.size() + b1_.size() + w2_.size() + b2_.size())) {
        throw ContractViolation("flat parameter vector has the wrong length");
    }
    std::size_t pos = 0;
    read_row_major(w1_, flat, pos);
    read_row_major(b1_, flat, pos);
    read_row_major(w2_, flat, pos);
    read_row_major(b2_, flat, pos);
}

FeedforwardBaseline feedforward_baseline(const Matrix& inputs, const Matrix& targets, const BaselineConfig& cfg) {
    if (inputs.rows() != targets.rows() || inputs.rows() == 0) {
        throw ContractViolation("baseline needs matching, non-empty input and target rows");
    }
    FeedforwardBaseline net(static_cast<std::size_t>(inputs.cols()), cfg.n_hidden,
                            static_cast<std::size_t>(targets.cols()), cfg.seed);
    auto params = net.flatten();
    std::vector<double> velocity(params.size(), 0.0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto g = net.gradient(inputs, targets);
        for (std::size_t i = 0; i < params.size(); ++i) {
            velocity[i] = cfg.momentum * velocity[i] - cfg.learning_rate * g[i];
            params[i] += velocity[i];
        }
        net.assign(params);
    }
    return net;
}

}  // namespace ctnet::ctrnn
