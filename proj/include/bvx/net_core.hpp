#ifndef BVX_NET_CORE_HPP
#define BVX_NET_CORE_HPP

#include "bvx/data_forge.hpp"
#include "bvx/error.hpp"
#include "bvx/linear_lab.hpp"
#include "bvx/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace bvx {

enum class Activation : std::int32_t { ReLU = 0 };
enum class Head : std::int32_t { Linear = 0, Softmax = 1 };

/// One hidden layer: h(x) = head(W2 relu(W1 x + b1) + b2).
template <typename Scalar>
struct MlpModel {
  MatrixX<Scalar> w1;  // H x d
  VectorX<Scalar> b1;  // H
  MatrixX<Scalar> w2;  // K x H
  VectorX<Scalar> b2;  // K
  Activation activation = Activation::ReLU;
  Head head = Head::Linear;

  Eigen::Index width() const { return w1.rows(); }
  Eigen::Index input_dim() const { return w1.cols(); }
  Eigen::Index output_dim() const { return w2.rows(); }
  Eigen::Index parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

  bool all_finite() const {
    return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
  }

  /// Same shapes, all zeros. Used for gradients and momentum buffers.
  MlpModel zeros_like() const {
    MlpModel z;
    z.w1 = MatrixX<Scalar>::Zero(w1.rows(), w1.cols());
    z.b1 = VectorX<Scalar>::Zero(b1.size());
    z.w2 = MatrixX<Scalar>::Zero(w2.rows(), w2.cols());
    z.b2 = VectorX<Scalar>::Zero(b2.size());
    z.activation = activation;
    z.head = head;
    return z;
  }

  /// Flat view in declared field order; matrices row-major.
  VectorX<Scalar> to_flat() const {
    VectorX<Scalar> out(parameter_count());
    Eigen::Index at = 0;
    auto put = [&](const auto& m) {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out(at++) = m(r, c);
    };
    put(w1);
    put(b1);
    put(w2);
    put(b2);
    return out;
  }

  void assign_flat(const Eigen::Ref<const VectorX<Scalar>>& flat) {
    if (flat.size() != parameter_count()) throw ConfigError("flat parameter vector has wrong length");
    Eigen::Index at = 0;
    auto take = [&](auto& m) {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = flat(at++);
    };
    take(w1);
    take(b1);
    take(w2);
    take(b2);
  }
};

/// Per-layer Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases,
/// so weight variance is 1/(3 fan_in) and shrinks with width in the second layer.
struct InitSpec {
  std::uint64_t seed = 0;
};

template <typename Scalar>
MlpModel<Scalar> init_mlp(Eigen::Index width, Eigen::Index input_dim, Eigen::Index output_dim, Head head,
                          const InitSpec& spec) {
  if (width < 1) throw ConfigError("network width must be >= 1");
  if (input_dim < 1 || output_dim < 1) throw ConfigError("network dimensions must be >= 1");
  Stream rng(derive_seed(spec.seed, Purpose::Init));
  MlpModel<Scalar> m;
  m.head = head;
  auto fill = [&](auto& p, Eigen::Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c) p(r, c) = Scalar(rng.uniform(-bound, bound));
  };
  m.w1.resize(width, input_dim);
  m.b1.resize(width);
  m.w2.resize(output_dim, width);
  m.b2.resize(output_dim);
  fill(m.w1, input_dim);
  fill(m.b1, input_dim);
  fill(m.w2, width);
  fill(m.b2, width);
  return m;
}

namespace detail {

template <typename Scalar>
void softmax_rows(MatrixX<Scalar>& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
}

template <typename Scalar>
struct ForwardCache {
  MatrixX<Scalar> pre;     // n x H
  MatrixX<Scalar> hidden;  // n x H
  MatrixX<Scalar> out;     // n x K
};

template <typename Scalar, typename Derived>
ForwardCache<Scalar> forward_cached(const MlpModel<Scalar>& m, const Eigen::MatrixBase<Derived>& inputs) {
  ForwardCache<Scalar> c;
  c.pre = (inputs * m.w1.transpose()).rowwise() + m.b1.transpose();
  c.hidden = c.pre.cwiseMax(Scalar(0));
  c.out = (c.hidden * m.w2.transpose()).rowwise() + m.b2.transpose();
  if (m.head == Head::Softmax) softmax_rows(c.out);
  return c;
}

}  // namespace detail

/// Rows of `inputs` are samples; returns one output row per sample.
template <typename Scalar, typename Derived>
MatrixX<Scalar> forward(const MlpModel<Scalar>& m, const Eigen::MatrixBase<Derived>& inputs) {
  if (inputs.cols() != m.input_dim()) throw ConfigError("input dimension does not match the network");
  return detail::forward_cached(m, inputs).out;
}

template <typename Scalar, typename Derived>
VectorX<Scalar> forward_one(const MlpModel<Scalar>& m, const Eigen::MatrixBase<Derived>& x) {
  return forward(m, x.transpose()).row(0).transpose();
}

/// Mean over samples of the squared error summed over outputs.
template <typename Scalar, typename DX, typename DY>
Scalar squared_loss(const MlpModel<Scalar>& m, const Eigen::MatrixBase<DX>& inputs,
                    const Eigen::MatrixBase<DY>& targets) {
  return (forward(m, inputs) - targets).squaredNorm() / Scalar(inputs.rows());
}

template <typename Scalar>
struct LossGradient {
  Scalar loss = 0;
  MlpModel<Scalar> grad;
};

template <typename Scalar, typename DX, typename DY>
LossGradient<Scalar> loss_and_gradient(const MlpModel<Scalar>& m, const Eigen::MatrixBase<DX>& inputs,
                                       const Eigen::MatrixBase<DY>& targets) {
  const auto c = detail::forward_cached(m, inputs);
  const Scalar n = Scalar(inputs.rows());
  MatrixX<Scalar> diff = c.out - targets;
  LossGradient<Scalar> r;
  r.loss = diff.squaredNorm() / n;
  MatrixX<Scalar> d_out = (Scalar(2) / n) * diff;
  if (m.head == Head::Softmax) {
    // softmax Jacobian: p * (g - <g, p>)
    const VectorX<Scalar> inner = (d_out.array() * c.out.array()).rowwise().sum();
    d_out = c.out.array() * (d_out.colwise() - inner).array();
  }
  r.grad.activation = m.activation;
  r.grad.head = m.head;
  r.grad.w2 = d_out.transpose() * c.hidden;
  r.grad.b2 = d_out.colwise().sum().transpose();
  MatrixX<Scalar> d_pre = (d_out * m.w2).cwiseProduct((c.pre.array() > Scalar(0)).template cast<Scalar>().matrix());
  r.grad.w1 = d_pre.transpose() * inputs;
  r.grad.b1 = d_pre.colwise().sum().transpose();
  return r;
}

enum class Optimizer { SGDMomentum, BatchGD };

struct EarlyStop {
  double validation_fraction = 0.1;
  int patience = 100;
};

struct TrainConfig {
  Optimizer optimizer = Optimizer::SGDMomentum;
  double step_size = 0.01;
  double momentum = 0.9;
  int epochs = 100;
  std::size_t batch_size = 0;  // 0: whole training set
  std::optional<EarlyStop> early_stop;

  /// Throws ConfigError for values that cannot train on `train_rows` samples.
  void validate(std::size_t train_rows) const {
    if (!(step_size >= 0.0) || !std::isfinite(step_size)) throw ConfigError("step size must be finite and >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size > train_rows) throw ConfigError("batch size exceeds training set size");
    if (optimizer == Optimizer::BatchGD && batch_size != 0 && batch_size != train_rows) {
      throw ConfigError("batch gradient descent uses the whole training set");
    }
    if (early_stop) {
      const double f = early_stop->validation_fraction;
      if (!(f > 0.0 && f < 1.0)) throw ConfigError("validation fraction must be in (0, 1)");
      if (early_stop->patience < 1) throw ConfigError("patience must be >= 1");
    }
  }
};

/// Heavy-ball update: v <- momentum * v + g, p <- p - step * v.
template <typename P, typename V, typename G>
void momentum_step(Eigen::MatrixBase<P>& param, Eigen::MatrixBase<V>& velocity, const Eigen::MatrixBase<G>& grad,
                   typename P::Scalar step, typename P::Scalar momentum) {
  velocity = momentum * velocity + grad;
  param -= step * velocity;
}

template <typename Scalar>
struct TrainResult {
  MlpModel<Scalar> model;
  std::vector<double> loss_trace;  // training loss after each epoch
  int epochs_run = 0;
};

namespace detail {

/// Deterministic (train, validation) index split; validation gets round(fraction * m), at least 1.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t m, double fraction,
                                                                                   std::uint64_t seed) {
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  Stream rng(derive_seed(seed, Purpose::Split));
  rng.shuffle(order);
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * double(m))));
  if (n_val >= m) throw ConfigError("validation split leaves no training data");
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  return {std::move(train), std::move(val)};
}

template <typename Scalar>
MatrixX<Scalar> gather_rows(const MatrixX<Scalar>& src, std::span<const std::size_t> idx) {
  MatrixX<Scalar> out(static_cast<Eigen::Index>(idx.size()), src.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(Eigen::Index(r)) = src.row(Eigen::Index(idx[r]));
  return out;
}

}  // namespace detail

/// Trains on squared error. Deterministic in (model, data, cfg, seed).
/// Throws DivergenceError naming the (1-based) epoch whose loss is not finite.
template <typename Scalar>
TrainResult<Scalar> train(MlpModel<Scalar> model, const Dataset& data, const TrainConfig& cfg, std::uint64_t seed) {
  if (data.inputs.cols() != model.input_dim() || data.targets.cols() != model.output_dim()) {
    throw ConfigError("dataset shape does not match the network");
  }
  MatrixX<Scalar> x_all = data.inputs.template cast<Scalar>();
  MatrixX<Scalar> y_all = data.targets.template cast<Scalar>();
  MatrixX<Scalar> x = x_all, y = y_all, x_val, y_val;
  if (cfg.early_stop) {
    auto [tr, va] = detail::split_indices(data.rows(), cfg.early_stop->validation_fraction, seed);
    x = detail::gather_rows(x_all, tr);
    y = detail::gather_rows(y_all, tr);
    x_val = detail::gather_rows(x_all, va);
    y_val = detail::gather_rows(y_all, va);
  }
  const auto m = static_cast<std::size_t>(x.rows());
  cfg.validate(m);
  const std::size_t batch =
      (cfg.optimizer == Optimizer::BatchGD || cfg.batch_size == 0) ? m : cfg.batch_size;
  const auto step = Scalar(cfg.step_size);
  const auto mu = Scalar(cfg.momentum);

  TrainResult<Scalar> result;
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.epochs));
  MlpModel<Scalar> velocity = model.zeros_like();
  Stream shuffle_rng(derive_seed(seed, Purpose::Shuffle));
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;

  std::optional<MlpModel<Scalar>> best;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (batch == m) {
      auto lg = loss_and_gradient(model, x, y);
      if (cfg.optimizer == Optimizer::BatchGD) {
        model.w1 -= step * lg.grad.w1;
        model.b1 -= step * lg.grad.b1;
        model.w2 -= step * lg.grad.w2;
        model.b2 -= step * lg.grad.b2;
      } else {
        momentum_step(model.w1, velocity.w1, lg.grad.w1, step, mu);
        momentum_step(model.b1, velocity.b1, lg.grad.b1, step, mu);
        momentum_step(model.w2, velocity.w2, lg.grad.w2, step, mu);
        momentum_step(model.b2, velocity.b2, lg.grad.b2, step, mu);
      }
    } else {
      shuffle_rng.shuffle(order);
      for (std::size_t start = 0; start < m; start += batch) {
        const std::size_t len = std::min(batch, m - start);
        const std::span<const std::size_t> idx(order.data() + start, len);
        const MatrixX<Scalar> xb = detail::gather_rows(x, idx);
        const MatrixX<Scalar> yb = detail::gather_rows(y, idx);
        auto lg = loss_and_gradient(model, xb, yb);
        momentum_step(model.w1, velocity.w1, lg.grad.w1, step, mu);
        momentum_step(model.b1, velocity.b1, lg.grad.b1, step, mu);
        momentum_step(model.w2, velocity.w2, lg.grad.w2, step, mu);
        momentum_step(model.b2, velocity.b2, lg.grad.b2, step, mu);
      }
    }
    const double loss = static_cast<double>((detail::forward_cached(model, x).out - y).squaredNorm() / Scalar(m));
    if (!std::isfinite(loss) || !model.all_finite()) throw DivergenceError(epoch);
    result.loss_trace.push_back(loss);
    result.epochs_run = epoch;

    if (cfg.early_stop) {
      const double val = static_cast<double>(squared_loss(model, x_val, y_val));
      if (val < best_val) {
        best_val = val;
        best = model;
        since_best = 0;
      } else if (++since_best >= cfg.early_stop->patience) {
        break;
      }
    }
  }
  result.model = best ? std::move(*best) : std::move(model);
  return result;
}

/// Picks, per width, the candidate step with the lowest validation loss after
/// `budget.epochs`. Ties go to the smaller step; diverging candidates lose.
template <typename Scalar = double>
std::map<Eigen::Index, double> tune_step_size(std::span<const Eigen::Index> widths, const Dataset& data,
                                              std::span<const double> candidates, double validation_fraction,
                                              std::uint64_t seed, const TrainConfig& budget, Head head) {
  if (candidates.empty()) throw ConfigError("need at least one candidate step size");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation fraction must be in (0, 1)");
  }
  std::map<Eigen::Index, double> chosen;
  if (candidates.size() == 1) {
    for (auto w : widths) chosen[w] = candidates.front();
    return chosen;
  }
  auto [tr, va] = detail::split_indices(data.rows(), validation_fraction, seed);
  const Dataset train_part = data.select(tr);
  const Dataset val_part = data.select(va);
  const MatrixX<Scalar> x_val = val_part.inputs.template cast<Scalar>();
  const MatrixX<Scalar> y_val = val_part.targets.template cast<Scalar>();

  for (auto w : widths) {
    const std::uint64_t member_seed = derive_seed(seed, Purpose::Tune, {static_cast<std::uint64_t>(w)});
    const auto start = init_mlp<Scalar>(w, data.inputs.cols(), data.targets.cols(), head, InitSpec{member_seed});
    double best_loss = std::numeric_limits<double>::infinity();
    std::optional<double> best_step;
    for (double step : candidates) {
      TrainConfig cfg = budget;
      cfg.step_size = step;
      cfg.early_stop.reset();
      double loss = std::numeric_limits<double>::infinity();
      try {
        auto r = train(start, train_part, cfg, member_seed);
        loss = static_cast<double>(squared_loss(r.model, x_val, y_val));
        if (!std::isfinite(loss)) loss = std::numeric_limits<double>::infinity();
      } catch (const DivergenceError&) {
      }
      if (!std::isfinite(loss)) continue;
      if (!best_step || loss < best_loss || (loss == best_loss && step < *best_step)) {
        best_loss = loss;
        best_step = step;
      }
    }
    if (!best_step) throw TuningError("every candidate step size diverged at width " + std::to_string(w));
    chosen[w] = *best_step;
  }
  return chosen;
}

}  // namespace bvx

#endif  // BVX_NET_CORE_HPP
