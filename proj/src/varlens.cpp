#include "bvx/varlens.hpp"

#include "bvx/error.hpp"
#include "bvx/parallel.hpp"
#include "bvx/rng.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace bvx {

namespace {

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void require_probability(const Eigen::Ref<const Eigen::RowVectorXd>& h) {
  if ((h.array() < -1e-12).any() || std::abs(h.sum() - 1.0) > 1e-9 || !h.allFinite()) {
    throw ContractError("prediction is not a probability vector");
  }
}

}  // namespace

PredictionTensor::PredictionTensor(std::size_t n_s, std::size_t n_o, std::size_t points, std::size_t outputs)
    : n_s_(n_s), n_o_(n_o), points_(points), outputs_(outputs), values_(n_s * n_o * points * outputs, 0.0) {}

Eigen::Map<const PredictionTensor::MemberBlock> PredictionTensor::member(std::size_t s, std::size_t o) const {
  return {values_.data() + offset(s, o), static_cast<Eigen::Index>(points_), static_cast<Eigen::Index>(outputs_)};
}

void PredictionTensor::set_member(std::size_t s, std::size_t o, const Eigen::Ref<const Eigen::MatrixXd>& pred) {
  if (static_cast<std::size_t>(pred.rows()) != points_ || static_cast<std::size_t>(pred.cols()) != outputs_) {
    throw ConfigError("member prediction block has the wrong shape");
  }
  Eigen::Map<MemberBlock>(values_.data() + offset(s, o), pred.rows(), pred.cols()) = pred;
}

PredictionTensor PredictionTensor::slice_points(std::size_t begin, std::size_t count) const {
  if (begin + count > points_) throw ConfigError("point slice out of range");
  PredictionTensor out(n_s_, n_o_, count, outputs_);
  out.provenance = provenance;
  for (std::size_t s = 0; s < n_s_; ++s)
    for (std::size_t o = 0; o < n_o_; ++o)
      out.set_member(s, o, member(s, o).middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)));
  return out;
}

bool PredictionTensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

PointwiseTerms pointwise_bias_variance(const PredictionTensor& t, const Dataset& test, MeanMode mode) {
  if (t.points() != test.rows()) throw ConfigError("tensor test-point axis does not match the test set");
  if (t.outputs() != static_cast<std::size_t>(test.targets.cols())) {
    throw ConfigError("tensor output axis does not match the test targets");
  }
  Eigen::MatrixXd ybar = test.targets;
  if (mode == MeanMode::OracleMean) {
    if (!test.true_mean_available || !test.task.has_true_mean()) {
      throw UnsupportedError("OracleMean needs a synthetic task with a known conditional mean");
    }
    ybar = true_mean_rows(test.task, test.inputs);
  }

  const std::size_t members = t.n_s() * t.n_o();
  const std::size_t n = t.points();
  const auto k = static_cast<Eigen::Index>(t.outputs());
  PointwiseTerms out;
  out.bias.resize(n);
  out.variance.resize(n);
  out.noise.resize(n);
  out.cross.resize(n);
  out.risk.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    Eigen::RowVectorXd hbar = Eigen::RowVectorXd::Zero(k);
    for (std::size_t s = 0; s < t.n_s(); ++s)
      for (std::size_t o = 0; o < t.n_o(); ++o) hbar += t.member(s, o).row(row);
    hbar /= static_cast<double>(members);

    double var = 0.0, risk = 0.0;
    for (std::size_t s = 0; s < t.n_s(); ++s) {
      for (std::size_t o = 0; o < t.n_o(); ++o) {
        const auto h = t.member(s, o).row(row);
        var += (h - hbar).squaredNorm();
        risk += (h - test.targets.row(row)).squaredNorm();
      }
    }
    out.variance[i] = var / static_cast<double>(members);
    out.risk[i] = risk / static_cast<double>(members);
    out.bias[i] = (hbar - ybar.row(row)).squaredNorm();
    out.noise[i] = (test.targets.row(row) - ybar.row(row)).squaredNorm();
    out.cross[i] = 2.0 * (hbar - ybar.row(row)).dot(ybar.row(row) - test.targets.row(row));
  }
  return out;
}

BiasVarianceReport bias_variance(const PredictionTensor& t, const Dataset& test, MeanMode mode, const CiOptions& ci) {
  const PointwiseTerms p = pointwise_bias_variance(t, test, mode);
  BiasVarianceReport r;
  r.mode = mode;
  r.e_bias = mean_of(p.bias);
  r.e_variance = mean_of(p.variance);
  r.e_noise = mean_of(p.noise);
  r.e_cross = mean_of(p.cross);
  r.risk = mean_of(p.risk);
  // Three independent streams so that adding a quantity never shifts another's interval.
  r.ci_bias = bootstrap_ci(p.bias, {ci.level, ci.resamples, derive_seed(ci.seed, Purpose::Resample, {0})});
  r.ci_variance = bootstrap_ci(p.variance, {ci.level, ci.resamples, derive_seed(ci.seed, Purpose::Resample, {1})});
  r.ci_noise = bootstrap_ci(p.noise, {ci.level, ci.resamples, derive_seed(ci.seed, Purpose::Resample, {2})});
  return r;
}

std::pair<std::vector<double>, std::vector<double>> pointwise_variance_split(const PredictionTensor& t) {
  if (t.n_s() < 2 || t.n_o() < 2) throw ConfigError("variance split needs n_S >= 2 and n_O >= 2");
  const std::size_t n = t.points();
  const auto k = static_cast<Eigen::Index>(t.outputs());
  std::vector<double> sampling(n), optimization(n);
  Eigen::MatrixXd seed_means(static_cast<Eigen::Index>(t.n_s()), k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    double within = 0.0;
    for (std::size_t s = 0; s < t.n_s(); ++s) {
      Eigen::RowVectorXd mean_o = Eigen::RowVectorXd::Zero(k);
      for (std::size_t o = 0; o < t.n_o(); ++o) mean_o += t.member(s, o).row(row);
      mean_o /= static_cast<double>(t.n_o());
      double v = 0.0;
      for (std::size_t o = 0; o < t.n_o(); ++o) v += (t.member(s, o).row(row) - mean_o).squaredNorm();
      within += v / static_cast<double>(t.n_o());
      seed_means.row(static_cast<Eigen::Index>(s)) = mean_o;
    }
    optimization[i] = within / static_cast<double>(t.n_s());
    const Eigen::RowVectorXd grand = seed_means.colwise().mean();
    sampling[i] = (seed_means.rowwise() - grand).rowwise().squaredNorm().mean();
  }
  return {std::move(sampling), std::move(optimization)};
}

DecompositionReport total_variance_split(const PredictionTensor& t) {
  auto [sampling, optimization] = pointwise_variance_split(t);
  DecompositionReport r;
  r.var_sampling = mean_of(sampling);
  r.var_optimization = mean_of(optimization);

  // total computed directly from the joint grid, not as the sum of the parts
  const auto k = static_cast<Eigen::Index>(t.outputs());
  const double members = static_cast<double>(t.n_s() * t.n_o());
  double total = 0.0;
  for (std::size_t i = 0; i < t.points(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    Eigen::RowVectorXd hbar = Eigen::RowVectorXd::Zero(k);
    for (std::size_t s = 0; s < t.n_s(); ++s)
      for (std::size_t o = 0; o < t.n_o(); ++o) hbar += t.member(s, o).row(row);
    hbar /= members;
    double v = 0.0;
    for (std::size_t s = 0; s < t.n_s(); ++s)
      for (std::size_t o = 0; o < t.n_o(); ++o) v += (t.member(s, o).row(row) - hbar).squaredNorm();
    total += v / members;
  }
  r.total = t.points() ? total / static_cast<double>(t.points()) : 0.0;
  return r;
}

double sorted_quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw DegenerateError("quantile of an empty sample");
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Interval bootstrap_ci(std::size_t n_points, const std::function<double(std::span<const std::size_t>)>& statistic,
                      const CiOptions& opts) {
  if (n_points < 2) throw DegenerateError("bootstrap needs at least two test points");
  if (opts.resamples < 100) throw ConfigError("bootstrap needs at least 100 resamples");
  if (!(opts.level > 0.0 && opts.level < 1.0)) throw ConfigError("confidence level must be in (0, 1)");
  std::vector<double> stats(opts.resamples);
  std::vector<std::size_t> idx(n_points);
  for (std::size_t b = 0; b < opts.resamples; ++b) {
    Stream rng(derive_seed(opts.seed, Purpose::Resample, {b}));
    for (auto& v : idx) v = rng.index(n_points);
    stats[b] = statistic(idx);
  }
  std::sort(stats.begin(), stats.end());
  const double tail = (1.0 - opts.level) / 2.0;
  return {sorted_quantile(stats, tail), sorted_quantile(stats, 1.0 - tail)};
}

Interval bootstrap_ci(std::span<const double> per_point, const CiOptions& opts) {
  return bootstrap_ci(
      per_point.size(),
      [per_point](std::span<const std::size_t> idx) {
        double acc = 0.0;
        for (auto i : idx) acc += per_point[i];
        return acc / static_cast<double>(idx.size());
      },
      opts);
}

namespace {

// Per-point means over members of the 0-1 error and the squared error.
std::pair<std::vector<double>, std::vector<double>> pointwise_classification(
    const PredictionTensor& t, const Eigen::Ref<const Eigen::MatrixXd>& labels) {
  if (static_cast<std::size_t>(labels.rows()) != t.points() ||
      static_cast<std::size_t>(labels.cols()) != t.outputs()) {
    throw ConfigError("label matrix does not match the tensor");
  }
  if (!is_one_hot(labels)) throw ContractError("labels must be one-hot");
  const double members = static_cast<double>(t.n_s() * t.n_o());
  std::vector<double> classif(t.points(), 0.0), reg(t.points(), 0.0);
  for (std::size_t i = 0; i < t.points(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    Eigen::Index y = 0;
    labels.row(row).maxCoeff(&y);
    for (std::size_t s = 0; s < t.n_s(); ++s) {
      for (std::size_t o = 0; o < t.n_o(); ++o) {
        const auto h = t.member(s, o).row(row);
        require_probability(h);
        // correct only when the true class is the unique argmax; ties count as errors
        bool correct = true;
        for (Eigen::Index c = 0; c < h.size(); ++c) {
          if (c != y && h(c) >= h(y)) correct = false;
        }
        classif[i] += correct ? 0.0 : 1.0;
        reg[i] += (h - labels.row(row)).squaredNorm();
      }
    }
    classif[i] /= members;
    reg[i] /= members;
  }
  return {std::move(classif), std::move(reg)};
}

constexpr double kBoundSlack = 1e-12;

}  // namespace

ClassificationRisk classification_risk_check(const PredictionTensor& t,
                                             const Eigen::Ref<const Eigen::MatrixXd>& one_hot_labels) {
  auto [classif, reg] = pointwise_classification(t, one_hot_labels);
  ClassificationRisk r;
  r.r_classif = mean_of(classif);
  r.r_reg = mean_of(reg);
  r.bound_ok = r.r_classif <= 4.0 * r.r_reg + kBoundSlack;
  return r;
}

std::size_t classification_bound_violations(const PredictionTensor& t,
                                            const Eigen::Ref<const Eigen::MatrixXd>& one_hot_labels,
                                            const CiOptions& opts) {
  auto [classif, reg] = pointwise_classification(t, one_hot_labels);
  std::size_t violations = 0;
  // The interval itself is not needed; the statistic records each resample's verdict.
  bootstrap_ci(
      t.points(),
      [&](std::span<const std::size_t> idx) {
        double c = 0.0, q = 0.0;
        for (auto i : idx) {
          c += classif[i];
          q += reg[i];
        }
        if (!(c / idx.size() <= 4.0 * q / idx.size() + kBoundSlack)) ++violations;
        return c;
      },
      opts);
  return violations;
}

std::uint64_t member_seed(std::uint64_t master_seed, std::size_t s, std::size_t o) {
  return derive_seed(master_seed, Purpose::Init, {s, o});
}

PredictionTensor run_ensemble(const ReplicateFn& replicates, const MemberFn& member,
                              const Eigen::MatrixXd& eval_inputs, const EnsembleOptions& opts) {
  if (opts.n_s < 2 || opts.n_o < 2) throw ConfigError("ensembles need n_S >= 2 and n_O >= 2");
  std::vector<Dataset> sets(opts.n_s);
  for (std::size_t s = 0; s < opts.n_s; ++s) sets[s] = replicates(s);

  const std::size_t cells = opts.n_s * opts.n_o;
  std::vector<Eigen::MatrixXd> preds(cells);
  std::vector<char> diverged(cells, 0);
  parallel_for(cells, resolve_jobs(opts.jobs), [&](std::size_t c) {
    const std::size_t s = c / opts.n_o, o = c % opts.n_o;
    try {
      preds[c] = member(sets[s], eval_inputs, member_seed(opts.master_seed, s, o));
    } catch (const DivergenceError&) {
      diverged[c] = 1;
    }
  });

  std::vector<EnsembleError::Cell> failures;
  for (std::size_t c = 0; c < cells; ++c) {
    if (diverged[c]) failures.emplace_back(c / opts.n_o, c % opts.n_o);
  }
  if (!failures.empty()) throw EnsembleError(std::move(failures));

  const auto k = static_cast<std::size_t>(preds.front().cols());
  PredictionTensor t(opts.n_s, opts.n_o, static_cast<std::size_t>(eval_inputs.rows()), k);
  for (std::size_t c = 0; c < cells; ++c) t.set_member(c / opts.n_o, c % opts.n_o, preds[c]);
  if (!t.all_finite()) throw ContractError("ensemble produced non-finite predictions");
  return t;
}

ReplicateFn bootstrap_source(const Dataset& base, std::size_t n_s, std::uint64_t master_seed) {
  auto set = std::make_shared<ReplicateSet>(
      bootstrap_replicates(base, n_s, derive_seed(master_seed, Purpose::Bootstrap)));
  auto data = std::make_shared<Dataset>(base);
  return [set, data](std::size_t s) { return set->materialize(*data, s); };
}

ReplicateFn fixed_design_source(const LinearFixedDesign<double>& design, std::uint64_t master_seed) {
  auto d = std::make_shared<LinearFixedDesign<double>>(design);
  return [d, master_seed](std::size_t s) {
    Stream rng(derive_seed(master_seed, Purpose::Noise, {s}));
    Dataset out;
    out.inputs = d->x();
    out.targets = d->sample_labels(rng);
    out.task = TaskSpec::linear_teacher(d->theta_star(), d->sigma_eps());
    out.true_mean_available = true;
    return out;
  };
}

MemberFn mlp_member(Eigen::Index width, const TrainConfig& cfg, Head head) {
  return [width, cfg, head](const Dataset& train_set, const Eigen::MatrixXd& eval_inputs, std::uint64_t seed) {
    auto model = init_mlp<double>(width, train_set.inputs.cols(), train_set.targets.cols(), head, InitSpec{seed});
    auto result = train(std::move(model), train_set, cfg, seed);
    return Eigen::MatrixXd(forward(result.model, eval_inputs));
  };
}

MemberFn linear_closed_form_member() {
  return [](const Dataset& train_set, const Eigen::MatrixXd& eval_inputs, std::uint64_t) {
    const LinearFixedDesign<double> d(train_set.inputs, Eigen::VectorXd::Zero(train_set.inputs.cols()), 0.0);
    const auto sol = solve_closed_form(d, train_set.targets.col(0));
    return Eigen::MatrixXd(eval_inputs * sol.theta_hat);
  };
}

MemberFn linear_gd_member(const LinearFixedDesign<double>& design, double tol) {
  auto d = std::make_shared<LinearFixedDesign<double>>(design);
  const double step = default_gd_step(*d);
  return [d, step, tol](const Dataset& train_set, const Eigen::MatrixXd& eval_inputs, std::uint64_t seed) {
    if (train_set.inputs != d->x()) throw ConfigError("gradient-descent member is bound to a fixed design");
    Stream rng(derive_seed(seed, Purpose::Theta0));
    const Eigen::VectorXd theta0 = sample_theta0<double>(d->cols(), rng);
    const auto sol = solve_gd(*d, train_set.targets.col(0), theta0, step, 1000000, tol);
    return Eigen::MatrixXd(eval_inputs * sol.theta_hat);
  };
}

PredictionTensor run_ensemble(const Dataset& base, const Eigen::MatrixXd& eval_inputs, std::size_t n_s,
                              std::size_t n_o, Eigen::Index width, const TrainConfig& cfg,
                              std::uint64_t master_seed, unsigned jobs) {
  const Head head = base.task.is_classification() ? Head::Softmax : Head::Linear;
  auto t = run_ensemble(bootstrap_source(base, n_s, master_seed), mlp_member(width, cfg, head), eval_inputs,
                        EnsembleOptions{n_s, n_o, master_seed, jobs});
  t.provenance.task = base.task.name();
  t.provenance.width = width;
  return t;
}

}  // namespace bvx
