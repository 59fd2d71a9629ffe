#include "bvx/error.hpp"
#include "bvx/varlens.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace bvx;

namespace {

Dataset regression_labels(const Eigen::MatrixXd& y) {
  Dataset d;
  d.inputs = Eigen::MatrixXd::Zero(y.rows(), 1);
  d.targets = y;
  d.task = TaskSpec::sinusoid();
  d.true_mean_available = false;
  return d;
}

PredictionTensor random_tensor(std::size_t n_s, std::size_t n_o, std::size_t points, std::size_t k,
                               std::uint64_t seed) {
  PredictionTensor t(n_s, n_o, points, k);
  Stream rng(seed);
  for (std::size_t s = 0; s < n_s; ++s)
    for (std::size_t o = 0; o < n_o; ++o)
      for (std::size_t i = 0; i < points; ++i)
        for (std::size_t c = 0; c < k; ++c) t(s, o, i, c) = rng.normal() + 0.3 * double(s);
  return t;
}

PredictionTensor probability_tensor(std::size_t n_s, std::size_t n_o, std::size_t points, std::size_t k,
                                    std::uint64_t seed) {
  PredictionTensor t(n_s, n_o, points, k);
  Stream rng(seed);
  for (std::size_t s = 0; s < n_s; ++s)
    for (std::size_t o = 0; o < n_o; ++o)
      for (std::size_t i = 0; i < points; ++i) {
        double total = 0;
        for (std::size_t c = 0; c < k; ++c) total += (t(s, o, i, c) = std::exp(2.0 * rng.normal()));
        for (std::size_t c = 0; c < k; ++c) t(s, o, i, c) /= total;
      }
  return t;
}

Eigen::MatrixXd one_hot_labels(std::size_t points, std::size_t k, std::uint64_t seed) {
  Stream rng(seed);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(Eigen::Index(points), Eigen::Index(k));
  for (std::size_t i = 0; i < points; ++i) y(Eigen::Index(i), Eigen::Index(rng.index(k))) = 1.0;
  return y;
}

PredictionTensor permuted(const PredictionTensor& t, const std::vector<std::size_t>& ps,
                          const std::vector<std::size_t>& po) {
  PredictionTensor out(t.n_s(), t.n_o(), t.points(), t.outputs());
  for (std::size_t s = 0; s < t.n_s(); ++s)
    for (std::size_t o = 0; o < t.n_o(); ++o) out.set_member(s, o, t.member(ps[s], po[o]));
  return out;
}

}  // namespace

TEST_CASE("degenerate ensemble has no bias or variance") {
  PredictionTensor t(3, 2, 4, 1);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t o = 0; o < 2; ++o)
      for (std::size_t i = 0; i < 4; ++i) t(s, o, i, 0) = 1.5;
  const auto r = bias_variance(t, regression_labels(Eigen::MatrixXd::Constant(4, 1, 1.5)), MeanMode::LabelAsMean);
  CHECK(r.e_bias == 0.0);
  CHECK(r.e_variance == 0.0);
  CHECK(r.e_noise == 0.0);
  CHECK(r.ci_variance.low == 0.0);
  CHECK(r.ci_variance.high == 0.0);
}

TEST_CASE("two members at 0 and 2 around a label of 1") {
  PredictionTensor t(2, 1, 2, 1);
  for (std::size_t i = 0; i < 2; ++i) {
    t(0, 0, i, 0) = 0.0;
    t(1, 0, i, 0) = 2.0;
  }
  const auto r = bias_variance(t, regression_labels(Eigen::MatrixXd::Ones(2, 1)), MeanMode::LabelAsMean);
  CHECK(r.e_bias == 0.0);
  CHECK(r.e_variance == 1.0);
  CHECK(r.risk == 1.0);
}

TEST_CASE("oracle-mean noise estimate on the sinusoid") {
  const auto test = generate(TaskSpec::sinusoid(1, 1, 0.1), 1000, 31);
  PredictionTensor t(2, 2, 1000, 1);
  const auto r = bias_variance(t, test, MeanMode::OracleMean);
  // Squared N(0, 0.01) residuals have standard deviation sqrt(2) * 0.01.
  CHECK(std::abs(r.e_noise - 0.01) < 3 * std::sqrt(2.0) * 0.01 / std::sqrt(1000.0));
  CHECK(r.ci_noise.low < r.e_noise);
  CHECK(r.ci_noise.high > r.e_noise);

  Dataset real = test;
  real.task = TaskSpec::idx("a", "b", 1000);
  real.true_mean_available = false;
  CHECK_THROWS_AS(bias_variance(t, real, MeanMode::OracleMean), UnsupportedError);
}

TEST_CASE("risk decomposes exactly once the cross term is included") {
  const auto test = generate(TaskSpec::sinusoid(1, 1, 0.2), 40, 5);
  const auto t = random_tensor(4, 3, 40, 1, 6);
  const auto p = pointwise_bias_variance(t, test, MeanMode::OracleMean);
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK(std::abs(p.bias[i] + p.variance[i] + p.noise[i] + p.cross[i] - p.risk[i]) < 1e-9);
  }
  const auto r = bias_variance(t, test, MeanMode::OracleMean);
  CHECK(std::abs(r.e_bias + r.e_variance + r.e_noise + r.e_cross - r.risk) < 1e-9);
  CHECK(r.e_bias >= 0);
  CHECK(r.e_variance >= 0);
  CHECK(r.e_noise >= 0);

  // With noiseless labels the cross term vanishes and the three-term identity is exact.
  const auto clean = generate(TaskSpec::sinusoid(1, 1, 0.0), 40, 5);
  const auto c = bias_variance(t, clean, MeanMode::OracleMean);
  CHECK(std::abs(c.e_cross) < 1e-15);
  CHECK(std::abs(c.e_bias + c.e_variance + c.e_noise - c.risk) < 1e-9);

  // Labels as the mean: no noise term and no cross term.
  const auto l = bias_variance(t, test, MeanMode::LabelAsMean);
  CHECK(l.e_noise == 0.0);
  CHECK(l.e_cross == 0.0);
  CHECK(std::abs(l.e_bias + l.e_variance - l.risk) < 1e-9);
}

TEST_CASE("law of total variance on hand-computed cells") {
  PredictionTensor t(2, 2, 1, 1);
  t(0, 0, 0, 0) = 0;
  t(0, 1, 0, 0) = 2;
  t(1, 0, 0, 0) = 4;
  t(1, 1, 0, 0) = 6;
  const auto d = total_variance_split(t);
  CHECK(d.var_optimization == 1.0);
  CHECK(d.var_sampling == 4.0);
  CHECK(d.total == 5.0);

  PredictionTensor same(3, 4, 2, 1);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t i = 0; i < 2; ++i) same(s, o, i, 0) = double(s * 10 + i);
  CHECK(total_variance_split(same).var_optimization == 0.0);

  PredictionTensor flat(2, 2, 3, 2);
  const auto z = total_variance_split(flat);
  CHECK(z.var_sampling == 0.0);
  CHECK(z.var_optimization == 0.0);
  CHECK(z.total == 0.0);

  CHECK_THROWS_AS(total_variance_split(PredictionTensor(1, 3, 2, 1)), ConfigError);
}

TEST_CASE("total variance identity on random tensors") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto t = random_tensor(2 + seed % 4, 2 + seed % 3, 17, 1 + seed % 3, seed);
    const auto d = total_variance_split(t);
    CHECK(std::abs(d.var_sampling + d.var_optimization - d.total) < 1e-9);
    CHECK(d.var_sampling >= 0);
    CHECK(d.var_optimization >= 0);
  }
}

TEST_CASE("reports are invariant to replicate and seed order") {
  const auto test = generate(TaskSpec::sinusoid(), 25, 8);
  const auto t = random_tensor(4, 3, 25, 1, 9);
  const auto p = permuted(t, {2, 0, 3, 1}, {1, 2, 0});
  const auto a = bias_variance(t, test, MeanMode::OracleMean, {0.99, 200, 1});
  const auto b = bias_variance(p, test, MeanMode::OracleMean, {0.99, 200, 1});
  CHECK(a.e_bias == doctest::Approx(b.e_bias).epsilon(1e-14));
  CHECK(a.e_variance == doctest::Approx(b.e_variance).epsilon(1e-14));
  CHECK(a.ci_variance.low == doctest::Approx(b.ci_variance.low).epsilon(1e-14));
  const auto da = total_variance_split(t);
  const auto db = total_variance_split(p);
  CHECK(da.var_sampling == doctest::Approx(db.var_sampling).epsilon(1e-14));
  CHECK(da.var_optimization == doctest::Approx(db.var_optimization).epsilon(1e-14));
}

TEST_CASE("quantiles interpolate linearly") {
  const std::vector<double> v{1, 2, 3, 4};
  CHECK(sorted_quantile(v, 0.0) == 1.0);
  CHECK(sorted_quantile(v, 1.0) == 4.0);
  CHECK(sorted_quantile(v, 0.5) == 2.5);
  CHECK(sorted_quantile(v, 1.0 / 3.0) == doctest::Approx(2.0));
}

TEST_CASE("bootstrap percentile interval") {
  const std::vector<double> constant(30, 2.5);
  const auto c = bootstrap_ci(constant, {0.99, 500, 3});
  CHECK(c.low == 2.5);
  CHECK(c.high == 2.5);

  // Recompute the resample distribution independently and read its 0.5% and 99.5% points.
  std::vector<double> data(40);
  Stream rng(4);
  for (auto& x : data) x = rng.normal();
  const CiOptions opts{0.99, 1000, 77};
  const auto ci = bootstrap_ci(data, opts);
  std::vector<double> stats;
  for (std::size_t b = 0; b < 1000; ++b) {
    Stream r(derive_seed(77, Purpose::Resample, {b}));
    double acc = 0;
    for (std::size_t j = 0; j < data.size(); ++j) acc += data[r.index(data.size())];
    stats.push_back(acc / double(data.size()));
  }
  std::sort(stats.begin(), stats.end());
  // Type-7 quantile at p: position p * (B - 1).
  const auto at = [&](double p) {
    const double h = p * 999.0;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    return stats[lo] + (h - double(lo)) * (stats[std::min<std::size_t>(lo + 1, 999)] - stats[lo]);
  };
  CHECK(ci.low == doctest::Approx(at(0.005)).epsilon(1e-14));
  CHECK(ci.high == doctest::Approx(at(0.995)).epsilon(1e-14));
  CHECK(bootstrap_ci(data, opts).low == ci.low);

  CHECK_THROWS_AS(bootstrap_ci(std::vector<double>{1.0}, opts), DegenerateError);
  CHECK_THROWS_AS(bootstrap_ci(data, {0.99, 50, 1}), ConfigError);
}

TEST_CASE("bootstrap interval covers a Gaussian mean") {
  int covered = 0;
  const int trials = 500;
  for (int trial = 0; trial < trials; ++trial) {
    Stream rng(derive_seed(5, Purpose::Data, {std::uint64_t(trial)}));
    std::vector<double> x(100);
    for (auto& v : x) v = 3.0 + rng.normal();
    const auto ci = bootstrap_ci(x, {0.99, 1000, derive_seed(5, Purpose::Resample, {std::uint64_t(trial)})});
    covered += (ci.low <= 3.0 && 3.0 <= ci.high);
  }
  const double coverage = double(covered) / trials;
  CHECK(coverage >= 0.97);
  CHECK(coverage <= 1.0);
}

TEST_CASE("classification risk on hand examples") {
  Eigen::MatrixXd label(2, 2);
  label << 1, 0, 1, 0;
  PredictionTensor good(1, 1, 2, 2);
  for (std::size_t i = 0; i < 2; ++i) {
    good(0, 0, i, 0) = 0.6;
    good(0, 0, i, 1) = 0.4;
  }
  auto r = classification_risk_check(good, label);
  CHECK(r.r_classif == 0.0);
  CHECK(r.r_reg == doctest::Approx(0.32));
  CHECK(r.bound_ok);

  PredictionTensor bad(1, 1, 2, 2);
  for (std::size_t i = 0; i < 2; ++i) {
    bad(0, 0, i, 0) = 0.4;
    bad(0, 0, i, 1) = 0.6;
  }
  r = classification_risk_check(bad, label);
  CHECK(r.r_classif == 1.0);
  CHECK(r.r_reg == doctest::Approx(0.72));
  CHECK(r.bound_ok);

  PredictionTensor perfect(1, 1, 2, 2);
  for (std::size_t i = 0; i < 2; ++i) perfect(0, 0, i, 0) = 1.0;
  r = classification_risk_check(perfect, label);
  CHECK(r.r_classif == 0.0);
  CHECK(r.r_reg == 0.0);
  CHECK(r.bound_ok);

  PredictionTensor tie(1, 1, 2, 2);
  for (std::size_t i = 0; i < 2; ++i) tie(0, 0, i, 0) = tie(0, 0, i, 1) = 0.5;
  r = classification_risk_check(tie, label);
  CHECK(r.r_classif == 1.0);
  CHECK(r.r_reg == doctest::Approx(0.5));
  CHECK(r.bound_ok);

  PredictionTensor invalid(1, 1, 2, 2);
  invalid(0, 0, 0, 0) = 0.9;
  invalid(0, 0, 0, 1) = 0.9;
  CHECK_THROWS_AS(classification_risk_check(invalid, label), ContractError);
}

TEST_CASE("classification bound holds on random probability ensembles") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = probability_tensor(3, 3, 30, 4, seed);
    const auto y = one_hot_labels(30, 4, seed + 100);
    CHECK(classification_risk_check(t, y).bound_ok);
    CHECK(classification_bound_violations(t, y, {0.99, 200, seed}) == 0);
  }
}

TEST_CASE("ensembles: preconditions, determinism, thread independence") {
  const auto base = generate(TaskSpec::sinusoid(), 30, 1);
  const auto eval = generate(TaskSpec::sinusoid(), 10, 2).inputs;
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 10;
  CHECK_THROWS_AS(run_ensemble(base, eval, 1, 1, 5, cfg, 3), ConfigError);
  const auto a = run_ensemble(base, eval, 3, 2, 5, cfg, 3, 1);
  const auto b = run_ensemble(base, eval, 3, 2, 5, cfg, 3, 3);
  CHECK(a.n_s() == 3);
  CHECK(a.n_o() == 2);
  CHECK(a.points() == 10);
  CHECK(a.provenance.width == 5);
  CHECK(a.provenance.task == "sinusoid");
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t o = 0; o < 2; ++o) CHECK(a.member(s, o) == b.member(s, o));
  // Distinct cells see distinct seeds.
  CHECK(a.member(0, 0) != a.member(0, 1));
}

TEST_CASE("ensemble divergence lists the failing cells") {
  const auto base = generate(TaskSpec::sinusoid(), 30, 1);
  const auto eval = base.inputs;
  const MemberFn member = [](const Dataset&, const Eigen::MatrixXd& x, std::uint64_t seed) -> Eigen::MatrixXd {
    if (seed == member_seed(9, 1, 0)) throw DivergenceError(17);
    return Eigen::MatrixXd::Zero(x.rows(), 1);
  };
  try {
    run_ensemble(bootstrap_source(base, 2, 9), member, eval, {2, 2, 9, 2});
    FAIL("expected an ensemble error");
  } catch (const EnsembleError& e) {
    REQUIRE(e.failures().size() == 1);
    CHECK(e.failures()[0] == std::pair<std::size_t, std::size_t>{1, 0});
  }
}

TEST_CASE("closed-form linear members have no optimization variance") {
  Stream rng(3);
  Eigen::MatrixXd x(30, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const LinearFixedDesign<double> d(x, Eigen::Vector3d(1, -2, 0.5), 0.3);
  const auto t = run_ensemble(fixed_design_source(d, 4), linear_closed_form_member(), x.topRows(5), {5, 3, 4, 1});
  for (std::size_t s = 0; s < 5; ++s) CHECK(t.member(s, 0) == t.member(s, 2));
  CHECK(total_variance_split(t).var_optimization < 1e-28);
}

TEST_CASE("gradient-descent linear members reproduce both variance terms") {
  Stream rng(11);
  Eigen::MatrixXd x(4, 12);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  Eigen::VectorXd theta(12);
  for (Eigen::Index i = 0; i < 12; ++i) theta(i) = rng.normal();
  const LinearFixedDesign<double> d(x, theta, 0.3);
  Eigen::MatrixXd probe(1, 12);
  for (Eigen::Index i = 0; i < 12; ++i) probe(0, i) = rng.normal();
  const auto v = variance_over(d, Eigen::VectorXd(probe.row(0).transpose()));

  const std::size_t n_s = 60, n_o = 60;
  const auto t = run_ensemble(fixed_design_source(d, 21), linear_gd_member(d), probe, {n_s, n_o, 21, 1});
  const auto split = total_variance_split(t);

  // Population estimators: E[var_opt] = init (n_o-1)/n_o, E[var_samp] = (sampling + init/n_o)(n_s-1)/n_s.
  std::vector<double> within(n_s), means(n_s);
  for (std::size_t s = 0; s < n_s; ++s) {
    double m = 0;
    for (std::size_t o = 0; o < n_o; ++o) m += t(s, o, 0, 0);
    m /= double(n_o);
    double q = 0;
    for (std::size_t o = 0; o < n_o; ++o) q += (t(s, o, 0, 0) - m) * (t(s, o, 0, 0) - m);
    within[s] = q / double(n_o);
    means[s] = m;
  }
  double sd_within = 0;
  for (double w : within) sd_within += (w - split.var_optimization) * (w - split.var_optimization);
  sd_within = std::sqrt(sd_within / double(n_s - 1));
  const double opt_expected = v.init_term * double(n_o - 1) / double(n_o);
  CHECK(std::abs(split.var_optimization - opt_expected) < 3 * sd_within / std::sqrt(double(n_s)));

  const double samp_expected = (v.sampling_term + v.init_term / double(n_o)) * double(n_s - 1) / double(n_s);
  const double samp_se = samp_expected * std::sqrt(2.0 / double(n_s - 1));
  CHECK(std::abs(split.var_sampling - samp_expected) < 3 * samp_se);
}
