#include "bvx/commands.hpp"

#include "bvx/csv.hpp"
#include "bvx/error.hpp"
#include "bvx/linear_lab.hpp"
#include "bvx/parallel.hpp"
#include "bvx/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace bvx {

namespace {

constexpr std::uint64_t kUnderTag = 0;
constexpr std::uint64_t kOverTag = 1;
constexpr std::uint64_t kPaddedTag = 2;
constexpr std::size_t kChunk = 256;

struct McEstimate {
  double value = 0;
  double stderr_ = 0;
};

/// Unbiased variance of each column of `samples` (rows are draws), with the
/// standard error of that estimate from the spread of squared deviations.
std::vector<McEstimate> column_variances(const Eigen::MatrixXd& samples) {
  const auto n = static_cast<double>(samples.rows());
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  std::vector<McEstimate> out(static_cast<std::size_t>(samples.cols()));
  for (Eigen::Index c = 0; c < samples.cols(); ++c) {
    const Eigen::ArrayXd q = (samples.col(c).array() - mean(c)).square();
    const double qbar = q.mean();
    const double q_var = (q - qbar).square().sum() / (n - 1.0);
    const double correction = n / (n - 1.0);
    out[std::size_t(c)] = {qbar * correction, std::sqrt(q_var / n) * correction};
  }
  return out;
}

/// Mean over columns of the per-column variance, with a standard error from
/// the per-draw average squared deviation.
McEstimate averaged_variance(const Eigen::MatrixXd& samples) {
  const auto n = static_cast<double>(samples.rows());
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const Eigen::ArrayXd q = (samples.rowwise() - mean).rowwise().squaredNorm().array() / double(samples.cols());
  const double qbar = q.mean();
  const double q_var = (q - qbar).square().sum() / (n - 1.0);
  const double correction = n / (n - 1.0);
  return {qbar * correction, std::sqrt(q_var / n) * correction};
}

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Stream& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

struct Instance {
  LinearFixedDesign<double> design;
  Eigen::MatrixXd probes;  // one probe per row
};

Instance make_instance(std::uint64_t seed, std::uint64_t tag, std::size_t m, Eigen::Index n, double sigma,
                       std::size_t probes) {
  Stream rng(derive_seed(seed, Purpose::Design, {tag, static_cast<std::uint64_t>(n)}));
  Eigen::MatrixXd x = gaussian_matrix(static_cast<Eigen::Index>(m), n, rng);
  Eigen::VectorXd theta = gaussian_matrix(n, 1, rng);
  Eigen::MatrixXd p = gaussian_matrix(static_cast<Eigen::Index>(probes), n, rng);
  return {LinearFixedDesign<double>(std::move(x), std::move(theta), sigma), std::move(p)};
}

template <typename DrawFn>
void for_each_draw(std::size_t draws, unsigned jobs, DrawFn&& draw) {
  const std::size_t chunks = (draws + kChunk - 1) / kChunk;
  parallel_for(chunks, jobs, [&](std::size_t c) {
    const std::size_t end = std::min(draws, (c + 1) * kChunk);
    for (std::size_t j = c * kChunk; j < end; ++j) draw(j);
  });
}

OracleCheck check(std::string name, Eigen::Index n, std::size_t m, double observed, double expected,
                  double tolerance) {
  return {std::move(name), n, m, observed, expected, tolerance, std::abs(observed - expected) <= tolerance};
}

}  // namespace

bool LinearOracleResult::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const OracleCheck& c) { return c.pass; });
}

LinearOracleResult run_linear_oracle(const LinearOracleConfig& cfg, std::uint64_t seed, unsigned jobs) {
  if (cfg.probe_points < 1) throw ConfigError("linear.probe_points must be >= 1");
  if (cfg.mc_draws_under < 2 || cfg.mc_draws_over < 2) throw ConfigError("Monte Carlo needs at least 2 draws");
  if (!(cfg.sigma_eps >= 0.0)) throw ConfigError("linear.sigma_eps must be >= 0");
  jobs = resolve_jobs(jobs);
  const double s2 = cfg.sigma_eps * cfg.sigma_eps;
  const double k = cfg.tolerance_sigmas;
  LinearOracleResult result;

  // Under-parameterized: closed form, randomness from label noise only.
  std::vector<std::pair<double, double>> n_vs_average;
  for (Eigen::Index n : cfg.n_under) {
    if (n < 1 || static_cast<std::size_t>(n) > cfg.m_under) {
      throw ConfigError("linear.n_under entries must lie in [1, m_under]");
    }
    const auto inst = make_instance(seed, kUnderTag, cfg.m_under, n, cfg.sigma_eps, cfg.probe_points);
    const auto& d = inst.design;
    if (!d.full_column_rank()) throw ConfigError("random under-parameterized design is rank-deficient");
    Eigen::MatrixXd preds(static_cast<Eigen::Index>(cfg.mc_draws_under), inst.probes.rows());
    for_each_draw(cfg.mc_draws_under, jobs, [&](std::size_t j) {
      Stream rng(derive_seed(seed, Purpose::Noise, {kUnderTag, static_cast<std::uint64_t>(n), j}));
      const auto sol = solve_closed_form(d, d.sample_labels(rng));
      preds.row(static_cast<Eigen::Index>(j)) = (inst.probes * sol.theta_hat).transpose();
    });
    const auto mc = column_variances(preds);
    for (std::size_t p = 0; p < cfg.probe_points; ++p) {
      const Eigen::VectorXd x = inst.probes.row(static_cast<Eigen::Index>(p)).transpose();
      const double formula = variance_under(d, x);
      result.rows.push_back({n, cfg.m_under, d.rank(), cfg.sigma_eps, p, 0.0, formula, mc[p].value, mc[p].stderr_});
      result.checks.push_back(check("under_mc_variance", n, cfg.m_under, mc[p].value, formula, k * mc[p].stderr_));
    }
    const double average = expected_empirical_variance(d);
    n_vs_average.emplace_back(static_cast<double>(n), average);
    result.checks.push_back(check("under_row_average", n, cfg.m_under, average,
                                  static_cast<double>(n) * s2 / static_cast<double>(cfg.m_under),
                                  cfg.identity_tolerance));
  }
  if (n_vs_average.size() >= 2) {
    double mx = 0, my = 0;
    for (const auto& [x, y] : n_vs_average) {
      mx += x;
      my += y;
    }
    mx /= static_cast<double>(n_vs_average.size());
    my /= static_cast<double>(n_vs_average.size());
    double sxy = 0, sxx = 0;
    for (const auto& [x, y] : n_vs_average) {
      sxy += (x - mx) * (y - my);
      sxx += (x - mx) * (x - mx);
    }
    result.checks.push_back(check("under_slope", 0, cfg.m_under, sxx > 0 ? sxy / sxx : 0.0,
                                  s2 / static_cast<double>(cfg.m_under), cfg.identity_tolerance));
  }

  // Over-parameterized: gradient descent from theta_0 ~ N(0, I/N), noise and init both random.
  for (Eigen::Index n : cfg.n_over) {
    if (n < 1) throw ConfigError("linear.n_over entries must be >= 1");
    const auto inst = make_instance(seed, kOverTag, cfg.m_over, n, cfg.sigma_eps, cfg.probe_points);
    const auto& d = inst.design;
    const double step = default_gd_step(d);
    const auto draws = static_cast<Eigen::Index>(cfg.mc_draws_over);
    Eigen::MatrixXd probe_preds(draws, inst.probes.rows());
    Eigen::MatrixXd row_preds(draws, d.rows());
    std::vector<double> limit_gap(cfg.mc_draws_over);
    for_each_draw(cfg.mc_draws_over, jobs, [&](std::size_t j) {
      Stream noise(derive_seed(seed, Purpose::Noise, {kOverTag, static_cast<std::uint64_t>(n), j}));
      Stream init(derive_seed(seed, Purpose::Theta0, {kOverTag, static_cast<std::uint64_t>(n), j}));
      const Eigen::VectorXd y = d.sample_labels(noise);
      const Eigen::VectorXd theta0 = sample_theta0<double>(n, init);
      const auto sol = solve_gd(d, y, theta0, step, 1000000, 1e-10);
      limit_gap[j] = (sol.theta_hat - gd_limit(d, y, theta0)).norm();
      probe_preds.row(static_cast<Eigen::Index>(j)) = (inst.probes * sol.theta_hat).transpose();
      row_preds.row(static_cast<Eigen::Index>(j)) = (d.x() * sol.theta_hat).transpose();
    });
    result.checks.push_back(check("over_gd_limit", n, cfg.m_over,
                                  *std::max_element(limit_gap.begin(), limit_gap.end()), 0.0, cfg.gd_tolerance));
    const auto mc = column_variances(probe_preds);
    for (std::size_t p = 0; p < cfg.probe_points; ++p) {
      const Eigen::VectorXd x = inst.probes.row(static_cast<Eigen::Index>(p)).transpose();
      const auto v = variance_over(d, x);
      result.rows.push_back(
          {n, cfg.m_over, d.rank(), cfg.sigma_eps, p, v.init_term, v.sampling_term, mc[p].value, mc[p].stderr_});
      result.checks.push_back(check("over_mc_variance", n, cfg.m_over, mc[p].value, v.total(), k * mc[p].stderr_));
    }
    const double expected_avg = static_cast<double>(d.rank()) * s2 / static_cast<double>(cfg.m_over);
    result.checks.push_back(check("over_row_average", n, cfg.m_over, expected_empirical_variance(d), expected_avg,
                                  cfg.identity_tolerance));
    const auto avg = averaged_variance(row_preds);
    result.checks.push_back(check("over_row_average_mc", n, cfg.m_over, avg.value, expected_avg, k * avg.stderr_));
  }

  // Zero-padded family: the probe's null-space norm is fixed, so init_term * N is constant
  // and the sampling term does not move.
  if (!cfg.pad_dims.empty()) {
    const auto inst = make_instance(seed, kPaddedTag, cfg.m_over, cfg.pad_base_n, cfg.sigma_eps, 1);
    const Eigen::VectorXd probe = inst.probes.row(0).transpose();
    const auto table = init_variance_scaling_probe(inst.design, probe, cfg.pad_dims, ProbePadding::Zero);
    const double c0 = table.front().init_term * static_cast<double>(table.front().dims);
    double s0 = 0;
    for (std::size_t i = 0; i < table.size(); ++i) {
      const auto design = pad_design(inst.design, cfg.pad_dims[i]);
      const auto x = pad_probe<double>(probe, cfg.pad_dims[i], ProbePadding::Zero);
      const auto v = variance_over(design, x);
      if (i == 0) s0 = v.sampling_term;
      const double nan = std::numeric_limits<double>::quiet_NaN();
      result.rows.push_back({table[i].dims, cfg.m_over, design.rank(), cfg.sigma_eps, 0, v.init_term,
                             v.sampling_term, nan, nan});
      result.checks.push_back(check("padded_init_times_n", table[i].dims, cfg.m_over,
                                    table[i].init_term * static_cast<double>(table[i].dims), c0,
                                    cfg.scaling_tolerance * std::abs(c0)));
      result.checks.push_back(check("padded_sampling_constant", table[i].dims, cfg.m_over, v.sampling_term, s0,
                                    cfg.scaling_tolerance * std::max(std::abs(s0), 1e-300)));
    }
  }
  return result;
}

void write_oracle_csv(std::ostream& out, const std::vector<OracleRow>& rows) {
  const auto r = [](double v) { return csv::format_real(v); };
  out << kOracleHeader << '\n';
  for (const auto& row : rows) {
    out << row.n << ',' << row.m << ',' << row.rank << ',' << r(row.sigma_eps) << ',' << row.point_id << ','
        << r(row.init_term) << ',' << r(row.sampling_term) << ',' << r(row.mc_estimate) << ','
        << r(row.mc_stderr) << '\n';
  }
}

void write_oracle_checks_csv(std::ostream& out, const std::vector<OracleCheck>& checks) {
  const auto r = [](double v) { return csv::format_real(v); };
  out << kOracleChecksHeader << '\n';
  for (const auto& c : checks) {
    const double abs_err = std::abs(c.observed - c.expected);
    const double rel_err = c.expected != 0.0 ? abs_err / std::abs(c.expected) : abs_err;
    out << c.name << ',' << c.n << ',' << c.m << ',' << r(c.observed) << ',' << r(c.expected) << ',' << r(abs_err)
        << ',' << r(rel_err) << ',' << r(c.tolerance) << ',' << (c.pass ? "pass" : "fail") << '\n';
  }
}

}  // namespace bvx
