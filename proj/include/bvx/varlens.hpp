#ifndef BVX_VARLENS_HPP
#define BVX_VARLENS_HPP

#include "bvx/data_forge.hpp"
#include "bvx/linear_lab.hpp"
#include "bvx/net_core.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace bvx {

struct Provenance {
  std::string task;
  Eigen::Index width = 0;
  std::string config_digest;
};

/// Ensemble predictions indexed (replicate s, seed o, test point i, output k).
/// Each member's T x K block is stored contiguously, row-major.
class PredictionTensor {
 public:
  using MemberBlock = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  PredictionTensor() = default;
  PredictionTensor(std::size_t n_s, std::size_t n_o, std::size_t points, std::size_t outputs);

  std::size_t n_s() const { return n_s_; }
  std::size_t n_o() const { return n_o_; }
  std::size_t points() const { return points_; }
  std::size_t outputs() const { return outputs_; }

  double& operator()(std::size_t s, std::size_t o, std::size_t i, std::size_t k) {
    return values_[offset(s, o) + i * outputs_ + k];
  }
  double operator()(std::size_t s, std::size_t o, std::size_t i, std::size_t k) const {
    return values_[offset(s, o) + i * outputs_ + k];
  }

  Eigen::Map<const MemberBlock> member(std::size_t s, std::size_t o) const;
  void set_member(std::size_t s, std::size_t o, const Eigen::Ref<const Eigen::MatrixXd>& predictions);

  /// Copy restricted to test points [begin, begin + count).
  PredictionTensor slice_points(std::size_t begin, std::size_t count) const;

  bool all_finite() const;

  Provenance provenance;

 private:
  std::size_t offset(std::size_t s, std::size_t o) const { return (s * n_o_ + o) * points_ * outputs_; }

  std::size_t n_s_ = 0, n_o_ = 0, points_ = 0, outputs_ = 0;
  std::vector<double> values_;
};

enum class MeanMode { LabelAsMean, OracleMean };

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

struct CiOptions {
  double level = 0.99;
  std::size_t resamples = 1000;
  std::uint64_t seed = 0;
};

/// Per-test-point contributions; every report quantity is the mean of one of these.
struct PointwiseTerms {
  std::vector<double> bias;      // ||hbar - ybar||^2
  std::vector<double> variance;  // mean over members of ||h - hbar||^2
  std::vector<double> noise;     // ||y - ybar||^2
  std::vector<double> cross;     // 2 (hbar - ybar) . (ybar - y)
  std::vector<double> risk;      // mean over members of ||h - y||^2
};

struct BiasVarianceReport {
  double e_bias = 0.0;
  double e_variance = 0.0;
  double e_noise = 0.0;
  // Finite-sample bias/noise covariance. Zero in expectation and identically
  // zero in LabelAsMean mode; risk = bias + variance + noise + cross exactly.
  double e_cross = 0.0;
  double risk = 0.0;
  MeanMode mode = MeanMode::LabelAsMean;
  Interval ci_bias, ci_variance, ci_noise;
};

struct DecompositionReport {
  double var_sampling = 0.0;      // variance over s of the seed-averaged prediction
  double var_optimization = 0.0;  // mean over s of the variance over seeds
  double total = 0.0;             // variance over all (s, o) jointly
};

struct ClassificationRisk {
  double r_classif = 0.0;
  double r_reg = 0.0;
  bool bound_ok = false;
};

PointwiseTerms pointwise_bias_variance(const PredictionTensor& t, const Dataset& test, MeanMode mode);

BiasVarianceReport bias_variance(const PredictionTensor& t, const Dataset& test, MeanMode mode,
                                 const CiOptions& ci = {});

DecompositionReport total_variance_split(const PredictionTensor& t);

/// Per-point (var_sampling, var_optimization) contributions, for resampling.
std::pair<std::vector<double>, std::vector<double>> pointwise_variance_split(const PredictionTensor& t);

/// Percentile bootstrap over the test-point axis. `statistic` receives the
/// resampled point indices and recomputes the estimator.
Interval bootstrap_ci(std::size_t n_points, const std::function<double(std::span<const std::size_t>)>& statistic,
                      const CiOptions& opts);

/// Same, for a statistic that is the mean of per-point values.
Interval bootstrap_ci(std::span<const double> per_point, const CiOptions& opts);

/// Linear-interpolated quantile of already sorted values, p in [0, 1].
double sorted_quantile(std::span<const double> sorted, double p);

ClassificationRisk classification_risk_check(const PredictionTensor& t,
                                             const Eigen::Ref<const Eigen::MatrixXd>& one_hot_labels);

/// Number of test-point resamples on which r_classif <= 4 r_reg fails.
std::size_t classification_bound_violations(const PredictionTensor& t,
                                            const Eigen::Ref<const Eigen::MatrixXd>& one_hot_labels,
                                            const CiOptions& opts);

// Ensembles ----------------------------------------------------------------

using ReplicateFn = std::function<Dataset(std::size_t s)>;
using MemberFn =
    std::function<Eigen::MatrixXd(const Dataset& train, const Eigen::MatrixXd& eval_inputs, std::uint64_t seed)>;

struct EnsembleOptions {
  std::size_t n_s = 10;
  std::size_t n_o = 10;
  std::uint64_t master_seed = 0;
  unsigned jobs = 1;
};

std::uint64_t member_seed(std::uint64_t master_seed, std::size_t s, std::size_t o);

/// Trains n_s x n_o members: member (s, o) sees replicate s and seed member_seed(master, s, o).
/// Throws EnsembleError listing every diverged cell.
PredictionTensor run_ensemble(const ReplicateFn& replicates, const MemberFn& member,
                              const Eigen::MatrixXd& eval_inputs, const EnsembleOptions& opts);

/// Bootstrap replicates of `base`.
ReplicateFn bootstrap_source(const Dataset& base, std::size_t n_s, std::uint64_t master_seed);

/// Fixed design, fresh label noise per replicate.
ReplicateFn fixed_design_source(const LinearFixedDesign<double>& design, std::uint64_t master_seed);

MemberFn mlp_member(Eigen::Index width, const TrainConfig& cfg, Head head);
MemberFn linear_closed_form_member();
/// Gradient descent from theta_0 ~ N(0, I/N) drawn from the member seed.
MemberFn linear_gd_member(const LinearFixedDesign<double>& design, double tol = 1e-10);

/// MLP members on bootstrap replicates of `base`.
PredictionTensor run_ensemble(const Dataset& base, const Eigen::MatrixXd& eval_inputs, std::size_t n_s,
                              std::size_t n_o, Eigen::Index width, const TrainConfig& cfg,
                              std::uint64_t master_seed, unsigned jobs = 1);

}  // namespace bvx

#endif  // BVX_VARLENS_HPP
