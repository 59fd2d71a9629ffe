#ifndef BVX_LINEAR_LAB_HPP
#define BVX_LINEAR_LAB_HPP

#include "bvx/error.hpp"
#include "bvx/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace bvx {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Fixed-design least squares: design X (m x N), true weights, label noise.
///
/// The thin SVD X = U S V^T is computed once. With V_r the right singular
/// vectors of the nonzero singular values, Sigma = X^T X = V_r S_r^2 V_r^T,
/// Sigma^+ = V_r S_r^-2 V_r^T and the null-space projector is I - V_r V_r^T.
template <typename Scalar>
class LinearFixedDesign {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  LinearFixedDesign(Matrix x, Vector theta_star, Scalar sigma_eps)
      : x_(std::move(x)), theta_star_(std::move(theta_star)), sigma_eps_(sigma_eps) {
    if (!(sigma_eps_ >= Scalar(0))) throw ConfigError("sigma_eps must be >= 0");
    if (x_.rows() == 0 || x_.cols() == 0) throw ConfigError("design matrix must be non-empty");
    if (theta_star_.size() != x_.cols()) throw ConfigError("theta_star length must equal design columns");
    Eigen::JacobiSVD<Matrix> svd(x_, Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    const Scalar smax = s.size() ? s(0) : Scalar(0);
    // rank cutoff: 1e-10 * max(m, N) * sigma_max
    const Scalar cutoff = Scalar(1e-10) * Scalar(std::max(x_.rows(), x_.cols())) * smax;
    rank_ = 0;
    while (rank_ < s.size() && s(rank_) > cutoff) ++rank_;
    singular_values_ = s.head(rank_);
    row_basis_ = svd.matrixV().leftCols(rank_);
  }

  const Matrix& x() const { return x_; }
  const Vector& theta_star() const { return theta_star_; }
  Scalar sigma_eps() const { return sigma_eps_; }
  Eigen::Index rows() const { return x_.rows(); }
  Eigen::Index cols() const { return x_.cols(); }
  Eigen::Index rank() const { return rank_; }
  bool full_column_rank() const { return rank_ == x_.cols(); }

  /// Orthonormal basis of the row space of X (N x r).
  const Matrix& row_basis() const { return row_basis_; }
  const Vector& singular_values() const { return singular_values_; }

  Scalar lambda_max() const { return rank_ ? singular_values_(0) * singular_values_(0) : Scalar(0); }
  Scalar lambda_min_nonzero() const {
    return rank_ ? singular_values_(rank_ - 1) * singular_values_(rank_ - 1) : Scalar(0);
  }

  Matrix sigma() const { return x_.transpose() * x_; }

  template <typename Derived>
  Vector apply_pinv(const Eigen::MatrixBase<Derived>& v) const {
    Vector coeffs = row_basis_.transpose() * v;
    coeffs.array() /= singular_values_.array().square();
    return row_basis_ * coeffs;
  }

  template <typename Derived>
  Vector project_row(const Eigen::MatrixBase<Derived>& v) const {
    return row_basis_ * (row_basis_.transpose() * v);
  }

  template <typename Derived>
  Vector project_null(const Eigen::MatrixBase<Derived>& v) const {
    return v - project_row(v);
  }

  Matrix pinv() const {
    return row_basis_ * singular_values_.array().square().inverse().matrix().asDiagonal() *
           row_basis_.transpose();
  }

  Matrix null_projector() const {
    return Matrix::Identity(cols(), cols()) - row_basis_ * row_basis_.transpose();
  }

  /// Y = X theta_star + sigma_eps * eps with eps ~ N(0, I).
  Vector sample_labels(Stream& rng) const {
    Vector eps(rows());
    for (Eigen::Index i = 0; i < rows(); ++i) eps(i) = Scalar(rng.normal());
    return x_ * theta_star_ + sigma_eps_ * eps;
  }

 private:
  Matrix x_;
  Vector theta_star_;
  Scalar sigma_eps_;
  Eigen::Index rank_ = 0;
  Vector singular_values_;
  Matrix row_basis_;
};

enum class LinearRegime { UnderParam, OverParamGD };

template <typename Scalar>
struct LinearSolution {
  VectorX<Scalar> theta_hat;
  LinearRegime regime = LinearRegime::UnderParam;
  std::optional<VectorX<Scalar>> theta_0;
  std::size_t iterations = 0;
};

template <typename Scalar>
struct OverParamVariance {
  Scalar init_term = 0;      // ||P_perp x||^2 / N
  Scalar sampling_term = 0;  // sigma^2 x^T Sigma^+ x
  Scalar total() const { return init_term + sampling_term; }
};

template <typename Scalar>
struct ScalingRow {
  Eigen::Index dims = 0;
  Scalar null_norm_sq = 0;
  Scalar init_term = 0;
};

enum class ProbePadding {
  UnitInPadded,  // probe gets a 1 in the first padded coordinate
  Zero,          // probe keeps only its base coordinates
};

namespace detail {
template <typename Scalar, typename Derived>
void check_dim(const LinearFixedDesign<Scalar>& d, const Eigen::MatrixBase<Derived>& v) {
  if (v.size() != d.cols()) throw ConfigError("vector length does not match design columns");
}
}  // namespace detail

/// theta = Sigma^-1 X^T Y; needs full column rank.
template <typename Scalar, typename Derived>
LinearSolution<Scalar> solve_closed_form(const LinearFixedDesign<Scalar>& d, const Eigen::MatrixBase<Derived>& y) {
  if (!d.full_column_rank()) {
    throw RegimeError("design is rank-deficient (rank " + std::to_string(d.rank()) + " < " +
                      std::to_string(d.cols()) + "); use solve_gd for the over-parameterized regime");
  }
  if (y.size() != d.rows()) throw ConfigError("label count does not match design rows");
  LinearSolution<Scalar> out;
  out.theta_hat = d.apply_pinv(d.x().transpose() * y);
  out.regime = LinearRegime::UnderParam;
  return out;
}

/// Largest eigenvalue of X^T X by power iteration.
template <typename Scalar>
Scalar power_iteration_lambda_max(const LinearFixedDesign<Scalar>& d, int max_iters = 500,
                                  Scalar rel_tol = Scalar(1e-12)) {
  using Vector = VectorX<Scalar>;
  Vector v = Vector::Ones(d.cols());
  // Nudge off any symmetric subspace the all-ones vector might be orthogonal to.
  for (Eigen::Index j = 0; j < v.size(); ++j) v(j) += Scalar(j + 1) / Scalar(v.size() * 7 + 3);
  v.normalize();
  Scalar lambda = 0;
  for (int it = 0; it < max_iters; ++it) {
    Vector w = d.x().transpose() * (d.x() * v);
    const Scalar next = v.dot(w);
    const Scalar norm = w.norm();
    if (norm == Scalar(0)) return Scalar(0);
    v = w / norm;
    if (it > 0 && std::abs(next - lambda) <= rel_tol * std::abs(next)) return next;
    lambda = next;
  }
  return lambda;
}

/// Default linear step: 1 / (2 lambda_max), lambda_max from power iteration.
template <typename Scalar>
Scalar default_gd_step(const LinearFixedDesign<Scalar>& d) {
  const Scalar lambda = power_iteration_lambda_max(d);
  if (lambda <= Scalar(0)) return Scalar(1);
  return Scalar(1) / (Scalar(2) * lambda);
}

/// Full-batch gradient descent on 0.5 ||X theta - Y||^2 from theta_0.
///
/// Iterates stay in theta_0 + rowspace(X), where Sigma has eigenvalues of at
/// least lambda_min_nonzero, so ||theta - limit|| <= ||grad|| / lambda_min_nonzero.
/// That bound is the stopping rule; `tol` is a distance to the limit.
template <typename Scalar, typename DerivedY, typename DerivedT>
LinearSolution<Scalar> solve_gd(const LinearFixedDesign<Scalar>& d, const Eigen::MatrixBase<DerivedY>& y,
                                const Eigen::MatrixBase<DerivedT>& theta_0, Scalar step,
                                std::size_t max_iters = 1000000, Scalar tol = Scalar(1e-8)) {
  using Vector = VectorX<Scalar>;
  if (y.size() != d.rows()) throw ConfigError("label count does not match design rows");
  detail::check_dim(d, theta_0);
  if (!(step > Scalar(0))) throw ConfigError("gradient step must be positive");
  if (d.rank() > 0 && !(step < Scalar(2) / d.lambda_max())) {
    throw ConfigError("gradient step must be below 2 / lambda_max for convergence");
  }
  const Scalar curvature = d.rank() > 0 ? d.lambda_min_nonzero() : Scalar(1);

  LinearSolution<Scalar> out;
  out.regime = LinearRegime::OverParamGD;
  out.theta_0 = Vector(theta_0);
  Vector theta = theta_0;
  const Vector xty = d.x().transpose() * y;
  Vector grad = d.x().transpose() * (d.x() * theta) - xty;
  std::size_t it = 0;
  while (grad.norm() / curvature > tol) {
    if (it == max_iters) {
      throw ConvergenceError("gradient descent did not converge within max_iters",
                             static_cast<double>(grad.norm()));
    }
    theta -= step * grad;
    grad = d.x().transpose() * (d.x() * theta) - xty;
    ++it;
  }
  out.theta_hat = std::move(theta);
  out.iterations = it;
  return out;
}

template <typename Scalar, typename DerivedY, typename DerivedT>
LinearSolution<Scalar> solve_gd(const LinearFixedDesign<Scalar>& d, const Eigen::MatrixBase<DerivedY>& y,
                                const Eigen::MatrixBase<DerivedT>& theta_0) {
  return solve_gd(d, y, theta_0, default_gd_step(d));
}

/// Closed-form limit of solve_gd: P_perp(theta_0) + Sigma^+ X^T Y.
template <typename Scalar, typename DerivedY, typename DerivedT>
VectorX<Scalar> gd_limit(const LinearFixedDesign<Scalar>& d, const Eigen::MatrixBase<DerivedY>& y,
                         const Eigen::MatrixBase<DerivedT>& theta_0) {
  return d.project_null(theta_0) + d.apply_pinv(d.x().transpose() * y);
}

/// theta_0 ~ N(0, I / N).
template <typename Scalar>
VectorX<Scalar> sample_theta0(Eigen::Index n, Stream& rng) {
  VectorX<Scalar> t(n);
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(n));
  for (Eigen::Index j = 0; j < n; ++j) t(j) = scale * Scalar(rng.normal());
  return t;
}

/// Prediction variance over label noise, sigma^2 x^T Sigma^-1 x.
template <typename Scalar, typename Derived>
Scalar variance_under(const LinearFixedDesign<Scalar>& d, const Eigen::MatrixBase<Derived>& x) {
  if (!d.full_column_rank()) throw RegimeError("variance_under needs a full-column-rank design");
  detail::check_dim(d, x);
  return d.sigma_eps() * d.sigma_eps() * x.dot(d.apply_pinv(x));
}

template <typename Scalar, typename Derived>
OverParamVariance<Scalar> variance_over(const LinearFixedDesign<Scalar>& d, const Eigen::MatrixBase<Derived>& x) {
  detail::check_dim(d, x);
  OverParamVariance<Scalar> out;
  out.init_term = d.project_null(x).squaredNorm() / Scalar(d.cols());
  out.sampling_term = d.sigma_eps() * d.sigma_eps() * x.dot(d.apply_pinv(x));
  return out;
}

/// Pointwise variance averaged over the training rows. The init term vanishes
/// on training rows (they lie in the row space), so only the noise term is summed.
template <typename Scalar>
Scalar expected_empirical_variance(const LinearFixedDesign<Scalar>& d) {
  Scalar acc = 0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const VectorX<Scalar> xi = d.x().row(i).transpose();
    acc += d.full_column_rank() ? variance_under(d, xi) : variance_over(d, xi).sampling_term;
  }
  return acc / Scalar(d.rows());
}

/// Appends `pad` zero columns to the design; the row space is unchanged.
template <typename Scalar>
LinearFixedDesign<Scalar> pad_design(const LinearFixedDesign<Scalar>& base, Eigen::Index pad) {
  const Eigen::Index n = base.cols() + pad;
  MatrixX<Scalar> x = MatrixX<Scalar>::Zero(base.rows(), n);
  x.leftCols(base.cols()) = base.x();
  VectorX<Scalar> theta = VectorX<Scalar>::Zero(n);
  theta.head(base.cols()) = base.theta_star();
  return LinearFixedDesign<Scalar>(std::move(x), std::move(theta), base.sigma_eps());
}

template <typename Scalar, typename Derived>
VectorX<Scalar> pad_probe(const Eigen::MatrixBase<Derived>& x, Eigen::Index pad, ProbePadding mode) {
  VectorX<Scalar> out = VectorX<Scalar>::Zero(x.size() + pad);
  out.head(x.size()) = x;
  if (mode == ProbePadding::UnitInPadded && pad > 0) out(x.size()) = Scalar(1);
  return out;
}

/// Init-variance term across a zero-padded family of designs. With the
/// null-space norm of the probe held fixed, init_term * N is constant.
template <typename Scalar, typename Derived>
std::vector<ScalingRow<Scalar>> init_variance_scaling_probe(const LinearFixedDesign<Scalar>& base,
                                                            const Eigen::MatrixBase<Derived>& probe,
                                                            std::span<const Eigen::Index> pad_dims,
                                                            ProbePadding mode = ProbePadding::UnitInPadded) {
  detail::check_dim(base, probe);
  std::vector<ScalingRow<Scalar>> table;
  for (Eigen::Index pad : pad_dims) {
    if (pad < 0) throw ConfigError("padding counts must be non-negative");
    if (mode == ProbePadding::UnitInPadded && pad == 0) {
      throw ConfigError("unit-in-padded probes need at least one padded dimension");
    }
    const auto design = pad_design(base, pad);
    const VectorX<Scalar> x = pad_probe<Scalar>(probe, pad, mode);
    const Scalar null_sq = design.project_null(x).squaredNorm();
    const Scalar scale = std::max<Scalar>(Scalar(1), x.squaredNorm());
    if (null_sq <= Scalar(1e-20) * scale) {
      throw DegenerateError("probe lies in the row space of X; the init term is identically zero");
    }
    table.push_back({design.cols(), null_sq, variance_over(design, x).init_term});
  }
  return table;
}

}  // namespace bvx

#endif  // BVX_LINEAR_LAB_HPP
