#ifndef BVX_DATA_FORGE_HPP
#define BVX_DATA_FORGE_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace bvx {

enum class TaskKind { SinusoidRegression, LinearTeacher, GaussianClusters, IdxClassification };

/// y = amplitude * sin(2*pi*frequency*x) + noise, x ~ U[0, 1].
struct SinusoidParams {
  double amplitude = 1.0;
  double frequency = 1.0;
  double noise_sigma = 0.1;
};

/// y = theta_star^T x + noise, x ~ N(0, I).
struct LinearTeacherParams {
  Eigen::VectorXd theta_star;
  double noise_sigma = 0.0;
};

/// Equal-prior isotropic Gaussian classes; `means` holds one class mean per row.
struct ClusterParams {
  Eigen::MatrixXd means;
  double stddev = 1.0;
};

struct IdxParams {
  std::filesystem::path images_path;
  std::filesystem::path labels_path;
  std::size_t subset = 100;
};

class TaskSpec {
 public:
  using Params = std::variant<SinusoidParams, LinearTeacherParams, ClusterParams, IdxParams>;

  TaskSpec() = default;
  explicit TaskSpec(Params params) : params_(std::move(params)) {}

  static TaskSpec sinusoid(double amplitude = 1.0, double frequency = 1.0, double noise_sigma = 0.1);
  static TaskSpec linear_teacher(Eigen::VectorXd theta_star, double noise_sigma);
  static TaskSpec gaussian_clusters(Eigen::MatrixXd means, double stddev);
  static TaskSpec idx(std::filesystem::path images, std::filesystem::path labels, std::size_t subset);

  TaskKind kind() const;
  const Params& params() const { return params_; }

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  bool is_classification() const;
  bool has_true_mean() const { return kind() != TaskKind::IdxClassification; }
  std::string name() const;

  /// Throws ConfigError on negative noise, fewer than two (distinct) means, etc.
  void validate() const;

 private:
  Params params_ = SinusoidParams{};
};

struct Dataset {
  Eigen::MatrixXd inputs;   // m x d
  Eigen::MatrixXd targets;  // m x K (one-hot for classification)
  TaskSpec task;
  bool true_mean_available = false;

  std::size_t rows() const { return static_cast<std::size_t>(inputs.rows()); }
  Dataset select(std::span<const std::size_t> indices) const;
};

struct ReplicateSet {
  std::size_t base_rows = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> replicates;

  std::size_t size() const { return replicates.size(); }
  Dataset materialize(const Dataset& base, std::size_t r) const;
};

Dataset generate(const TaskSpec& task, std::size_t m, std::uint64_t seed);

/// Conditional mean E[y | x]. Class posteriors for the cluster task.
Eigen::VectorXd true_mean(const TaskSpec& task, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Row-wise true_mean over an input matrix.
Eigen::MatrixXd true_mean_rows(const TaskSpec& task, const Eigen::Ref<const Eigen::MatrixXd>& inputs);

ReplicateSet bootstrap_replicates(const Dataset& base, std::size_t n_replicates, std::uint64_t seed);

// IDX container ------------------------------------------------------------

struct IdxArray {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

/// Reads an unsigned-byte IDX array. Throws FormatError on bad magic or truncation.
IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// Images scaled to [0, 1], labels one-hot over 10 classes, `subset` rows
/// sampled without replacement.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t subset, std::uint64_t seed);

/// Header x0..x{d-1},y0..y{K-1}, then one sample per row.
void write_csv(std::ostream& out, const Dataset& data);

bool is_one_hot(const Eigen::Ref<const Eigen::MatrixXd>& targets);

}  // namespace bvx

#endif  // BVX_DATA_FORGE_HPP
