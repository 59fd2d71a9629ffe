#include "bvx/data_forge.hpp"

#include "bvx/csv.hpp"
#include "bvx/error.hpp"
#include "bvx/rng.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>

namespace bvx {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;
constexpr std::size_t kIdxClasses = 10;

double sinusoid_mean(const SinusoidParams& p, double x) {
  return p.amplitude * std::sin(2.0 * std::numbers::pi * p.frequency * x);
}

Eigen::VectorXd cluster_posterior(const ClusterParams& p, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::Index k = p.means.rows();
  Eigen::VectorXd logits(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    logits(c) = -(x.transpose() - p.means.row(c)).squaredNorm() / (2.0 * p.stddev * p.stddev);
  }
  const double top = logits.maxCoeff();
  Eigen::VectorXd w = (logits.array() - top).exp();
  return w / w.sum();
}

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw FormatError("truncated IDX header in " + path.string());
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

}  // namespace

TaskSpec TaskSpec::sinusoid(double amplitude, double frequency, double noise_sigma) {
  return TaskSpec(SinusoidParams{amplitude, frequency, noise_sigma});
}

TaskSpec TaskSpec::linear_teacher(Eigen::VectorXd theta_star, double noise_sigma) {
  return TaskSpec(LinearTeacherParams{std::move(theta_star), noise_sigma});
}

TaskSpec TaskSpec::gaussian_clusters(Eigen::MatrixXd means, double stddev) {
  return TaskSpec(ClusterParams{std::move(means), stddev});
}

TaskSpec TaskSpec::idx(std::filesystem::path images, std::filesystem::path labels, std::size_t subset) {
  return TaskSpec(IdxParams{std::move(images), std::move(labels), subset});
}

TaskKind TaskSpec::kind() const {
  return std::visit(overloaded{
                        [](const SinusoidParams&) { return TaskKind::SinusoidRegression; },
                        [](const LinearTeacherParams&) { return TaskKind::LinearTeacher; },
                        [](const ClusterParams&) { return TaskKind::GaussianClusters; },
                        [](const IdxParams&) { return TaskKind::IdxClassification; },
                    },
                    params_);
}

std::size_t TaskSpec::input_dim() const {
  return std::visit(overloaded{
                        [](const SinusoidParams&) -> std::size_t { return 1; },
                        [](const LinearTeacherParams& p) -> std::size_t { return p.theta_star.size(); },
                        [](const ClusterParams& p) -> std::size_t { return p.means.cols(); },
                        // known only once the image file is read
                        [](const IdxParams&) -> std::size_t { return 0; },
                    },
                    params_);
}

std::size_t TaskSpec::output_dim() const {
  return std::visit(overloaded{
                        [](const SinusoidParams&) -> std::size_t { return 1; },
                        [](const LinearTeacherParams&) -> std::size_t { return 1; },
                        [](const ClusterParams& p) -> std::size_t { return p.means.rows(); },
                        [](const IdxParams&) -> std::size_t { return kIdxClasses; },
                    },
                    params_);
}

bool TaskSpec::is_classification() const {
  const TaskKind k = kind();
  return k == TaskKind::GaussianClusters || k == TaskKind::IdxClassification;
}

std::string TaskSpec::name() const {
  switch (kind()) {
    case TaskKind::SinusoidRegression: return "sinusoid";
    case TaskKind::LinearTeacher: return "linear_teacher";
    case TaskKind::GaussianClusters: return "gaussian_clusters";
    case TaskKind::IdxClassification: return "idx";
  }
  return "unknown";
}

void TaskSpec::validate() const {
  std::visit(overloaded{
                 [](const SinusoidParams& p) {
                   if (!(p.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
                   if (!std::isfinite(p.amplitude) || !std::isfinite(p.frequency)) {
                     throw ConfigError("sinusoid amplitude and frequency must be finite");
                   }
                 },
                 [](const LinearTeacherParams& p) {
                   if (!(p.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
                   if (p.theta_star.size() == 0) throw ConfigError("theta_star must be non-empty");
                 },
                 [](const ClusterParams& p) {
                   if (p.means.rows() < 2) throw ConfigError("gaussian clusters need K >= 2 means");
                   if (p.means.cols() < 1) throw ConfigError("cluster means need dimension >= 1");
                   if (!(p.stddev > 0.0)) throw ConfigError("cluster stddev must be > 0");
                   for (Eigen::Index a = 0; a < p.means.rows(); ++a) {
                     for (Eigen::Index b = a + 1; b < p.means.rows(); ++b) {
                       if (p.means.row(a) == p.means.row(b)) {
                         throw ConfigError("cluster means must be distinct");
                       }
                     }
                   }
                 },
                 [](const IdxParams& p) {
                   if (p.subset == 0) throw ConfigError("idx subset must be >= 1");
                 },
             },
             params_);
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  Dataset out;
  out.task = task;
  out.true_mean_available = true_mean_available;
  out.inputs.resize(static_cast<Eigen::Index>(indices.size()), inputs.cols());
  out.targets.resize(static_cast<Eigen::Index>(indices.size()), targets.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = static_cast<Eigen::Index>(indices[r]);
    out.inputs.row(static_cast<Eigen::Index>(r)) = inputs.row(src);
    out.targets.row(static_cast<Eigen::Index>(r)) = targets.row(src);
  }
  return out;
}

Dataset ReplicateSet::materialize(const Dataset& base, std::size_t r) const {
  if (base.rows() != base_rows) throw ConfigError("replicate set does not belong to this dataset");
  return base.select(replicates.at(r));
}

Dataset generate(const TaskSpec& task, std::size_t m, std::uint64_t seed) {
  task.validate();
  if (m == 0) throw ConfigError("dataset size must be >= 1");
  if (task.kind() == TaskKind::IdxClassification) {
    throw UnsupportedError("IDX datasets are loaded with load_idx, not generated");
  }
  Stream rng(derive_seed(seed, Purpose::Data));
  const auto rows = static_cast<Eigen::Index>(m);
  const auto d = static_cast<Eigen::Index>(task.input_dim());
  const auto k = static_cast<Eigen::Index>(task.output_dim());

  Dataset out;
  out.task = task;
  out.true_mean_available = true;
  out.inputs.resize(rows, d);
  out.targets.setZero(rows, k);

  std::visit(overloaded{
                 [&](const SinusoidParams& p) {
                   for (Eigen::Index i = 0; i < rows; ++i) {
                     const double x = rng.uniform();
                     out.inputs(i, 0) = x;
                     out.targets(i, 0) = sinusoid_mean(p, x) + p.noise_sigma * rng.normal();
                   }
                 },
                 [&](const LinearTeacherParams& p) {
                   for (Eigen::Index i = 0; i < rows; ++i) {
                     for (Eigen::Index j = 0; j < d; ++j) out.inputs(i, j) = rng.normal();
                     out.targets(i, 0) = out.inputs.row(i).dot(p.theta_star) + p.noise_sigma * rng.normal();
                   }
                 },
                 [&](const ClusterParams& p) {
                   for (Eigen::Index i = 0; i < rows; ++i) {
                     const auto c = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(k)));
                     for (Eigen::Index j = 0; j < d; ++j) {
                       out.inputs(i, j) = p.means(c, j) + p.stddev * rng.normal();
                     }
                     out.targets(i, c) = 1.0;
                   }
                 },
                 [](const IdxParams&) {},
             },
             task.params());
  return out;
}

Eigen::VectorXd true_mean(const TaskSpec& task, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != static_cast<Eigen::Index>(task.input_dim()) && task.has_true_mean()) {
    throw ConfigError("input dimension does not match task");
  }
  return std::visit(overloaded{
                        [&](const SinusoidParams& p) -> Eigen::VectorXd {
                          return Eigen::VectorXd::Constant(1, sinusoid_mean(p, x(0)));
                        },
                        [&](const LinearTeacherParams& p) -> Eigen::VectorXd {
                          return Eigen::VectorXd::Constant(1, p.theta_star.dot(x));
                        },
                        [&](const ClusterParams& p) -> Eigen::VectorXd { return cluster_posterior(p, x); },
                        [](const IdxParams&) -> Eigen::VectorXd {
                          throw UnsupportedError("true conditional mean is unknown for real IDX data");
                        },
                    },
                    task.params());
}

Eigen::MatrixXd true_mean_rows(const TaskSpec& task, const Eigen::Ref<const Eigen::MatrixXd>& inputs) {
  Eigen::MatrixXd out(inputs.rows(), static_cast<Eigen::Index>(task.output_dim()));
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    out.row(i) = true_mean(task, inputs.row(i).transpose()).transpose();
  }
  return out;
}

ReplicateSet bootstrap_replicates(const Dataset& base, std::size_t n_replicates, std::uint64_t seed) {
  if (base.rows() == 0) throw ConfigError("cannot bootstrap an empty dataset");
  if (n_replicates == 0) throw ConfigError("need at least one bootstrap replicate");
  ReplicateSet set;
  set.base_rows = base.rows();
  set.seed = seed;
  set.replicates.resize(n_replicates);
  for (std::size_t r = 0; r < n_replicates; ++r) {
    Stream rng(derive_seed(seed, Purpose::Bootstrap, {r}));
    auto& idx = set.replicates[r];
    idx.resize(base.rows());
    for (auto& v : idx) v = rng.index(base.rows());
  }
  return set;
}

IdxArray read_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open IDX file " + path.string());
  IdxArray arr;
  arr.magic = read_be32(in, path);
  // 0x00 0x00, type code 0x08 (unsigned byte), rank
  if ((arr.magic & 0xFFFFFF00u) != 0x00000800u || (arr.magic & 0xFFu) == 0) {
    throw FormatError("bad IDX magic number in " + path.string());
  }
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < (arr.magic & 0xFFu); ++i) {
    arr.dims.push_back(read_be32(in, path));
    count *= arr.dims.back();
  }
  arr.data.resize(count);
  if (count > 0 && !in.read(reinterpret_cast<char*>(arr.data.data()), static_cast<std::streamsize>(count))) {
    throw FormatError("truncated IDX payload in " + path.string());
  }
  return arr;
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write IDX file " + path.string());
  write_be32(out, array.magic);
  for (auto d : array.dims) write_be32(out, d);
  out.write(reinterpret_cast<const char*>(array.data.data()), static_cast<std::streamsize>(array.data.size()));
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t subset, std::uint64_t seed) {
  const IdxArray images = read_idx(images_path);
  const IdxArray labels = read_idx(labels_path);
  if (images.magic != kImagesMagic) throw FormatError("image file is not a 3-dimensional IDX array");
  if (labels.magic != kLabelsMagic) throw FormatError("label file is not a 1-dimensional IDX array");
  const std::size_t n = images.dims[0];
  if (labels.dims[0] != n) throw FormatError("image and label counts differ");
  if (subset == 0 || subset > n) throw ConfigError("idx subset must be in [1, number of images]");

  const std::size_t d = std::size_t{images.dims[1]} * images.dims[2];
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  // partial Fisher-Yates: the first `subset` slots are a uniform draw without replacement
  Stream rng(derive_seed(seed, Purpose::Split));
  for (std::size_t i = 0; i < subset; ++i) {
    std::swap(order[i], order[i + rng.index(n - i)]);
  }

  Dataset out;
  out.task = TaskSpec::idx(images_path, labels_path, subset);
  out.true_mean_available = false;
  out.inputs.resize(static_cast<Eigen::Index>(subset), static_cast<Eigen::Index>(d));
  out.targets.setZero(static_cast<Eigen::Index>(subset), kIdxClasses);
  for (std::size_t r = 0; r < subset; ++r) {
    const std::size_t src = order[r];
    const std::uint8_t label = labels.data[src];
    if (label >= kIdxClasses) throw FormatError("label value out of range 0..9");
    const auto row = static_cast<Eigen::Index>(r);
    for (std::size_t j = 0; j < d; ++j) {
      out.inputs(row, static_cast<Eigen::Index>(j)) = images.data[src * d + j] / 255.0;
    }
    out.targets(row, label) = 1.0;
  }
  return out;
}

void write_csv(std::ostream& out, const Dataset& data) {
  for (Eigen::Index j = 0; j < data.inputs.cols(); ++j) out << 'x' << j << ',';
  for (Eigen::Index k = 0; k < data.targets.cols(); ++k) out << (k ? ",y" : "y") << k;
  out << '\n';
  for (Eigen::Index i = 0; i < data.inputs.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.inputs.cols(); ++j) out << csv::format_real(data.inputs(i, j)) << ',';
    for (Eigen::Index k = 0; k < data.targets.cols(); ++k) {
      out << (k ? "," : "") << csv::format_real(data.targets(i, k));
    }
    out << '\n';
  }
}

bool is_one_hot(const Eigen::Ref<const Eigen::MatrixXd>& targets) {
  for (Eigen::Index i = 0; i < targets.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index k = 0; k < targets.cols(); ++k) {
      const double v = targets(i, k);
      if (v != 0.0 && v != 1.0) return false;
      sum += v;
    }
    if (sum != 1.0) return false;
  }
  return true;
}

}  // namespace bvx
