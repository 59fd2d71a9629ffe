#ifndef BVX_CONFIG_HPP
#define BVX_CONFIG_HPP

#include "bvx/data_forge.hpp"
#include "bvx/net_core.hpp"
#include "bvx/varlens.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace bvx {

/// Settings for the fixed-design linear validations.
struct LinearOracleConfig {
  std::size_t m_under = 50;
  std::vector<Eigen::Index> n_under{2, 5, 10};
  std::size_t m_over = 4;
  std::vector<Eigen::Index> n_over{8, 16, 32};
  double sigma_eps = 0.3;
  std::size_t probe_points = 5;
  std::size_t mc_draws_under = 100000;
  std::size_t mc_draws_over = 10000;
  Eigen::Index pad_base_n = 8;
  std::vector<Eigen::Index> pad_dims{0, 8, 24, 56};
  double tolerance_sigmas = 3.0;
  double gd_tolerance = 1e-6;
  double identity_tolerance = 1e-8;
  double scaling_tolerance = 1e-10;
};

struct ExperimentConfig {
  TaskSpec task;
  std::size_t train_size = 80;
  std::size_t test_size = 500;

  std::vector<Eigen::Index> widths;
  std::size_t n_s = 10;
  std::size_t n_o = 10;
  std::uint64_t master_seed = 0;
  MeanMode mode = MeanMode::LabelAsMean;
  double ci_level = 0.99;
  std::size_t ci_resamples = 1000;

  TrainConfig train;
  std::map<Eigen::Index, double> step_overrides;

  std::vector<double> tune_candidates;  // empty: no tuning
  double tune_validation_fraction = 0.2;
  int tune_epochs = 1000;

  std::filesystem::path output_dir = "results";
  bool emit_function_grid = false;
  std::size_t grid_resolution = 200;

  LinearOracleConfig linear;

  /// Throws ConfigError. Checks only what a sweep needs.
  void validate() const;
};

/// Flat INI text with sections; see configs/ for annotated examples.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);
void write_config(std::ostream& out, const ExperimentConfig& cfg);

/// FNV-1a over the serialized config with the output directory blanked,
/// so relocating results does not change the digest.
std::string config_digest(const ExperimentConfig& cfg);

const char* code_version();

}  // namespace bvx

#endif  // BVX_CONFIG_HPP
