#ifndef BVX_COMMANDS_HPP
#define BVX_COMMANDS_HPP

#include "bvx/config.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace bvx {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfigError = 2,
  kExitValidationFailure = 3,
  kExitDivergence = 4,
};

struct RunOptions {
  unsigned jobs = 0;  // 0: BVX_JOBS, then hardware concurrency
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

/// Applies --seed / --out overrides.
ExperimentConfig apply_overrides(ExperimentConfig cfg, const RunOptions& opts);

// sweep ---------------------------------------------------------------------

/// One line of sweep.csv.
struct SweepRow {
  std::string task;
  Eigen::Index width = 0;
  std::size_t n_s = 0;
  std::size_t n_o = 0;
  MeanMode mode = MeanMode::LabelAsMean;
  double e_bias = 0, e_bias_lo = 0, e_bias_hi = 0;
  double e_variance = 0, e_variance_lo = 0, e_variance_hi = 0;
  double e_noise = 0;
  double var_sampling = 0, var_optimization = 0;
  double r_classif = 0, r_reg = 0;
  std::string config_digest;
  std::string code_version;
};

inline constexpr const char* kSweepHeader =
    "task,width,n_S,n_O,mode,e_bias,e_bias_lo,e_bias_hi,e_variance,e_variance_lo,e_variance_hi,e_noise,"
    "var_sampling,var_optimization,r_classif,r_reg,config_digest,code_version";

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);
/// Throws ParseError with the offending line number.
std::vector<SweepRow> read_sweep_csv(std::istream& in);

struct WidthFailure {
  Eigen::Index width = 0;
  std::string message;
};

struct SweepOutcome {
  std::vector<SweepRow> rows;
  std::vector<WidthFailure> failures;
  std::map<Eigen::Index, double> steps;  // step size used per width
  /// Full tensors on the test set, kept for callers that audit estimator identities.
  std::vector<PredictionTensor> tensors;
  int exit_code = kExitOk;
};

/// Writes sweep.csv, functions_w{width}.csv when requested, and failures.csv
/// when some width could not be completed.
SweepOutcome run_sweep(const ExperimentConfig& cfg, unsigned jobs, std::ostream& log);

/// Train and test sets for a config (synthetic draws or an IDX split).
std::pair<Dataset, Dataset> sweep_datasets(const ExperimentConfig& cfg);

// linear-oracle ---------------------------------------------------------------

struct OracleRow {
  Eigen::Index n = 0;
  std::size_t m = 0;
  Eigen::Index rank = 0;
  double sigma_eps = 0;
  std::size_t point_id = 0;
  double init_term = 0, sampling_term = 0;
  double mc_estimate = 0, mc_stderr = 0;
};

struct OracleCheck {
  std::string name;
  Eigen::Index n = 0;
  std::size_t m = 0;
  double observed = 0, expected = 0;
  double tolerance = 0;  // absolute bound on |observed - expected|
  bool pass = false;
};

struct LinearOracleResult {
  std::vector<OracleRow> rows;
  std::vector<OracleCheck> checks;
  bool all_pass() const;
};

inline constexpr const char* kOracleHeader =
    "N,m,r,sigma_eps,point_id,init_term,sampling_term,mc_estimate,mc_stderr";
inline constexpr const char* kOracleChecksHeader = "check,N,m,observed,expected,abs_error,rel_error,tolerance,pass";

LinearOracleResult run_linear_oracle(const LinearOracleConfig& cfg, std::uint64_t seed, unsigned jobs);
void write_oracle_csv(std::ostream& out, const std::vector<OracleRow>& rows);
void write_oracle_checks_csv(std::ostream& out, const std::vector<OracleCheck>& checks);

// report ----------------------------------------------------------------------

struct TrendVerdict {
  std::string task;
  Eigen::Index smallest_width = 0, largest_width = 0;
  bool variance_decreases = false;
  bool bias_decreases = false;
  bool variance_ci_overlap = false;
  bool bias_ci_overlap = false;
};

struct ReportOutcome {
  std::vector<SweepRow> rows;  // merged, sorted by (task, width)
  std::vector<TrendVerdict> verdicts;
  std::size_t files = 0;
};

/// Merges every sweep*.csv below `dir`.
ReportOutcome build_report(const std::filesystem::path& dir);
void print_report(std::ostream& out, const ReportOutcome& report);

// subcommand entry points: return the process exit code -----------------------

int cmd_sweep(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& out, std::ostream& err);
int cmd_linear_oracle(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& out,
                      std::ostream& err);
int cmd_report(const std::filesystem::path& dir, std::ostream& out, std::ostream& err);
int cmd_gen_data(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& out,
                 std::ostream& err);

}  // namespace bvx

#endif  // BVX_COMMANDS_HPP
