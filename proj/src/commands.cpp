#include "bvx/commands.hpp"

#include "bvx/csv.hpp"
#include "bvx/error.hpp"
#include "bvx/parallel.hpp"
#include "bvx/rng.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

namespace bvx {

namespace {

const char* mode_name(MeanMode m) { return m == MeanMode::OracleMean ? "oracle_mean" : "label_as_mean"; }

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

Eigen::MatrixXd function_grid(std::size_t resolution) {
  Eigen::MatrixXd grid(static_cast<Eigen::Index>(resolution), 1);
  for (std::size_t i = 0; i < resolution; ++i) {
    grid(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i) / static_cast<double>(resolution - 1);
  }
  return grid;
}

void write_function_grid(const std::filesystem::path& path, const PredictionTensor& grid_preds,
                         const Eigen::MatrixXd& grid) {
  auto out = open_output(path);
  out << "member_s,member_o,x,prediction\n";
  for (std::size_t s = 0; s < grid_preds.n_s(); ++s)
    for (std::size_t o = 0; o < grid_preds.n_o(); ++o)
      for (std::size_t i = 0; i < grid_preds.points(); ++i)
        out << s << ',' << o << ',' << csv::format_real(grid(static_cast<Eigen::Index>(i), 0)) << ','
            << csv::format_real(grid_preds(s, o, i, 0)) << '\n';
}

/// Maps library exceptions onto the documented exit codes.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const UnsupportedError& e) {
    err << "unsupported: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const TuningError& e) {
    err << "tuning error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const EnsembleError& e) {
    err << e.what() << '\n';
    return kExitDivergence;
  } catch (const DivergenceError& e) {
    err << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

ExperimentConfig apply_overrides(ExperimentConfig cfg, const RunOptions& opts) {
  if (opts.seed) cfg.master_seed = *opts.seed;
  if (opts.out) cfg.output_dir = *opts.out;
  return cfg;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << kSweepHeader << '\n';
  const auto r = [](double v) { return csv::format_real(v); };
  for (const auto& row : rows) {
    out << row.task << ',' << row.width << ',' << row.n_s << ',' << row.n_o << ',' << mode_name(row.mode) << ','
        << r(row.e_bias) << ',' << r(row.e_bias_lo) << ',' << r(row.e_bias_hi) << ',' << r(row.e_variance) << ','
        << r(row.e_variance_lo) << ',' << r(row.e_variance_hi) << ',' << r(row.e_noise) << ','
        << r(row.var_sampling) << ',' << r(row.var_optimization) << ',' << r(row.r_classif) << ','
        << r(row.r_reg) << ',' << row.config_digest << ',' << row.code_version << '\n';
  }
}

std::vector<SweepRow> read_sweep_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("missing header", line_no);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kSweepHeader) throw ParseError("unexpected header", line_no);
  const std::size_t columns = csv::split_line(kSweepHeader).size();
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = csv::split_line(line);
    if (f.size() != columns) {
      throw ParseError("expected " + std::to_string(columns) + " fields, found " + std::to_string(f.size()),
                       line_no);
    }
    SweepRow row;
    row.task = f[0];
    row.width = static_cast<Eigen::Index>(csv::parse_integer(f[1], line_no));
    row.n_s = static_cast<std::size_t>(csv::parse_integer(f[2], line_no));
    row.n_o = static_cast<std::size_t>(csv::parse_integer(f[3], line_no));
    if (f[4] == "oracle_mean") {
      row.mode = MeanMode::OracleMean;
    } else if (f[4] == "label_as_mean") {
      row.mode = MeanMode::LabelAsMean;
    } else {
      throw ParseError("unknown mode '" + f[4] + "'", line_no);
    }
    double* reals[] = {&row.e_bias,         &row.e_bias_lo,    &row.e_bias_hi,        &row.e_variance,
                       &row.e_variance_lo,  &row.e_variance_hi, &row.e_noise,         &row.var_sampling,
                       &row.var_optimization, &row.r_classif,  &row.r_reg};
    for (std::size_t j = 0; j < std::size(reals); ++j) *reals[j] = csv::parse_real(f[5 + j], line_no);
    row.config_digest = f[16];
    row.code_version = f[17];
    rows.push_back(std::move(row));
  }
  return rows;
}

std::pair<Dataset, Dataset> sweep_datasets(const ExperimentConfig& cfg) {
  if (cfg.task.kind() == TaskKind::IdxClassification) {
    const auto& p = std::get<IdxParams>(cfg.task.params());
    const Dataset all =
        load_idx(p.images_path, p.labels_path, cfg.train_size + cfg.test_size, derive_seed(cfg.master_seed, Purpose::Data));
    std::vector<std::size_t> train_idx(cfg.train_size), test_idx(cfg.test_size);
    for (std::size_t i = 0; i < cfg.train_size; ++i) train_idx[i] = i;
    for (std::size_t i = 0; i < cfg.test_size; ++i) test_idx[i] = cfg.train_size + i;
    return {all.select(train_idx), all.select(test_idx)};
  }
  return {generate(cfg.task, cfg.train_size, derive_seed(cfg.master_seed, Purpose::Data, {0})),
          generate(cfg.task, cfg.test_size, derive_seed(cfg.master_seed, Purpose::Data, {1}))};
}

SweepOutcome run_sweep(const ExperimentConfig& cfg, unsigned jobs, std::ostream& log) {
  cfg.validate();
  const auto [train_set, test_set] = sweep_datasets(cfg);
  const Head head = cfg.task.is_classification() ? Head::Softmax : Head::Linear;
  const std::string digest = config_digest(cfg);
  jobs = resolve_jobs(jobs);

  SweepOutcome outcome;
  std::vector<Eigen::Index> to_tune;
  for (auto w : cfg.widths) {
    if (auto it = cfg.step_overrides.find(w); it != cfg.step_overrides.end()) {
      outcome.steps[w] = it->second;
    } else if (!cfg.tune_candidates.empty()) {
      to_tune.push_back(w);
    } else {
      outcome.steps[w] = cfg.train.step_size;
    }
  }
  if (!to_tune.empty()) {
    TrainConfig budget = cfg.train;
    budget.epochs = cfg.tune_epochs;
    const auto tuned = tune_step_size<double>(to_tune, train_set, cfg.tune_candidates, cfg.tune_validation_fraction,
                                              derive_seed(cfg.master_seed, Purpose::Tune), budget, head);
    for (const auto& [w, step] : tuned) {
      outcome.steps[w] = step;
      log << "tuned step for width " << w << ": " << csv::format_real(step) << '\n';
    }
  }

  Eigen::MatrixXd eval_inputs = test_set.inputs;
  Eigen::MatrixXd grid;
  if (cfg.emit_function_grid) {
    grid = function_grid(cfg.grid_resolution);
    eval_inputs.conservativeResize(test_set.inputs.rows() + grid.rows(), Eigen::NoChange);
    eval_inputs.bottomRows(grid.rows()) = grid;
  }

  std::filesystem::create_directories(cfg.output_dir);
  for (auto w : cfg.widths) {
    TrainConfig tc = cfg.train;
    tc.step_size = outcome.steps.at(w);
    log << "width " << w << ": training " << cfg.n_s * cfg.n_o << " members (step " << csv::format_real(tc.step_size)
        << ")\n";
    PredictionTensor all;
    try {
      all = run_ensemble(train_set, eval_inputs, cfg.n_s, cfg.n_o, w, tc, cfg.master_seed, jobs);
    } catch (const EnsembleError& e) {
      log << "width " << w << " failed: " << e.what() << '\n';
      outcome.failures.push_back({w, e.what()});
      continue;
    }
    all.provenance.config_digest = digest;
    PredictionTensor t = all.slice_points(0, test_set.rows());

    const CiOptions ci{cfg.ci_level, cfg.ci_resamples,
                       derive_seed(cfg.master_seed, Purpose::Resample, {static_cast<std::uint64_t>(w)})};
    const auto bv = bias_variance(t, test_set, cfg.mode, ci);
    const auto split = total_variance_split(t);

    SweepRow row;
    row.task = cfg.task.name();
    row.width = w;
    row.n_s = cfg.n_s;
    row.n_o = cfg.n_o;
    row.mode = cfg.mode;
    row.e_bias = bv.e_bias;
    row.e_bias_lo = bv.ci_bias.low;
    row.e_bias_hi = bv.ci_bias.high;
    row.e_variance = bv.e_variance;
    row.e_variance_lo = bv.ci_variance.low;
    row.e_variance_hi = bv.ci_variance.high;
    row.e_noise = bv.e_noise;
    row.var_sampling = split.var_sampling;
    row.var_optimization = split.var_optimization;
    if (head == Head::Softmax) {
      const auto cr = classification_risk_check(t, test_set.targets);
      row.r_classif = cr.r_classif;
      row.r_reg = cr.r_reg;
    } else {
      row.r_classif = std::numeric_limits<double>::quiet_NaN();
      row.r_reg = bv.risk;
    }
    row.config_digest = digest;
    row.code_version = code_version();
    outcome.rows.push_back(row);

    if (cfg.emit_function_grid) {
      const auto grid_preds = all.slice_points(test_set.rows(), static_cast<std::size_t>(grid.rows()));
      write_function_grid(cfg.output_dir / ("functions_w" + std::to_string(w) + ".csv"), grid_preds, grid);
    }
    outcome.tensors.push_back(std::move(t));
  }

  {
    auto out = open_output(cfg.output_dir / "sweep.csv");
    write_sweep_csv(out, outcome.rows);
  }
  if (!outcome.failures.empty()) {
    auto out = open_output(cfg.output_dir / "failures.csv");
    out << "width,error\n";
    for (const auto& f : outcome.failures) out << f.width << ",\"" << f.message << "\"\n";
    outcome.exit_code = kExitDivergence;
  }
  return outcome;
}

int cmd_sweep(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto cfg = apply_overrides(load_config(config_path), opts);
    const auto outcome = run_sweep(cfg, opts.jobs, err);
    out << "wrote " << outcome.rows.size() << " row(s) to " << (cfg.output_dir / "sweep.csv").string() << '\n';
    if (!outcome.failures.empty()) {
      out << outcome.failures.size() << " width(s) failed; see " << (cfg.output_dir / "failures.csv").string()
          << '\n';
    }
    return outcome.exit_code;
  });
}

int cmd_gen_data(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& out,
                 std::ostream& err) {
  return guarded(err, [&] {
    const auto cfg = apply_overrides(load_config(config_path), opts);
    cfg.task.validate();
    const auto [train_set, test_set] = sweep_datasets(cfg);
    std::filesystem::create_directories(cfg.output_dir);
    {
      auto f = open_output(cfg.output_dir / "train.csv");
      write_csv(f, train_set);
    }
    {
      auto f = open_output(cfg.output_dir / "test.csv");
      write_csv(f, test_set);
    }
    out << "wrote " << train_set.rows() << " training and " << test_set.rows() << " test rows to "
        << cfg.output_dir.string() << '\n';
    return static_cast<int>(kExitOk);
  });
}

int cmd_linear_oracle(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& out,
                      std::ostream& err) {
  return guarded(err, [&] {
    const auto cfg = apply_overrides(load_config(config_path), opts);
    const auto result = run_linear_oracle(cfg.linear, cfg.master_seed, opts.jobs);
    std::filesystem::create_directories(cfg.output_dir);
    {
      auto f = open_output(cfg.output_dir / "linear_oracle.csv");
      write_oracle_csv(f, result.rows);
    }
    {
      auto f = open_output(cfg.output_dir / "linear_oracle_checks.csv");
      write_oracle_checks_csv(f, result.checks);
    }
    std::size_t failed = 0;
    for (const auto& c : result.checks) {
      if (!c.pass) {
        ++failed;
        err << "FAIL " << c.name << " N=" << c.n << " m=" << c.m << " observed=" << csv::format_real(c.observed)
            << " expected=" << csv::format_real(c.expected) << " tolerance=" << csv::format_real(c.tolerance)
            << '\n';
      }
    }
    out << result.checks.size() - failed << "/" << result.checks.size() << " linear oracle checks passed\n";
    return failed ? static_cast<int>(kExitValidationFailure) : static_cast<int>(kExitOk);
  });
}

int cmd_report(const std::filesystem::path& dir, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto report = build_report(dir);
    print_report(out, report);
    return static_cast<int>(kExitOk);
  });
}

}  // namespace bvx
