#include "bvx/config.hpp"

#include "bvx/csv.hpp"
#include "bvx/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#ifndef BVX_VERSION
#define BVX_VERSION "dev"
#endif

namespace bvx {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>> kKnownKeys = {
    {"task", {"kind", "amplitude", "frequency", "noise_sigma", "theta_star", "means", "stddev", "images", "labels"}},
    {"data", {"train_size", "test_size"}},
    {"sweep", {"widths", "n_s", "n_o", "master_seed", "mode", "ci_level", "ci_resamples"}},
    {"train",
     {"optimizer", "step_size", "momentum", "epochs", "batch_size", "early_stop_fraction", "patience",
      "step_overrides"}},
    {"tune", {"candidates", "validation_fraction", "epochs"}},
    {"output", {"dir", "emit_function_grid", "grid_resolution"}},
    {"linear",
     {"m_under", "n_under", "m_over", "n_over", "sigma_eps", "probe_points", "mc_draws_under", "mc_draws_over",
      "pad_base_n", "pad_dims", "tolerance_sigmas", "gd_tolerance", "identity_tolerance", "scaling_tolerance"}},
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
  }
  return out;
}

double to_real(const std::string& s, const std::string& key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "': not a number: '" + s + "'");
  }
}

long long to_integer(const std::string& s, const std::string& key) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "': not an integer: '" + s + "'");
  }
}

std::vector<double> to_reals(const std::string& s, const std::string& key) {
  std::vector<double> out;
  for (const auto& part : split(s, ',')) out.push_back(to_real(part, key));
  return out;
}

std::vector<Eigen::Index> to_indices(const std::string& s, const std::string& key) {
  std::vector<Eigen::Index> out;
  for (const auto& part : split(s, ',')) out.push_back(static_cast<Eigen::Index>(to_integer(part, key)));
  return out;
}

std::string join_reals(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + csv::format_real(v[i]);
  return out;
}

std::string join_indices(const std::vector<Eigen::Index>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::uint64_t parse_seed(const std::string& s) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size() || s.front() == '-') throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("'sweep.master_seed': not an unsigned 64-bit integer: '" + s + "'");
  }
}

bool to_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("'" + key + "': expected true/false, got '" + s + "'");
}

/// Typed view over one INI section.
class Section {
 public:
  Section(const pt::ptree& tree, std::string name) : name_(std::move(name)) {
    if (auto child = tree.get_child_optional(name_)) node_ = &*child;
  }

  std::optional<std::string> raw(const std::string& key) const {
    if (!node_) return std::nullopt;
    if (auto v = node_->get_optional<std::string>(key)) return *v;
    return std::nullopt;
  }
  std::string key(const std::string& k) const { return name_ + "." + k; }

  double real(const std::string& k, double fallback) const {
    auto v = raw(k);
    return v ? to_real(*v, key(k)) : fallback;
  }
  long long integer(const std::string& k, long long fallback) const {
    auto v = raw(k);
    return v ? to_integer(*v, key(k)) : fallback;
  }
  std::size_t count(const std::string& k, std::size_t fallback) const {
    const long long v = integer(k, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError("'" + key(k) + "' must be non-negative");
    return static_cast<std::size_t>(v);
  }
  std::string text(const std::string& k, const std::string& fallback) const { return raw(k).value_or(fallback); }

 private:
  std::string name_;
  const pt::ptree* node_ = nullptr;
};

TaskSpec parse_task(const Section& s) {
  const std::string kind = s.text("kind", "sinusoid");
  if (kind == "sinusoid") {
    return TaskSpec::sinusoid(s.real("amplitude", 1.0), s.real("frequency", 1.0), s.real("noise_sigma", 0.1));
  }
  if (kind == "linear_teacher") {
    const auto theta = to_reals(s.text("theta_star", ""), s.key("theta_star"));
    return TaskSpec::linear_teacher(Eigen::Map<const Eigen::VectorXd>(theta.data(), Eigen::Index(theta.size())),
                                    s.real("noise_sigma", 0.0));
  }
  if (kind == "gaussian_clusters") {
    const auto rows = split(s.text("means", ""), ';');
    std::vector<std::vector<double>> means;
    for (const auto& r : rows) means.push_back(to_reals(r, s.key("means")));
    if (means.empty()) throw ConfigError("task.means is required for gaussian_clusters");
    Eigen::MatrixXd m(Eigen::Index(means.size()), Eigen::Index(means.front().size()));
    for (std::size_t i = 0; i < means.size(); ++i) {
      if (means[i].size() != means.front().size()) throw ConfigError("task.means rows differ in length");
      for (std::size_t j = 0; j < means[i].size(); ++j) m(Eigen::Index(i), Eigen::Index(j)) = means[i][j];
    }
    return TaskSpec::gaussian_clusters(std::move(m), s.real("stddev", 1.0));
  }
  if (kind == "idx") {
    return TaskSpec::idx(s.text("images", ""), s.text("labels", ""), 0);
  }
  throw ConfigError("unknown task.kind '" + kind + "'");
}

}  // namespace

void ExperimentConfig::validate() const {
  task.validate();
  if (train_size < 1 || test_size < 2) throw ConfigError("need train_size >= 1 and test_size >= 2");
  if (widths.empty()) throw ConfigError("sweep.widths must list at least one width");
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] < 1) throw ConfigError("widths must be >= 1");
    if (i > 0 && widths[i] <= widths[i - 1]) throw ConfigError("widths must be strictly increasing");
  }
  if (n_s < 2 || n_o < 2) throw ConfigError("sweep needs n_s >= 2 and n_o >= 2");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("ci_level must be in (0, 1)");
  if (ci_resamples < 100) throw ConfigError("ci_resamples must be >= 100");
  train.validate(train_size);
  for (const auto& [w, step] : step_overrides) {
    if (!(step >= 0.0)) throw ConfigError("step overrides must be >= 0");
  }
  if (emit_function_grid && (task.kind() == TaskKind::IdxClassification || task.input_dim() != 1)) {
    throw ConfigError("function grids need a one-dimensional input task");
  }
  if (emit_function_grid && grid_resolution < 2) throw ConfigError("grid_resolution must be >= 2");
  if (mode == MeanMode::OracleMean && !task.has_true_mean()) {
    throw ConfigError("oracle_mean mode needs a synthetic task");
  }
}

ExperimentConfig parse_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(e.message(), e.line());
  }
  for (const auto& [section, node] : tree) {
    auto known = kKnownKeys.find(section);
    if (known == kKnownKeys.end() || !node.data().empty()) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [k, v] : node) {
      if (!known->second.count(k)) throw ConfigError("unknown config key " + section + "." + k);
    }
  }

  ExperimentConfig cfg;
  cfg.task = parse_task(Section(tree, "task"));

  const Section data(tree, "data");
  cfg.train_size = data.count("train_size", cfg.train_size);
  cfg.test_size = data.count("test_size", cfg.test_size);
  if (cfg.task.kind() == TaskKind::IdxClassification) {
    const auto& p = std::get<IdxParams>(cfg.task.params());
    cfg.task = TaskSpec::idx(p.images_path, p.labels_path, cfg.train_size + cfg.test_size);
  }

  const Section sweep(tree, "sweep");
  cfg.widths = to_indices(sweep.text("widths", ""), sweep.key("widths"));
  cfg.n_s = sweep.count("n_s", cfg.n_s);
  cfg.n_o = sweep.count("n_o", cfg.n_o);
  cfg.master_seed = parse_seed(sweep.text("master_seed", "0"));
  const std::string mode = sweep.text("mode", "label_as_mean");
  if (mode == "label_as_mean") {
    cfg.mode = MeanMode::LabelAsMean;
  } else if (mode == "oracle_mean") {
    cfg.mode = MeanMode::OracleMean;
  } else {
    throw ConfigError("sweep.mode must be label_as_mean or oracle_mean");
  }
  cfg.ci_level = sweep.real("ci_level", cfg.ci_level);
  cfg.ci_resamples = sweep.count("ci_resamples", cfg.ci_resamples);

  const Section train(tree, "train");
  const std::string opt = train.text("optimizer", "sgd_momentum");
  if (opt == "sgd_momentum") {
    cfg.train.optimizer = Optimizer::SGDMomentum;
  } else if (opt == "batch_gd") {
    cfg.train.optimizer = Optimizer::BatchGD;
  } else {
    throw ConfigError("train.optimizer must be sgd_momentum or batch_gd");
  }
  cfg.train.step_size = train.real("step_size", cfg.train.step_size);
  cfg.train.momentum = train.real("momentum", cfg.train.momentum);
  cfg.train.epochs = static_cast<int>(train.integer("epochs", cfg.train.epochs));
  cfg.train.batch_size = train.count("batch_size", cfg.train.batch_size);
  const double es = train.real("early_stop_fraction", 0.0);
  if (es > 0.0) cfg.train.early_stop = EarlyStop{es, static_cast<int>(train.integer("patience", 100))};
  for (const auto& pair : split(train.text("step_overrides", ""), ',')) {
    const auto kv = split(pair, ':');
    if (kv.size() != 2) throw ConfigError("train.step_overrides entries must be width:step");
    cfg.step_overrides[static_cast<Eigen::Index>(to_integer(kv[0], "train.step_overrides"))] =
        to_real(kv[1], "train.step_overrides");
  }

  const Section tune(tree, "tune");
  cfg.tune_candidates = to_reals(tune.text("candidates", ""), tune.key("candidates"));
  cfg.tune_validation_fraction = tune.real("validation_fraction", cfg.tune_validation_fraction);
  cfg.tune_epochs = static_cast<int>(tune.integer("epochs", cfg.tune_epochs));

  const Section output(tree, "output");
  cfg.output_dir = output.text("dir", cfg.output_dir.string());
  cfg.emit_function_grid = to_bool(output.text("emit_function_grid", "false"), output.key("emit_function_grid"));
  cfg.grid_resolution = output.count("grid_resolution", cfg.grid_resolution);

  const Section lin(tree, "linear");
  auto& l = cfg.linear;
  l.m_under = lin.count("m_under", l.m_under);
  if (auto v = lin.raw("n_under")) l.n_under = to_indices(*v, lin.key("n_under"));
  l.m_over = lin.count("m_over", l.m_over);
  if (auto v = lin.raw("n_over")) l.n_over = to_indices(*v, lin.key("n_over"));
  l.sigma_eps = lin.real("sigma_eps", l.sigma_eps);
  l.probe_points = lin.count("probe_points", l.probe_points);
  l.mc_draws_under = lin.count("mc_draws_under", l.mc_draws_under);
  l.mc_draws_over = lin.count("mc_draws_over", l.mc_draws_over);
  l.pad_base_n = static_cast<Eigen::Index>(lin.integer("pad_base_n", l.pad_base_n));
  if (auto v = lin.raw("pad_dims")) l.pad_dims = to_indices(*v, lin.key("pad_dims"));
  l.tolerance_sigmas = lin.real("tolerance_sigmas", l.tolerance_sigmas);
  l.gd_tolerance = lin.real("gd_tolerance", l.gd_tolerance);
  l.identity_tolerance = lin.real("identity_tolerance", l.identity_tolerance);
  l.scaling_tolerance = lin.real("scaling_tolerance", l.scaling_tolerance);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in);
}

void write_config(std::ostream& out, const ExperimentConfig& cfg) {
  pt::ptree tree;
  const auto r = [](double v) { return csv::format_real(v); };

  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, SinusoidParams>) {
          tree.put("task.kind", "sinusoid");
          tree.put("task.amplitude", r(p.amplitude));
          tree.put("task.frequency", r(p.frequency));
          tree.put("task.noise_sigma", r(p.noise_sigma));
        } else if constexpr (std::is_same_v<P, LinearTeacherParams>) {
          tree.put("task.kind", "linear_teacher");
          tree.put("task.theta_star", join_reals({p.theta_star.data(), p.theta_star.data() + p.theta_star.size()}));
          tree.put("task.noise_sigma", r(p.noise_sigma));
        } else if constexpr (std::is_same_v<P, ClusterParams>) {
          tree.put("task.kind", "gaussian_clusters");
          std::string means;
          for (Eigen::Index i = 0; i < p.means.rows(); ++i) {
            std::vector<double> row(p.means.cols());
            for (Eigen::Index j = 0; j < p.means.cols(); ++j) row[std::size_t(j)] = p.means(i, j);
            means += (i ? ";" : "") + join_reals(row);
          }
          tree.put("task.means", means);
          tree.put("task.stddev", r(p.stddev));
        } else {
          tree.put("task.kind", "idx");
          tree.put("task.images", p.images_path.string());
          tree.put("task.labels", p.labels_path.string());
        }
      },
      cfg.task.params());

  tree.put("data.train_size", cfg.train_size);
  tree.put("data.test_size", cfg.test_size);

  tree.put("sweep.widths", join_indices(cfg.widths));
  tree.put("sweep.n_s", cfg.n_s);
  tree.put("sweep.n_o", cfg.n_o);
  tree.put("sweep.master_seed", cfg.master_seed);
  tree.put("sweep.mode", cfg.mode == MeanMode::OracleMean ? "oracle_mean" : "label_as_mean");
  tree.put("sweep.ci_level", r(cfg.ci_level));
  tree.put("sweep.ci_resamples", cfg.ci_resamples);

  tree.put("train.optimizer", cfg.train.optimizer == Optimizer::BatchGD ? "batch_gd" : "sgd_momentum");
  tree.put("train.step_size", r(cfg.train.step_size));
  tree.put("train.momentum", r(cfg.train.momentum));
  tree.put("train.epochs", cfg.train.epochs);
  tree.put("train.batch_size", cfg.train.batch_size);
  if (cfg.train.early_stop) {
    tree.put("train.early_stop_fraction", r(cfg.train.early_stop->validation_fraction));
    tree.put("train.patience", cfg.train.early_stop->patience);
  }
  std::string overrides;
  for (const auto& [w, step] : cfg.step_overrides) {
    overrides += (overrides.empty() ? "" : ",") + std::to_string(w) + ":" + r(step);
  }
  if (!overrides.empty()) tree.put("train.step_overrides", overrides);

  if (!cfg.tune_candidates.empty()) tree.put("tune.candidates", join_reals(cfg.tune_candidates));
  tree.put("tune.validation_fraction", r(cfg.tune_validation_fraction));
  tree.put("tune.epochs", cfg.tune_epochs);

  tree.put("output.dir", cfg.output_dir.string());
  tree.put("output.emit_function_grid", cfg.emit_function_grid ? "true" : "false");
  tree.put("output.grid_resolution", cfg.grid_resolution);

  const auto& l = cfg.linear;
  tree.put("linear.m_under", l.m_under);
  tree.put("linear.n_under", join_indices(l.n_under));
  tree.put("linear.m_over", l.m_over);
  tree.put("linear.n_over", join_indices(l.n_over));
  tree.put("linear.sigma_eps", r(l.sigma_eps));
  tree.put("linear.probe_points", l.probe_points);
  tree.put("linear.mc_draws_under", l.mc_draws_under);
  tree.put("linear.mc_draws_over", l.mc_draws_over);
  tree.put("linear.pad_base_n", l.pad_base_n);
  tree.put("linear.pad_dims", join_indices(l.pad_dims));
  tree.put("linear.tolerance_sigmas", r(l.tolerance_sigmas));
  tree.put("linear.gd_tolerance", r(l.gd_tolerance));
  tree.put("linear.identity_tolerance", r(l.identity_tolerance));
  tree.put("linear.scaling_tolerance", r(l.scaling_tolerance));

  pt::write_ini(out, tree);
}

std::string config_digest(const ExperimentConfig& cfg) {
  ExperimentConfig copy = cfg;
  copy.output_dir.clear();
  std::ostringstream text;
  write_config(text, copy);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const char* code_version() { return BVX_VERSION; }

}  // namespace bvx
