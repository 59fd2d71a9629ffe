#include "bvx/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Bias-variance experiments for neural networks and linear models"};
  app.set_version_flag("--version", bvx::code_version());
  app.require_subcommand(1);

  std::filesystem::path config;
  std::filesystem::path report_dir;
  unsigned jobs = 0;
  std::uint64_t seed = 0;
  std::string out_dir;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "INI experiment configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--jobs", jobs, "worker threads (default: BVX_JOBS, then hardware concurrency)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "override the master seed");
    sub->add_option("--out", out_dir, "override the output directory");
  };

  auto* sweep = app.add_subcommand("sweep", "width sweep with bias/variance estimates");
  add_common(sweep);
  auto* oracle = app.add_subcommand("linear-oracle", "validate linear-model variance formulas by Monte Carlo");
  add_common(oracle);
  auto* gen = app.add_subcommand("gen-data", "write the train/test sets a config would use");
  add_common(gen);
  auto* report = app.add_subcommand("report", "summarize sweep results in a directory");
  report->add_option("dir", report_dir, "results directory");
  report->add_option("--out", out_dir, "results directory (alternative to the positional form)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : bvx::kExitConfigError;
  }

  bvx::RunOptions opts;
  opts.jobs = jobs;
  if (app.got_subcommand("sweep") || app.got_subcommand("linear-oracle") || app.got_subcommand("gen-data")) {
    auto* sub = app.get_subcommands().front();
    if (sub->count("--seed")) opts.seed = seed;
    if (sub->count("--out")) opts.out = out_dir;
  }

  if (sweep->parsed()) return bvx::cmd_sweep(config, opts, std::cout, std::cerr);
  if (oracle->parsed()) return bvx::cmd_linear_oracle(config, opts, std::cout, std::cerr);
  if (gen->parsed()) return bvx::cmd_gen_data(config, opts, std::cout, std::cerr);
  if (report_dir.empty()) report_dir = out_dir.empty() ? std::filesystem::path("results") : std::filesystem::path(out_dir);
  return bvx::cmd_report(report_dir, std::cout, std::cerr);
}
