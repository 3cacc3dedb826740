#ifndef SHAKEDROP_CLI_HPP_
#define SHAKEDROP_CLI_HPP_

#include <CLI11.hpp>
#include <optional>
#include <string>
#include <vector>

#include "shakedrop/experiment.hpp"

namespace shakedrop {

namespace detail {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
};

inline void add_common_options(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_path, "experiment config file (key=value lines)");
  sub->add_option("--set", args.sets, "override a config key, e.g. --set optimizer.base_lr=0.05")
      ->take_all();
  sub->add_option("--seed", args.seed, "override run.seed");
  sub->add_option("--out", args.out, "override run.out_dir");
  sub->add_option("--workers", args.workers, "override run.replicas");
}

inline ExperimentConfig resolve_config(const CommonArgs& args) {
  KeyValueConfig kv =
      args.config_path.empty() ? KeyValueConfig{} : KeyValueConfig::from_file(args.config_path);
  for (const std::string& s : args.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument("--set expects key=value, got " + s);
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (args.seed) kv.set("run.seed", std::to_string(*args.seed));
  if (args.out) kv.set("run.out_dir", *args.out);
  if (args.workers) kv.set("run.replicas", std::to_string(*args.workers));
  return ExperimentConfig::from_kv(kv);
}

}  // namespace detail

// Entry point shared by the binary and the tests. Exit codes: 0 success,
// 1 runtime failure (divergence, tolerance breach), 2 usage or validation
// error. Failures print a single `error: ...` line on stderr.
inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"stochastic residual-branch regularization workbench"};
  app.require_subcommand(1);

  detail::CommonArgs train_args, eval_args, gradcheck_args, sweep_args, expectation_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train a network and write metrics/params");
  detail::add_common_options(train_cmd, train_args);
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate saved parameters on the eval split");
  detail::add_common_options(eval_cmd, eval_args);
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference checks over ops and frozen blocks");
  detail::add_common_options(gradcheck_cmd, gradcheck_args);
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "train over a p_L x depth grid");
  detail::add_common_options(sweep_cmd, sweep_args);
  CLI::App* expectation_cmd = app.add_subcommand(
      "expectation-test", "Monte-Carlo check of Train-mean vs Eval forward");
  detail::add_common_options(expectation_cmd, expectation_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    apply_log_env();
    if (train_cmd->parsed()) return cmd_train(detail::resolve_config(train_args));
    if (eval_cmd->parsed()) return cmd_eval(detail::resolve_config(eval_args));
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(detail::resolve_config(gradcheck_args));
    if (sweep_cmd->parsed()) return cmd_sweep(detail::resolve_config(sweep_args));
    if (expectation_cmd->parsed())
      return cmd_expectation_test(detail::resolve_config(expectation_args));
    std::fprintf(stderr, "error: cli: no subcommand\n");
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace shakedrop

#endif  // SHAKEDROP_CLI_HPP_
