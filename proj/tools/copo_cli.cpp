#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "copo/experiment.hpp"
#include "copo/gradcheck.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> steps;
  std::optional<std::string> env;
  std::optional<std::string> algo;
  std::optional<std::string> variant;
  std::optional<std::string> out;
  std::string resume;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file");
  cmd->add_option("--set", f.overrides, "dot-path override, e.g. sac.batch=64")->take_all();
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--steps", f.steps, "env step budget");
  cmd->add_option("--env", f.env, "environment name");
  cmd->add_option("--algo", f.algo, "sac | hiro");
  cmd->add_option("--variant", f.variant, "full | no_attention | att_brnn_removed | flat_baseline");
  cmd->add_option("--out", f.out, "output directory");
}

copo::ExperimentConfig build_config(const CommonFlags& f) {
  copo::ExperimentConfig cfg;
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw copo::ConfigError("cannot open config file " + f.config_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw copo::ConfigError("config parse error: " + std::string(e.what()));
    }
    cfg = copo::ExperimentConfig::from_json(j);
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.steps) cfg.steps = *f.steps;
  if (f.env) cfg.env_name = *f.env;
  if (f.algo) cfg.algo = *f.algo;
  if (f.variant) cfg.variant = *f.variant;
  if (f.out) cfg.out_dir = *f.out;
  if (!f.resume.empty()) cfg.resume_from = f.resume;
  for (const std::string& o : f.overrides) cfg.apply_override(o);
  return cfg;
}

int cmd_eval(const CommonFlags& flags, int episodes) {
  std::filesystem::path dir(flags.out.value_or(""));
  if (dir.empty()) throw copo::ConfigError("eval requires --out pointing at a run directory");
  std::ifstream in(dir / "config.json");
  if (!in) throw copo::ConfigError("no config.json in " + dir.string());
  nlohmann::json j;
  in >> j;
  copo::ExperimentConfig cfg = copo::ExperimentConfig::from_json(j);
  cfg.validate();

  copo::PointEnv env = copo::PointEnv::make(cfg.env_name);
  copo::Ensemble ensemble = copo::make_env_ensemble(cfg.env_name);
  copo::Rng init = copo::make_stream(cfg.seed, "init");
  copo::CheckpointReader reader(dir);
  copo::Rng rng = copo::make_stream(cfg.seed, "eval/cli");

  std::vector<copo::MetricsRecord> rows;
  if (cfg.algo == "sac") {
    auto pcfg = copo::policy_config_for(cfg, env.spec().state_width(),
                                        static_cast<copo::Index>(ensemble.size()));
    copo::SacNets nets = copo::SacNets::make(pcfg, cfg.arch.value_hidden, cfg.arch.q_hidden, init);
    copo::NamedParams named;
    nets.collect_params(named);
    reader.load_params(named);
    rows = copo::evaluate_sac(nets, ensemble, cfg.env_name, episodes, 0, rng);
  } else {
    auto low_cfg = copo::policy_config_for(cfg, env.spec().state_width() + env.goal_space_dims(),
                                           static_cast<copo::Index>(ensemble.size()));
    copo::HiroNets nets = copo::HiroNets::make(low_cfg, env.spec().state_width(),
                                               env.goal_space_dims(), cfg.arch.q_hidden,
                                               cfg.arch.high_hidden, init);
    copo::NamedParams named;
    nets.collect_params(named);
    reader.load_params(named);
    rows = copo::evaluate_hiro(nets, ensemble, cfg.env_name, episodes, cfg.hiro.horizon_c,
                               cfg.hiro.goal_bound, 0, rng);
  }

  double mean = 0, succ = 0;
  for (const auto& r : rows) {
    mean += r.normalized_final_distance;
    succ += r.success;
    std::printf("episode return=%.3f final_distance=%.3f normalized=%.3f success=%d\n",
                r.episode_return, r.final_distance, r.normalized_final_distance, r.success);
  }
  std::printf("mean normalized final distance: %.4f, success rate: %.2f (%zu episodes)\n",
              mean / rows.size(), succ / rows.size(), rows.size());
  return 0;
}

int cmd_check_grads(std::uint64_t seed) {
  auto results = copo::run_gradient_checks(seed);
  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("%-24s max rel err %.3e (tol %.0e) %s\n", r.name.c_str(), r.max_rel_error, r.tol,
                r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"composite-policy reinforcement learning harness"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, ablate_flags;
  int eval_episodes = 10;
  int ablate_seeds = 5;
  std::uint64_t grad_seed = 1234;

  CLI::App* train = app.add_subcommand("train", "train a policy per the config");
  add_common(train, train_flags);
  train->add_option("--resume", train_flags.resume, "run directory to resume from");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a finished run directory");
  add_common(eval, eval_flags);
  eval->add_option("--episodes", eval_episodes, "evaluation episodes");

  CLI::App* ablate = app.add_subcommand("ablate", "run full vs ablated composer variants");
  add_common(ablate, ablate_flags);
  ablate->add_option("--seeds", ablate_seeds, "number of seeds per variant");

  CLI::App* check = app.add_subcommand("check-grads", "finite-difference gradient verification");
  check->add_option("--seed", grad_seed, "scenario seed");

  app.add_subcommand("list-envs", "list registered environments");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("list-envs")) {
      for (const std::string& name : copo::PointEnv::registry()) {
        copo::PointEnv env = copo::PointEnv::make(name);
        std::printf("%-18s family=%-7s state=%lld goal=%lld action=%lld horizon=%d\n", name.c_str(),
                    env.spec().family.c_str(), static_cast<long long>(env.spec().shat_width),
                    static_cast<long long>(env.spec().goal_width),
                    static_cast<long long>(env.spec().action_dim), env.spec().horizon);
      }
      return 0;
    }
    if (app.got_subcommand("check-grads")) return cmd_check_grads(grad_seed);
    if (app.got_subcommand("eval")) return cmd_eval(eval_flags, eval_episodes);
    if (app.got_subcommand("train")) {
      copo::ExperimentConfig cfg = build_config(train_flags);
      copo::run_experiment(cfg);
      return 0;
    }
    if (app.got_subcommand("ablate")) {
      copo::ExperimentConfig cfg = build_config(ablate_flags);
      std::vector<std::uint64_t> seeds;
      for (int i = 0; i < ablate_seeds; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));
      copo::run_ablation(cfg, seeds);
      return 0;
    }
  } catch (const copo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const copo::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
