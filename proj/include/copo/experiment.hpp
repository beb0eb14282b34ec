#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "copo/hiro.hpp"
#include "copo/metrics.hpp"
#include "copo/sac.hpp"
#include "json.hpp"

namespace copo {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArchConfig {
  Index d = 128;
  Index decoder_hidden = 128;
  std::vector<Index> value_hidden = {256, 256};
  std::vector<Index> q_hidden = {256, 256};
  std::vector<Index> high_hidden = {300, 300, 300};
  std::vector<Index> flat_hidden = {256, 256};
  double temperature = 0.5;
};

struct ExperimentConfig {
  std::string env_name = "point_random_goal";
  std::string algo = "sac";
  std::string variant = "full";
  std::uint64_t seed = 0;
  std::int64_t steps = 20000;
  std::int64_t eval_interval = 5000;
  int eval_episodes = 10;
  std::int64_t checkpoint_interval = 0;  // 0: final checkpoint only
  std::string out_dir = "runs/default";
  std::string resume_from;  // run directory holding manifest.json
  ArchConfig arch;
  SacConfig sac;
  HiroConfig hiro;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  // dot-path override, e.g. "sac.batch=64" or "arch.d=32"
  void apply_override(const std::string& assignment);
  void validate() const;  // throws ConfigError
};

// Deterministic composer-mode evaluation episodes; one record per episode.
std::vector<MetricsRecord> evaluate_sac(const SacNets& nets, const Ensemble& ensemble,
                                        const std::string& env_name, int episodes,
                                        std::int64_t at_step, Rng& rng);
std::vector<MetricsRecord> evaluate_hiro(const HiroNets& nets, const Ensemble& ensemble,
                                         const std::string& env_name, int episodes, int horizon_c,
                                         double goal_bound, std::int64_t at_step, Rng& rng);

struct RunResult {
  std::vector<MetricsRecord> final_eval;
  std::int64_t total_steps = 0;
};

// Trains per the config, evaluating every eval_interval steps, appending
// metrics + checkpoints under out_dir, and writing summary.json at the end.
// Throws ConfigError (exit 1 at the CLI) or NumericalError (exit 2, after
// writing a crash snapshot).
RunResult run_experiment(const ExperimentConfig& cfg);

// Runs the full / no_attention / att_brnn_removed variants over the given
// seeds with shared env streams; writes per-variant mean/std learning-curve
// CSVs and an AUC report under <out_dir>.
void run_ablation(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds);

Ensemble make_env_ensemble(const std::string& env_name);
CompositePolicy::Config policy_config_for(const ExperimentConfig& cfg, Index state_width,
                                          Index n_primitives);

}  // namespace copo
