#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "copo/composer.hpp"
#include "copo/ensemble.hpp"
#include "copo/envs.hpp"
#include "copo/replay.hpp"
#include "copo/serialize.hpp"

namespace copo {

// Raised when a loss turns non-finite; the harness converts it into a
// diagnostic snapshot and exit code 2.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SacConfig {
  double learning_rate = 3e-4;
  double gamma = 0.99;
  double tau = 0.005;
  std::size_t batch = 256;
  std::size_t replay_capacity = 1'000'000;
  int target_update_interval = 1;
  int gradient_steps = 1;
  double entropy_coef = 0.2;  // lambda; the paper leaves it unnamed
  int warmup_steps = 1000;
  int update_every = 1;  // env steps between update rounds
};

// One environment step as stored by the trainer. `done` is the bootstrap
// mask source: 1 only on terminal goal capture, horizon timeouts bootstrap.
struct Transition {
  Eigen::VectorXd s;
  Eigen::VectorXd a;
  Matrix prim_mu;     // K x action_dim
  Matrix prim_sigma;  // K x action_dim
  double r = 0.0;
  Eigen::VectorXd s_next;
  double done = 0.0;
};

struct SacNets {
  CompositePolicy policy;
  Mlp value;
  Mlp value_target;  // frozen clone of value, polyak-averaged
  Mlp q1, q2;

  static SacNets make(const CompositePolicy::Config& policy_cfg,
                      const std::vector<Index>& value_hidden, const std::vector<Index>& q_hidden,
                      Rng& rng);

  std::vector<Tensor> policy_params() const { return policy.params(); }
  std::vector<Tensor> value_params() const { return value.params(); }
  std::vector<Tensor> q_params() const;
  void collect_params(NamedParams& out) const;
};

struct SacBatch {
  Matrix states;       // B x S
  Matrix actions;      // B x A
  BatchPrimitives prim;
  Eigen::VectorXd rewards;
  Matrix next_states;  // B x S
  Eigen::VectorXd dones;

  Index size() const { return states.rows(); }
};

SacBatch assemble_batch(const std::vector<Transition>& transitions);

// r + gamma * (1 - done) * V_target(s_next); no gradient flows into it.
double bellman_target(double r, const Eigen::VectorXd& s_next, double done, const SacNets& nets,
                      const SacConfig& cfg);

// Summed twin losses, mean over the batch of 0.5 * (Q - target)^2 each.
Tensor q_loss(const SacBatch& batch, const SacNets& nets, const SacConfig& cfg);

// 0.5 * (V(s) - Vhat)^2 with Vhat = min-twin Q(s, a~pi) - log pi(a|s),
// single-sample, gradient-free target.
Tensor value_loss(const SacBatch& batch, const SacNets& nets, const SacConfig& cfg, Rng& rng);

// E[lambda * log pi(a|s) - min-twin Q(s, a)] with a reparameterized through
// the composer and Q parameters frozen.
Tensor policy_loss(const SacBatch& batch, const SacNets& nets, const SacConfig& cfg,
                   const PolicyNoise& noise);

struct EpisodeStats {
  std::int64_t step = 0;  // env step at which the episode ended
  double episode_return = 0.0;
  double final_distance = 0.0;
  double normalized_final_distance = 0.0;
  int success = 0;
};

class SacTrainer {
 public:
  SacTrainer(PointEnv env, Ensemble ensemble, SacNets nets, SacConfig cfg, std::uint64_t seed);

  // Runs `steps` additional env steps (Algorithm-1 loop). after_step fires
  // once per env step with the cumulative step count.
  void run(std::int64_t steps, const std::function<void(std::int64_t)>& after_step = {});

  std::int64_t total_steps() const { return total_steps_; }
  const std::vector<EpisodeStats>& episode_log() const { return episodes_; }
  SacNets& nets() { return nets_; }
  const SacNets& nets() const { return nets_; }
  const Ensemble& ensemble() const { return ensemble_; }
  const ReplayBuffer<Transition>& replay() const { return replay_; }

  void save(CheckpointWriter& w) const;
  void load(const CheckpointReader& r);

 private:
  void env_step();
  void update_round();

  PointEnv env_;
  Ensemble ensemble_;
  SacNets nets_;
  SacConfig cfg_;
  ReplayBuffer<Transition> replay_;

  Rng env_rng_, warmup_rng_, policy_rng_, batch_rng_, value_rng_, loss_rng_;

  AdamState adam_value_, adam_q_, adam_policy_;
  std::vector<Tensor> value_params_, q_params_, policy_params_, value_target_params_;
  std::vector<Tensor> value_online_params_;

  EnvObservation obs_;
  double episode_return_ = 0.0;
  std::int64_t total_steps_ = 0;
  std::int64_t update_rounds_ = 0;
  std::vector<EpisodeStats> episodes_;
};

}  // namespace copo
