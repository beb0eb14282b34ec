#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "copo/composer.hpp"
#include "copo/ensemble.hpp"
#include "copo/envs.hpp"
#include "copo/replay.hpp"
#include "copo/sac.hpp"
#include "copo/serialize.hpp"

namespace copo {

struct HiroConfig {
  double learning_rate = 1e-4;
  double gamma = 0.99;
  double tau = 0.005;
  std::size_t batch = 128;       // low-level batch
  std::size_t high_batch = 128;  // c-step segment batch
  std::size_t replay_capacity = 200'000;
  int target_update_interval = 2;  // TD3 actor delay and polyak cadence
  int horizon_c = 10;              // env steps between high-level decisions
  int relabel_candidates = 10;     // original + mean + gaussian draws
  double goal_bound = 10.0;        // per-axis bound on goal offsets
  double high_noise = 2.0;         // exploration sigma on goals (10% of range)
  double low_noise = 0.2;          // exploration sigma on low-level actions
  double smooth_noise = 0.2;       // TD3 target smoothing sigma (action units)
  double smooth_clip = 0.5;
  double high_smooth_noise = 2.0;  // smoothing scaled to the goal space
  double high_smooth_clip = 5.0;
  int warmup_steps = 1000;
  int update_every = 1;
};

// Low-level transition with its goal-conditioned context. Primitive outputs
// at s_next are stored so target-policy actions need no env access.
struct LowTransition {
  Eigen::VectorXd s, g, a, s_next, g_next;
  Matrix prim_mu, prim_sigma;            // at s
  Matrix prim_mu_next, prim_sigma_next;  // at s_next
  double done = 0.0;
};

// One c-step (or episode-truncated) segment for the high level.
struct HighTransition {
  Eigen::VectorXd s_begin;
  Eigen::VectorXd g_original;  // executed high-level action
  double reward_sum = 0.0;
  Eigen::VectorXd s_end;
  double done = 0.0;
  std::vector<Eigen::VectorXd> states;   // s_t .. s_{t+m}, m <= c
  std::vector<Eigen::VectorXd> actions;  // executed low-level actions, length m
};

struct HiroNets {
  CompositePolicy low_policy;
  CompositePolicy low_policy_target;
  Mlp low_q1, low_q2, low_q1_target, low_q2_target;
  Mlp high_policy;  // raw head; goals are tanh-squashed to the goal bound
  Mlp high_policy_target;
  Mlp high_q1, high_q2, high_q1_target, high_q2_target;

  static HiroNets make(const CompositePolicy::Config& low_cfg, Index state_width, Index goal_dims,
                       const std::vector<Index>& q_hidden, const std::vector<Index>& high_hidden,
                       Rng& rng);

  std::vector<Tensor> low_q_params() const;
  std::vector<Tensor> high_q_params() const;
  void collect_params(NamedParams& out) const;
};

// Intrinsic reward: -|| (s + g - s_next) restricted to the goal dims ||.
double low_reward(const Eigen::VectorXd& s, const Eigen::VectorXd& g,
                  const Eigen::VectorXd& s_next);

// Goal update between high-level decisions; keeps the absolute target fixed
// as the agent moves: g' = s + g - s_next on the goal dims.
Eigen::VectorXd goal_transition(const Eigen::VectorXd& s, const Eigen::VectorXd& g,
                                const Eigen::VectorXd& s_next);

// Squashed high-level action tanh(mlp(s)) * goal_bound, differentiable.
Tensor high_action_graph(const Mlp& policy, const Matrix& states, double goal_bound,
                         bool frozen = false);

struct LowBatch {
  Matrix states, goals, actions, next_states, next_goals;
  BatchPrimitives prim, prim_next;
  Eigen::VectorXd rewards;  // intrinsic, derived from (s, g, s_next)
  Eigen::VectorXd dones;
  Index size() const { return states.rows(); }
};

LowBatch assemble_low_batch(const std::vector<LowTransition>& transitions);

// TD3 critic loss at the low level: smoothed target-policy action, min of
// twin target critics, both online twins regressed; targets gradient-free.
Tensor low_q_loss(const LowBatch& batch, const HiroNets& nets, const HiroConfig& cfg,
                  double action_bound, const Matrix& smoothing_noise);

// -mean Q1(s, g, pi(s, g)) with critic parameters frozen.
Tensor low_actor_loss(const LowBatch& batch, const HiroNets& nets);

struct HighBatch {
  Matrix states;       // s_begin
  Matrix goals;        // relabeled goals
  Eigen::VectorXd reward_sums;
  Matrix next_states;  // s_end
  Eigen::VectorXd dones;
  Index size() const { return states.rows(); }
};

Tensor high_q_loss(const HighBatch& batch, const HiroNets& nets, const HiroConfig& cfg,
                   const Matrix& smoothing_noise);

Tensor high_actor_loss(const HighBatch& batch, const HiroNets& nets, const HiroConfig& cfg);

// Off-policy goal relabeling: candidates are the original goal, the achieved
// displacement, and gaussian draws around it (clipped to the goal bounds);
// each is scored by the summed low-policy log-density of the executed
// actions under goal_transition-propagated goals. Ties pick the lowest index.
Eigen::VectorXd relabel_goal(const HighTransition& segment, const CompositePolicy& low_policy,
                             const Ensemble& ensemble, Index shat_width, const HiroConfig& cfg,
                             Rng& rng);

// argmax with lowest-index tie break; -inf scores lose to any finite score.
std::size_t pick_best_candidate(const std::vector<double>& scores);

class HiroTrainer {
 public:
  HiroTrainer(PointEnv env, Ensemble ensemble, HiroNets nets, HiroConfig cfg, std::uint64_t seed);

  void run(std::int64_t steps, const std::function<void(std::int64_t)>& after_step = {});

  std::int64_t total_steps() const { return total_steps_; }
  const std::vector<EpisodeStats>& episode_log() const { return episodes_; }
  HiroNets& nets() { return nets_; }
  const HiroNets& nets() const { return nets_; }
  const ReplayBuffer<LowTransition>& low_replay() const { return low_replay_; }
  const ReplayBuffer<HighTransition>& high_replay() const { return high_replay_; }

  void save(CheckpointWriter& w) const;
  void load(const CheckpointReader& r);

 private:
  void env_step();
  void low_update();
  void high_update();
  void begin_segment();
  void finish_segment(const Eigen::VectorXd& s_end, double done);
  Eigen::VectorXd sample_goal(const Eigen::VectorXd& s);

  PointEnv env_;
  Ensemble ensemble_;
  HiroNets nets_;
  HiroConfig cfg_;
  ReplayBuffer<LowTransition> low_replay_;
  ReplayBuffer<HighTransition> high_replay_;

  Rng env_rng_, warmup_rng_, goal_rng_, action_rng_, low_batch_rng_, high_batch_rng_,
      relabel_rng_, smooth_low_rng_, smooth_high_rng_;

  AdamState adam_low_q_, adam_low_pi_, adam_high_q_, adam_high_pi_;
  std::vector<Tensor> low_q_params_, low_pi_params_, high_q_params_, high_pi_params_;
  std::vector<Tensor> low_q_target_params_, low_pi_target_params_, high_q_target_params_,
      high_pi_target_params_;

  EnvObservation obs_;
  Eigen::VectorXd goal_;
  std::optional<HighTransition> segment_;
  double episode_return_ = 0.0;
  std::int64_t total_steps_ = 0;
  std::int64_t low_critic_updates_ = 0;
  std::int64_t high_critic_updates_ = 0;
  std::vector<EpisodeStats> episodes_;
};

}  // namespace copo
