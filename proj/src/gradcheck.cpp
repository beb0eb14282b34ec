#include "copo/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "copo/composer.hpp"
#include "copo/hiro.hpp"
#include "copo/sac.hpp"

namespace copo {

namespace {

constexpr double kTol = 1e-4;
constexpr Index kBatch = 4;
constexpr Index kActDim = 2;
constexpr Index kPrims = 3;
constexpr Index kState = 4;

Matrix random_matrix(Index r, Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = scale * normal(rng);
  return m;
}

BatchPrimitives random_prims(Index batch, Rng& rng) {
  BatchPrimitives p;
  for (Index i = 0; i < kPrims; ++i) {
    p.mu.push_back(random_matrix(batch, kActDim, rng));
    p.sigma.push_back((random_matrix(batch, kActDim, rng).array().abs() + 0.2).matrix());
  }
  return p;
}

CompositePolicy::Config small_policy_cfg(ComposerVariant variant, Index state_width) {
  CompositePolicy::Config cfg;
  cfg.variant = variant;
  cfg.state_width = state_width;
  cfg.action_dim = kActDim;
  cfg.n_primitives = kPrims;
  cfg.d = 6;
  cfg.decoder_hidden = 8;
  cfg.flat_hidden = {8};
  cfg.temperature = 0.5;
  return cfg;
}

GradCheckResult check(const std::string& name, const std::function<Tensor()>& f,
                      std::vector<Tensor> params, double tol = kTol) {
  FdReport rep = finite_difference_check(f, params, tol);
  return {name, rep.max_rel_error, tol, rep.pass};
}

}  // namespace

std::vector<GradCheckResult> run_gradient_checks(std::uint64_t seed) {
  std::vector<GradCheckResult> results;
  Rng init = make_stream(seed, "gradcheck/init");
  Rng data = make_stream(seed, "gradcheck/data");

  CompositePolicy policy(small_policy_cfg(ComposerVariant::Full, kState), init);
  Matrix states = random_matrix(kBatch, kState, data);
  BatchPrimitives prim = random_prims(kBatch, data);
  Matrix actions = random_matrix(kBatch, kActDim, data);
  PolicyNoise noise = draw_policy_noise(kBatch, kPrims, kActDim, data);

  results.push_back(check(
      "mixture_log_prob",
      [&] {
        return mean_all(policy.log_prob_batch(states, prim, actions, PolicyMode::Stochastic, noise));
      },
      policy.params()));

  results.push_back(check(
      "attention_logits_chain",
      [&] { return mean_all(policy.attention_scores_batch(states, prim)); }, policy.params()));

  // SAC losses on a small random batch
  SacConfig sac_cfg;
  sac_cfg.entropy_coef = 0.2;
  SacNets sac = SacNets::make(small_policy_cfg(ComposerVariant::Full, kState), {8}, {8}, init);
  SacBatch batch;
  batch.states = states;
  batch.actions = actions;
  batch.prim = prim;
  batch.next_states = random_matrix(kBatch, kState, data);
  batch.rewards = Eigen::VectorXd::NullaryExpr(kBatch, [&]() { return normal(data); });
  batch.dones = Eigen::VectorXd::Zero(kBatch);
  batch.dones[1] = 1.0;

  results.push_back(check(
      "sac_q_loss", [&] { return q_loss(batch, sac, sac_cfg); }, sac.q_params()));

  Rng value_rng = make_stream(seed, "gradcheck/value");
  results.push_back(check(
      "sac_value_loss",
      [&] {
        Rng frozen = value_rng;  // copy: every evaluation re-draws the same sample
        return value_loss(batch, sac, sac_cfg, frozen);
      },
      sac.value_params()));

  results.push_back(check(
      "sac_policy_loss", [&] { return policy_loss(batch, sac, sac_cfg, noise); },
      sac.policy_params()));

  // HIRO losses
  HiroConfig hiro_cfg;
  hiro_cfg.goal_bound = 4.0;
  hiro_cfg.high_smooth_noise = 0.4;
  hiro_cfg.high_smooth_clip = 1.0;
  HiroNets hiro = HiroNets::make(small_policy_cfg(ComposerVariant::Full, kState + 2), kState, 2,
                                 {8}, {8}, init);
  LowBatch low;
  low.states = states;
  low.goals = random_matrix(kBatch, 2, data);
  low.actions = actions;
  low.next_states = random_matrix(kBatch, kState, data);
  low.next_goals = random_matrix(kBatch, 2, data);
  low.prim = prim;
  low.prim_next = random_prims(kBatch, data);
  low.rewards = Eigen::VectorXd::NullaryExpr(kBatch, [&]() { return -std::abs(normal(data)); });
  low.dones = Eigen::VectorXd::Zero(kBatch);
  Matrix low_noise = random_matrix(kBatch, kActDim, data, 0.2);

  results.push_back(check(
      "hiro_low_q_loss", [&] { return low_q_loss(low, hiro, hiro_cfg, 1.0, low_noise); },
      hiro.low_q_params()));

  results.push_back(check(
      "hiro_low_actor_loss", [&] { return low_actor_loss(low, hiro); },
      hiro.low_policy.params()));

  HighBatch high;
  high.states = states;
  high.goals = random_matrix(kBatch, 2, data);
  high.next_states = random_matrix(kBatch, kState, data);
  high.reward_sums = Eigen::VectorXd::NullaryExpr(kBatch, [&]() { return normal(data); });
  high.dones = Eigen::VectorXd::Zero(kBatch);
  Matrix high_noise = random_matrix(kBatch, 2, data, 0.4);

  results.push_back(check(
      "hiro_high_q_loss", [&] { return high_q_loss(high, hiro, hiro_cfg, high_noise); },
      hiro.high_q_params()));

  results.push_back(check(
      "hiro_high_actor_loss", [&] { return high_actor_loss(high, hiro, hiro_cfg); },
      hiro.high_policy.params()));

  return results;
}

}  // namespace copo
