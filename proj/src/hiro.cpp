#include "copo/hiro.hpp"

#include <cmath>
#include <limits>

namespace copo {

namespace {
constexpr Index kGoalDims = 2;  // xy position subspace of the state
}

HiroNets HiroNets::make(const CompositePolicy::Config& low_cfg, Index state_width, Index goal_dims,
                        const std::vector<Index>& q_hidden, const std::vector<Index>& high_hidden,
                        Rng& rng) {
  HiroNets n;
  n.low_policy = CompositePolicy(low_cfg, rng);
  n.low_policy_target = n.low_policy.clone_frozen();
  Index low_in = low_cfg.state_width + low_cfg.action_dim;  // [s, g] + a
  n.low_q1 = Mlp(low_in, q_hidden, 1, Activation::Relu, Mlp::Head::Linear, rng);
  n.low_q2 = Mlp(low_in, q_hidden, 1, Activation::Relu, Mlp::Head::Linear, rng);
  n.low_q1_target = n.low_q1.clone_frozen();
  n.low_q2_target = n.low_q2.clone_frozen();
  n.high_policy = Mlp(state_width, high_hidden, goal_dims, Activation::Relu, Mlp::Head::Linear, rng);
  n.high_policy_target = n.high_policy.clone_frozen();
  n.high_q1 = Mlp(state_width + goal_dims, q_hidden, 1, Activation::Relu, Mlp::Head::Linear, rng);
  n.high_q2 = Mlp(state_width + goal_dims, q_hidden, 1, Activation::Relu, Mlp::Head::Linear, rng);
  n.high_q1_target = n.high_q1.clone_frozen();
  n.high_q2_target = n.high_q2.clone_frozen();
  return n;
}

std::vector<Tensor> HiroNets::low_q_params() const {
  std::vector<Tensor> out = low_q1.params();
  for (Tensor& t : low_q2.params()) out.push_back(t);
  return out;
}

std::vector<Tensor> HiroNets::high_q_params() const {
  std::vector<Tensor> out = high_q1.params();
  for (Tensor& t : high_q2.params()) out.push_back(t);
  return out;
}

void HiroNets::collect_params(NamedParams& out) const {
  low_policy.collect_params("low_policy", out);
  low_policy_target.collect_params("low_policy_target", out);
  low_q1.collect_params("low_q1", out);
  low_q2.collect_params("low_q2", out);
  low_q1_target.collect_params("low_q1_target", out);
  low_q2_target.collect_params("low_q2_target", out);
  high_policy.collect_params("high_policy", out);
  high_policy_target.collect_params("high_policy_target", out);
  high_q1.collect_params("high_q1", out);
  high_q2.collect_params("high_q2", out);
  high_q1_target.collect_params("high_q1_target", out);
  high_q2_target.collect_params("high_q2_target", out);
}

double low_reward(const Eigen::VectorXd& s, const Eigen::VectorXd& g,
                  const Eigen::VectorXd& s_next) {
  if (g.size() > s.size())
    throw std::invalid_argument("low_reward: goal wider than state");
  Eigen::VectorXd diff = s.head(g.size()) + g - s_next.head(g.size());
  return -diff.norm();
}

Eigen::VectorXd goal_transition(const Eigen::VectorXd& s, const Eigen::VectorXd& g,
                                const Eigen::VectorXd& s_next) {
  if (g.size() > s.size())
    throw std::invalid_argument("goal_transition: goal wider than state");
  return s.head(g.size()) + g - s_next.head(g.size());
}

Tensor high_action_graph(const Mlp& policy, const Matrix& states, double goal_bound, bool frozen) {
  return scale(tanh(policy.forward(Tensor::constant(states), frozen)), goal_bound);
}

LowBatch assemble_low_batch(const std::vector<LowTransition>& transitions) {
  if (transitions.empty()) throw std::invalid_argument("assemble_low_batch: empty batch");
  const Index b = static_cast<Index>(transitions.size());
  const Index s = transitions[0].s.size();
  const Index gd = transitions[0].g.size();
  const Index a = transitions[0].a.size();
  const Index k = transitions[0].prim_mu.rows();
  LowBatch out;
  out.states.resize(b, s);
  out.goals.resize(b, gd);
  out.actions.resize(b, a);
  out.next_states.resize(b, s);
  out.next_goals.resize(b, gd);
  out.rewards.resize(b);
  out.dones.resize(b);
  out.prim.mu.assign(static_cast<std::size_t>(k), Matrix(b, a));
  out.prim.sigma.assign(static_cast<std::size_t>(k), Matrix(b, a));
  out.prim_next.mu.assign(static_cast<std::size_t>(k), Matrix(b, a));
  out.prim_next.sigma.assign(static_cast<std::size_t>(k), Matrix(b, a));
  for (Index r = 0; r < b; ++r) {
    const LowTransition& t = transitions[static_cast<std::size_t>(r)];
    out.states.row(r) = t.s.transpose();
    out.goals.row(r) = t.g.transpose();
    out.actions.row(r) = t.a.transpose();
    out.next_states.row(r) = t.s_next.transpose();
    out.next_goals.row(r) = t.g_next.transpose();
    out.rewards[r] = low_reward(t.s, t.g, t.s_next);
    out.dones[r] = t.done;
    for (Index i = 0; i < k; ++i) {
      out.prim.mu[static_cast<std::size_t>(i)].row(r) = t.prim_mu.row(i);
      out.prim.sigma[static_cast<std::size_t>(i)].row(r) = t.prim_sigma.row(i);
      out.prim_next.mu[static_cast<std::size_t>(i)].row(r) = t.prim_mu_next.row(i);
      out.prim_next.sigma[static_cast<std::size_t>(i)].row(r) = t.prim_sigma_next.row(i);
    }
  }
  return out;
}

namespace {

Matrix hstack(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

}  // namespace

Tensor low_q_loss(const LowBatch& batch, const HiroNets& nets, const HiroConfig& cfg,
                  double action_bound, const Matrix& smoothing_noise) {
  if (batch.size() == 0) throw std::invalid_argument("low_q_loss: empty batch");
  Matrix targets(batch.size(), 1);
  {
    autograd::NoGradGuard guard;
    Matrix sg_next = hstack(batch.next_states, batch.next_goals);
    Tensor a_next = nets.low_policy_target.deterministic_action_batch(sg_next, batch.prim_next);
    Matrix noise = smoothing_noise.cwiseMax(-cfg.smooth_clip).cwiseMin(cfg.smooth_clip);
    Matrix a_smoothed =
        (a_next.value() + noise).cwiseMax(-action_bound).cwiseMin(action_bound);
    Tensor sga = Tensor::constant(hstack(sg_next, a_smoothed));
    Tensor qmin = minimum(nets.low_q1_target.forward(sga), nets.low_q2_target.forward(sga));
    for (Index r = 0; r < batch.size(); ++r)
      targets(r, 0) =
          batch.rewards[r] + cfg.gamma * (1.0 - batch.dones[r]) * qmin.value()(r, 0);
  }
  Tensor sga = Tensor::constant(hstack(hstack(batch.states, batch.goals), batch.actions));
  Tensor t = Tensor::constant(targets);
  Tensor l1 = scale(mean_all(square(sub(nets.low_q1.forward(sga), t))), 0.5);
  Tensor l2 = scale(mean_all(square(sub(nets.low_q2.forward(sga), t))), 0.5);
  return add(l1, l2);
}

Tensor low_actor_loss(const LowBatch& batch, const HiroNets& nets) {
  if (batch.size() == 0) throw std::invalid_argument("low_actor_loss: empty batch");
  Matrix sg = hstack(batch.states, batch.goals);
  Tensor a = nets.low_policy.deterministic_action_batch(sg, batch.prim);
  Tensor sga = concat_cols(std::vector<Tensor>{Tensor::constant(sg), a});
  return neg(mean_all(nets.low_q1.forward(sga, /*frozen=*/true)));
}

Tensor high_q_loss(const HighBatch& batch, const HiroNets& nets, const HiroConfig& cfg,
                   const Matrix& smoothing_noise) {
  if (batch.size() == 0) throw std::invalid_argument("high_q_loss: empty batch");
  Matrix targets(batch.size(), 1);
  {
    autograd::NoGradGuard guard;
    Tensor g_next = high_action_graph(nets.high_policy_target, batch.next_states, cfg.goal_bound);
    Matrix noise = smoothing_noise.cwiseMax(-cfg.high_smooth_clip).cwiseMin(cfg.high_smooth_clip);
    Matrix g_smoothed =
        (g_next.value() + noise).cwiseMax(-cfg.goal_bound).cwiseMin(cfg.goal_bound);
    Tensor sg = Tensor::constant(hstack(batch.next_states, g_smoothed));
    Tensor qmin = minimum(nets.high_q1_target.forward(sg), nets.high_q2_target.forward(sg));
    for (Index r = 0; r < batch.size(); ++r)
      targets(r, 0) =
          batch.reward_sums[r] + cfg.gamma * (1.0 - batch.dones[r]) * qmin.value()(r, 0);
  }
  Tensor sg = Tensor::constant(hstack(batch.states, batch.goals));
  Tensor t = Tensor::constant(targets);
  Tensor l1 = scale(mean_all(square(sub(nets.high_q1.forward(sg), t))), 0.5);
  Tensor l2 = scale(mean_all(square(sub(nets.high_q2.forward(sg), t))), 0.5);
  return add(l1, l2);
}

Tensor high_actor_loss(const HighBatch& batch, const HiroNets& nets, const HiroConfig& cfg) {
  if (batch.size() == 0) throw std::invalid_argument("high_actor_loss: empty batch");
  Tensor g = high_action_graph(nets.high_policy, batch.states, cfg.goal_bound);
  Tensor sg = concat_cols(std::vector<Tensor>{Tensor::constant(batch.states), g});
  return neg(mean_all(nets.high_q1.forward(sg, /*frozen=*/true)));
}

std::size_t pick_best_candidate(const std::vector<double>& scores) {
  if (scores.empty()) throw std::invalid_argument("pick_best_candidate: no scores");
  std::size_t best = 0;
  double best_score = scores[0];
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > best_score) {
      best_score = scores[i];
      best = i;
    }
  }
  return best;
}

Eigen::VectorXd relabel_goal(const HighTransition& segment, const CompositePolicy& low_policy,
                             const Ensemble& ensemble, Index shat_width, const HiroConfig& cfg,
                             Rng& rng) {
  if (segment.states.size() < 2 || segment.actions.empty() ||
      segment.states.size() != segment.actions.size() + 1)
    throw std::invalid_argument("relabel_goal: segment is missing its stored state/action sequence");
  const Index gd = segment.g_original.size();

  std::vector<Eigen::VectorXd> candidates;
  candidates.push_back(segment.g_original);
  Eigen::VectorXd achieved = segment.s_end.head(gd) - segment.s_begin.head(gd);
  candidates.push_back(achieved.cwiseMax(-cfg.goal_bound).cwiseMin(cfg.goal_bound));
  double sigma = 0.5 * cfg.goal_bound;
  for (int i = 2; i < cfg.relabel_candidates; ++i) {
    Eigen::VectorXd draw(gd);
    for (Index j = 0; j < gd; ++j) draw[j] = achieved[j] + sigma * normal(rng);
    candidates.push_back(draw.cwiseMax(-cfg.goal_bound).cwiseMin(cfg.goal_bound));
  }

  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const Eigen::VectorXd& cand : candidates) {
    Eigen::VectorXd g = cand;
    double score = 0.0;
    for (std::size_t k = 0; k < segment.actions.size(); ++k) {
      const Eigen::VectorXd& s = segment.states[k];
      std::vector<GaussianAction> prims = ensemble_act(ensemble, strip_goal(s, shat_width));
      Eigen::VectorXd sg(s.size() + gd);
      sg << s, g;
      MixtureDistribution dist = low_policy.distribution(sg, prims);
      score += mixture_log_prob(dist, segment.actions[k]);
      g = goal_transition(s, g, segment.states[k + 1]);
    }
    scores.push_back(score);
  }
  return candidates[pick_best_candidate(scores)];
}

HiroTrainer::HiroTrainer(PointEnv env, Ensemble ensemble, HiroNets nets, HiroConfig cfg,
                         std::uint64_t seed)
    : env_(std::move(env)),
      ensemble_(std::move(ensemble)),
      nets_(std::move(nets)),
      cfg_(cfg),
      low_replay_(cfg.replay_capacity),
      high_replay_(std::max<std::size_t>(cfg.replay_capacity / std::max(cfg.horizon_c, 1), 1)),
      env_rng_(make_stream(seed, "hiro/env")),
      warmup_rng_(make_stream(seed, "hiro/warmup")),
      goal_rng_(make_stream(seed, "hiro/goal")),
      action_rng_(make_stream(seed, "hiro/action")),
      low_batch_rng_(make_stream(seed, "hiro/low_batch")),
      high_batch_rng_(make_stream(seed, "hiro/high_batch")),
      relabel_rng_(make_stream(seed, "hiro/relabel")),
      smooth_low_rng_(make_stream(seed, "hiro/smooth_low")),
      smooth_high_rng_(make_stream(seed, "hiro/smooth_high")),
      adam_low_q_({cfg.learning_rate}),
      adam_low_pi_({cfg.learning_rate}),
      adam_high_q_({cfg.learning_rate}),
      adam_high_pi_({cfg.learning_rate}) {
  low_q_params_ = nets_.low_q_params();
  low_pi_params_ = nets_.low_policy.params();
  high_q_params_ = nets_.high_q_params();
  high_pi_params_ = nets_.high_policy.params();
  low_q_target_params_ = nets_.low_q1_target.params();
  for (Tensor& t : nets_.low_q2_target.params()) low_q_target_params_.push_back(t);
  low_pi_target_params_ = nets_.low_policy_target.params();
  high_q_target_params_ = nets_.high_q1_target.params();
  for (Tensor& t : nets_.high_q2_target.params()) high_q_target_params_.push_back(t);
  high_pi_target_params_ = nets_.high_policy_target.params();

  obs_ = env_.reset(env_rng_);
  goal_ = sample_goal(obs_.s);
  begin_segment();
}

Eigen::VectorXd HiroTrainer::sample_goal(const Eigen::VectorXd& s) {
  Eigen::VectorXd g(kGoalDims);
  if (total_steps_ < cfg_.warmup_steps) {
    for (Index j = 0; j < g.size(); ++j) g[j] = uniform(warmup_rng_, -cfg_.goal_bound, cfg_.goal_bound);
    return g;
  }
  autograd::NoGradGuard guard;
  Matrix row(1, s.size());
  row.row(0) = s.transpose();
  Tensor out = high_action_graph(nets_.high_policy, row, cfg_.goal_bound);
  for (Index j = 0; j < g.size(); ++j) {
    g[j] = out.value()(0, j) + cfg_.high_noise * normal(goal_rng_);
    g[j] = std::clamp(g[j], -cfg_.goal_bound, cfg_.goal_bound);
  }
  return g;
}

void HiroTrainer::begin_segment() {
  HighTransition seg;
  seg.s_begin = obs_.s;
  seg.g_original = goal_;
  seg.states.push_back(obs_.s);
  segment_ = std::move(seg);
}

void HiroTrainer::finish_segment(const Eigen::VectorXd& s_end, double done) {
  if (!segment_ || segment_->actions.empty()) {
    segment_.reset();
    return;
  }
  segment_->s_end = s_end;
  segment_->done = done;
  high_replay_.push(std::move(*segment_));
  segment_.reset();
}

void HiroTrainer::env_step() {
  Eigen::VectorXd shat = strip_goal(obs_.s, env_.spec().shat_width);
  std::vector<GaussianAction> prims = ensemble_act(ensemble_, shat);
  const Index a_dim = env_.spec().action_dim;
  const double bound = env_.spec().action_bound;

  Eigen::VectorXd action(a_dim);
  if (total_steps_ < cfg_.warmup_steps) {
    for (Index j = 0; j < a_dim; ++j) action[j] = uniform(warmup_rng_, -bound, bound);
  } else {
    Eigen::VectorXd sg(obs_.s.size() + goal_.size());
    sg << obs_.s, goal_;
    CompositePolicy::RolloutResult res =
        nets_.low_policy.act(sg, prims, PolicyMode::Deterministic, action_rng_);
    action = res.action;
    for (Index j = 0; j < a_dim; ++j) action[j] += cfg_.low_noise * normal(action_rng_);
    action = action.cwiseMax(-bound).cwiseMin(bound);
  }

  StepResult res = env_.step(action);
  Eigen::VectorXd g_next = goal_transition(obs_.s, goal_, res.obs.s);
  double done_mask = res.info.goal_reached ? 1.0 : 0.0;

  LowTransition t;
  t.s = obs_.s;
  t.g = goal_;
  t.a = action;
  t.s_next = res.obs.s;
  t.g_next = g_next;
  const Index k = static_cast<Index>(prims.size());
  t.prim_mu.resize(k, a_dim);
  t.prim_sigma.resize(k, a_dim);
  for (Index i = 0; i < k; ++i) {
    t.prim_mu.row(i) = prims[static_cast<std::size_t>(i)].mu.transpose();
    t.prim_sigma.row(i) = prims[static_cast<std::size_t>(i)].sigma.transpose();
  }
  std::vector<GaussianAction> prims_next =
      ensemble_act(ensemble_, strip_goal(res.obs.s, env_.spec().shat_width));
  t.prim_mu_next.resize(k, a_dim);
  t.prim_sigma_next.resize(k, a_dim);
  for (Index i = 0; i < k; ++i) {
    t.prim_mu_next.row(i) = prims_next[static_cast<std::size_t>(i)].mu.transpose();
    t.prim_sigma_next.row(i) = prims_next[static_cast<std::size_t>(i)].sigma.transpose();
  }
  t.done = done_mask;
  low_replay_.push(std::move(t));

  segment_->reward_sum += res.reward;
  segment_->states.push_back(res.obs.s);
  segment_->actions.push_back(action);

  episode_return_ += res.reward;
  ++total_steps_;

  bool segment_full = static_cast<int>(segment_->actions.size()) >= cfg_.horizon_c;

  if (res.done) {
    finish_segment(res.obs.s, done_mask);
    EpisodeStats ep;
    ep.step = total_steps_;
    ep.episode_return = episode_return_;
    ep.final_distance = env_.distance_to_goal();
    ep.normalized_final_distance = ep.final_distance / env_.initial_distance();
    ep.success = res.info.goal_reached ? 1 : 0;
    episodes_.push_back(ep);
    episode_return_ = 0.0;
    obs_ = env_.reset(env_rng_);
    goal_ = sample_goal(obs_.s);
    begin_segment();
  } else {
    obs_ = res.obs;
    if (segment_full) {
      finish_segment(obs_.s, 0.0);
      goal_ = sample_goal(obs_.s);
      begin_segment();
    } else {
      goal_ = g_next;
    }
  }
}

void HiroTrainer::low_update() {
  LowBatch batch = assemble_low_batch(low_replay_.sample(cfg_.batch, low_batch_rng_));
  Matrix noise(batch.size(), env_.spec().action_dim);
  for (Index r = 0; r < noise.rows(); ++r)
    for (Index c = 0; c < noise.cols(); ++c) noise(r, c) = cfg_.smooth_noise * normal(smooth_low_rng_);

  Tensor ql = low_q_loss(batch, nets_, cfg_, env_.spec().action_bound, noise);
  if (!std::isfinite(ql.item())) throw NumericalError("low q loss is not finite");
  backward(ql);
  adam_low_q_.apply(low_q_params_);
  ++low_critic_updates_;

  if (low_critic_updates_ % cfg_.target_update_interval == 0) {
    Tensor al = low_actor_loss(batch, nets_);
    if (!std::isfinite(al.item())) throw NumericalError("low actor loss is not finite");
    backward(al);
    adam_low_pi_.apply(low_pi_params_);
    polyak_update(low_q_target_params_, low_q_params_, cfg_.tau);
    polyak_update(low_pi_target_params_, low_pi_params_, cfg_.tau);
  }
}

void HiroTrainer::high_update() {
  if (high_replay_.size() == 0) return;
  std::vector<HighTransition> segments = high_replay_.sample(cfg_.high_batch, high_batch_rng_);

  HighBatch batch;
  const Index b = static_cast<Index>(segments.size());
  const Index s_dim = segments[0].s_begin.size();
  batch.states.resize(b, s_dim);
  batch.goals.resize(b, kGoalDims);
  batch.next_states.resize(b, s_dim);
  batch.reward_sums.resize(b);
  batch.dones.resize(b);
  for (Index r = 0; r < b; ++r) {
    HighTransition& seg = segments[static_cast<std::size_t>(r)];
    Eigen::VectorXd relabeled =
        relabel_goal(seg, nets_.low_policy, ensemble_, env_.spec().shat_width, cfg_, relabel_rng_);
    batch.states.row(r) = seg.s_begin.transpose();
    batch.goals.row(r) = relabeled.transpose();
    batch.next_states.row(r) = seg.s_end.transpose();
    batch.reward_sums[r] = seg.reward_sum;
    batch.dones[r] = seg.done;
  }

  Matrix noise(b, kGoalDims);
  for (Index r = 0; r < b; ++r)
    for (Index c = 0; c < kGoalDims; ++c) noise(r, c) = cfg_.high_smooth_noise * normal(smooth_high_rng_);

  Tensor ql = high_q_loss(batch, nets_, cfg_, noise);
  if (!std::isfinite(ql.item())) throw NumericalError("high q loss is not finite");
  backward(ql);
  adam_high_q_.apply(high_q_params_);
  ++high_critic_updates_;

  if (high_critic_updates_ % cfg_.target_update_interval == 0) {
    Tensor al = high_actor_loss(batch, nets_, cfg_);
    if (!std::isfinite(al.item())) throw NumericalError("high actor loss is not finite");
    backward(al);
    adam_high_pi_.apply(high_pi_params_);
    polyak_update(high_q_target_params_, high_q_params_, cfg_.tau);
    polyak_update(high_pi_target_params_, high_pi_params_, cfg_.tau);
  }
}

void HiroTrainer::run(std::int64_t steps, const std::function<void(std::int64_t)>& after_step) {
  for (std::int64_t i = 0; i < steps; ++i) {
    env_step();
    if (total_steps_ > cfg_.warmup_steps && total_steps_ % cfg_.update_every == 0) low_update();
    if (total_steps_ > cfg_.warmup_steps && total_steps_ % cfg_.horizon_c == 0) high_update();
    if (after_step) after_step(total_steps_);
  }
}

// ---- checkpointing ----

namespace {

void append_vec(std::vector<double>& out, const Eigen::VectorXd& v) {
  out.insert(out.end(), v.data(), v.data() + v.size());
}

Eigen::VectorXd take_vec(const std::vector<double>& flat, std::size_t& off, Index n) {
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = flat.at(off++);
  return v;
}

void append_mat(std::vector<double>& out, const Matrix& m) {
  out.insert(out.end(), m.data(), m.data() + m.size());
}

Matrix take_mat(const std::vector<double>& flat, std::size_t& off, Index r, Index c) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = flat.at(off++);
  return m;
}

void save_adam(CheckpointWriter& w, const std::string& prefix, const AdamState& a) {
  w.extra()[prefix + "_steps"] = a.step_count();
  std::vector<double> flat;
  for (const Matrix& m : a.first_moment()) flat.insert(flat.end(), m.data(), m.data() + m.size());
  for (const Matrix& m : a.second_moment()) flat.insert(flat.end(), m.data(), m.data() + m.size());
  w.add_blob(prefix + "_moments", flat);
}

void load_adam(const CheckpointReader& r, const std::string& prefix, AdamState& a,
               const std::vector<Tensor>& params) {
  a.set_step_count(r.extra().at(prefix + "_steps").get<std::int64_t>());
  std::vector<double> flat = r.blob(prefix + "_moments");
  auto& m1 = a.first_moment();
  auto& m2 = a.second_moment();
  m1.clear();
  m2.clear();
  std::size_t off = 0;
  for (int half = 0; half < 2; ++half)
    for (const Tensor& p : params)
      (half == 0 ? m1 : m2).push_back(take_mat(flat, off, p.rows(), p.cols()));
}

}  // namespace

void HiroTrainer::save(CheckpointWriter& w) const {
  NamedParams named;
  nets_.collect_params(named);
  w.add_params(named);

  std::vector<double> low_flat;
  for (std::size_t i = 0; i < low_replay_.size(); ++i) {
    const LowTransition& t = low_replay_.at(i);
    append_vec(low_flat, t.s);
    append_vec(low_flat, t.g);
    append_vec(low_flat, t.a);
    append_vec(low_flat, t.s_next);
    append_vec(low_flat, t.g_next);
    append_mat(low_flat, t.prim_mu);
    append_mat(low_flat, t.prim_sigma);
    append_mat(low_flat, t.prim_mu_next);
    append_mat(low_flat, t.prim_sigma_next);
    low_flat.push_back(t.done);
  }
  w.add_blob("low_replay", low_flat);

  std::vector<double> high_flat;
  for (std::size_t i = 0; i < high_replay_.size(); ++i) {
    const HighTransition& t = high_replay_.at(i);
    high_flat.push_back(static_cast<double>(t.actions.size()));
    append_vec(high_flat, t.s_begin);
    append_vec(high_flat, t.g_original);
    high_flat.push_back(t.reward_sum);
    append_vec(high_flat, t.s_end);
    high_flat.push_back(t.done);
    for (const Eigen::VectorXd& s : t.states) append_vec(high_flat, s);
    for (const Eigen::VectorXd& a : t.actions) append_vec(high_flat, a);
  }
  w.add_blob("high_replay", high_flat);

  if (segment_) {
    std::vector<double> seg;
    seg.push_back(static_cast<double>(segment_->actions.size()));
    append_vec(seg, segment_->s_begin);
    append_vec(seg, segment_->g_original);
    seg.push_back(segment_->reward_sum);
    seg.push_back(segment_->done);
    for (const Eigen::VectorXd& s : segment_->states) append_vec(seg, s);
    for (const Eigen::VectorXd& a : segment_->actions) append_vec(seg, a);
    w.add_blob("segment", seg);
  }

  save_adam(w, "adam_low_q", adam_low_q_);
  save_adam(w, "adam_low_pi", adam_low_pi_);
  save_adam(w, "adam_high_q", adam_high_q_);
  save_adam(w, "adam_high_pi", adam_high_pi_);

  auto& e = w.extra();
  e["algo"] = "hiro";
  e["total_steps"] = total_steps_;
  e["low_critic_updates"] = low_critic_updates_;
  e["high_critic_updates"] = high_critic_updates_;
  e["episode_return"] = episode_return_;
  e["low_replay_size"] = low_replay_.size();
  e["low_replay_cursor"] = low_replay_.cursor();
  e["high_replay_size"] = high_replay_.size();
  e["high_replay_cursor"] = high_replay_.cursor();
  e["env"] = env_.state_to_json();
  e["obs"] = std::vector<double>(obs_.s.data(), obs_.s.data() + obs_.s.size());
  e["goal"] = std::vector<double>(goal_.data(), goal_.data() + goal_.size());
  e["has_segment"] = segment_.has_value();
  e["rng"] = {{"env", rng_state_string(env_rng_)},
              {"warmup", rng_state_string(warmup_rng_)},
              {"goal", rng_state_string(goal_rng_)},
              {"action", rng_state_string(action_rng_)},
              {"low_batch", rng_state_string(low_batch_rng_)},
              {"high_batch", rng_state_string(high_batch_rng_)},
              {"relabel", rng_state_string(relabel_rng_)},
              {"smooth_low", rng_state_string(smooth_low_rng_)},
              {"smooth_high", rng_state_string(smooth_high_rng_)}};
  nlohmann::json eps = nlohmann::json::array();
  for (const EpisodeStats& ep : episodes_)
    eps.push_back({ep.step, ep.episode_return, ep.final_distance, ep.normalized_final_distance,
                   ep.success});
  e["episodes"] = std::move(eps);
}

void HiroTrainer::load(const CheckpointReader& r) {
  NamedParams named;
  nets_.collect_params(named);
  r.load_params(named);

  const auto& e = r.extra();
  total_steps_ = e.at("total_steps").get<std::int64_t>();
  low_critic_updates_ = e.at("low_critic_updates").get<std::int64_t>();
  high_critic_updates_ = e.at("high_critic_updates").get<std::int64_t>();
  episode_return_ = e.at("episode_return").get<double>();

  const Index s_dim = env_.spec().state_width();
  const Index a_dim = env_.spec().action_dim;
  const Index k = static_cast<Index>(ensemble_.size());

  {
    std::vector<double> flat = r.blob("low_replay");
    std::size_t n = e.at("low_replay_size").get<std::size_t>();
    std::vector<LowTransition> items;
    items.reserve(n);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
      LowTransition t;
      t.s = take_vec(flat, off, s_dim);
      t.g = take_vec(flat, off, kGoalDims);
      t.a = take_vec(flat, off, a_dim);
      t.s_next = take_vec(flat, off, s_dim);
      t.g_next = take_vec(flat, off, kGoalDims);
      t.prim_mu = take_mat(flat, off, k, a_dim);
      t.prim_sigma = take_mat(flat, off, k, a_dim);
      t.prim_mu_next = take_mat(flat, off, k, a_dim);
      t.prim_sigma_next = take_mat(flat, off, k, a_dim);
      t.done = flat.at(off++);
      items.push_back(std::move(t));
    }
    low_replay_.restore(std::move(items), e.at("low_replay_cursor").get<std::size_t>());
  }

  auto read_segment = [&](const std::vector<double>& flat, std::size_t& off, bool with_end) {
    HighTransition t;
    auto m = static_cast<std::size_t>(flat.at(off++));
    t.s_begin = take_vec(flat, off, s_dim);
    t.g_original = take_vec(flat, off, kGoalDims);
    t.reward_sum = flat.at(off++);
    if (with_end) t.s_end = take_vec(flat, off, s_dim);
    t.done = flat.at(off++);
    for (std::size_t j = 0; j < m + 1; ++j) t.states.push_back(take_vec(flat, off, s_dim));
    for (std::size_t j = 0; j < m; ++j) t.actions.push_back(take_vec(flat, off, a_dim));
    return t;
  };

  {
    std::vector<double> flat = r.blob("high_replay");
    std::size_t n = e.at("high_replay_size").get<std::size_t>();
    std::vector<HighTransition> items;
    items.reserve(n);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) items.push_back(read_segment(flat, off, true));
    high_replay_.restore(std::move(items), e.at("high_replay_cursor").get<std::size_t>());
  }

  segment_.reset();
  if (e.at("has_segment").get<bool>()) {
    std::vector<double> flat = r.blob("segment");
    std::size_t off = 0;
    segment_ = read_segment(flat, off, false);
  }

  load_adam(r, "adam_low_q", adam_low_q_, low_q_params_);
  load_adam(r, "adam_low_pi", adam_low_pi_, low_pi_params_);
  load_adam(r, "adam_high_q", adam_high_q_, high_q_params_);
  load_adam(r, "adam_high_pi", adam_high_pi_, high_pi_params_);

  env_.state_from_json(e.at("env"));
  std::vector<double> obs = e.at("obs").get<std::vector<double>>();
  obs_.s = Eigen::Map<Eigen::VectorXd>(obs.data(), static_cast<Index>(obs.size()));
  obs_.shat_width = env_.spec().shat_width;
  std::vector<double> goal = e.at("goal").get<std::vector<double>>();
  goal_ = Eigen::Map<Eigen::VectorXd>(goal.data(), static_cast<Index>(goal.size()));

  const auto& rngs = e.at("rng");
  rng_set_state(env_rng_, rngs.at("env").get<std::string>());
  rng_set_state(warmup_rng_, rngs.at("warmup").get<std::string>());
  rng_set_state(goal_rng_, rngs.at("goal").get<std::string>());
  rng_set_state(action_rng_, rngs.at("action").get<std::string>());
  rng_set_state(low_batch_rng_, rngs.at("low_batch").get<std::string>());
  rng_set_state(high_batch_rng_, rngs.at("high_batch").get<std::string>());
  rng_set_state(relabel_rng_, rngs.at("relabel").get<std::string>());
  rng_set_state(smooth_low_rng_, rngs.at("smooth_low").get<std::string>());
  rng_set_state(smooth_high_rng_, rngs.at("smooth_high").get<std::string>());

  episodes_.clear();
  for (const auto& row : e.at("episodes")) {
    EpisodeStats ep;
    ep.step = row[0].get<std::int64_t>();
    ep.episode_return = row[1].get<double>();
    ep.final_distance = row[2].get<double>();
    ep.normalized_final_distance = row[3].get<double>();
    ep.success = row[4].get<int>();
    episodes_.push_back(ep);
  }
}

}  // namespace copo
