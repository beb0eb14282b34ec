#include "copo/sac.hpp"

#include <cmath>

namespace copo {

SacNets SacNets::make(const CompositePolicy::Config& policy_cfg,
                      const std::vector<Index>& value_hidden, const std::vector<Index>& q_hidden,
                      Rng& rng) {
  SacNets n;
  n.policy = CompositePolicy(policy_cfg, rng);
  Index s = policy_cfg.state_width;
  Index a = policy_cfg.action_dim;
  n.value = Mlp(s, value_hidden, 1, Activation::Relu, Mlp::Head::Linear, rng);
  n.value_target = n.value.clone_frozen();
  n.q1 = Mlp(s + a, q_hidden, 1, Activation::Relu, Mlp::Head::Linear, rng);
  n.q2 = Mlp(s + a, q_hidden, 1, Activation::Relu, Mlp::Head::Linear, rng);
  return n;
}

std::vector<Tensor> SacNets::q_params() const {
  std::vector<Tensor> out = q1.params();
  for (Tensor& t : q2.params()) out.push_back(t);
  return out;
}

void SacNets::collect_params(NamedParams& out) const {
  policy.collect_params("policy", out);
  value.collect_params("value", out);
  value_target.collect_params("value_target", out);
  q1.collect_params("q1", out);
  q2.collect_params("q2", out);
}

SacBatch assemble_batch(const std::vector<Transition>& transitions) {
  if (transitions.empty()) throw std::invalid_argument("assemble_batch: empty batch");
  const Index b = static_cast<Index>(transitions.size());
  const Index s = transitions[0].s.size();
  const Index a = transitions[0].a.size();
  const Index k = transitions[0].prim_mu.rows();
  SacBatch out;
  out.states.resize(b, s);
  out.actions.resize(b, a);
  out.next_states.resize(b, s);
  out.rewards.resize(b);
  out.dones.resize(b);
  out.prim.mu.assign(static_cast<std::size_t>(k), Matrix(b, a));
  out.prim.sigma.assign(static_cast<std::size_t>(k), Matrix(b, a));
  for (Index r = 0; r < b; ++r) {
    const Transition& t = transitions[static_cast<std::size_t>(r)];
    out.states.row(r) = t.s.transpose();
    out.actions.row(r) = t.a.transpose();
    out.next_states.row(r) = t.s_next.transpose();
    out.rewards[r] = t.r;
    out.dones[r] = t.done;
    for (Index i = 0; i < k; ++i) {
      out.prim.mu[static_cast<std::size_t>(i)].row(r) = t.prim_mu.row(i);
      out.prim.sigma[static_cast<std::size_t>(i)].row(r) = t.prim_sigma.row(i);
    }
  }
  return out;
}

double bellman_target(double r, const Eigen::VectorXd& s_next, double done, const SacNets& nets,
                      const SacConfig& cfg) {
  autograd::NoGradGuard guard;
  Matrix row(1, s_next.size());
  row.row(0) = s_next.transpose();
  double v = nets.value_target.forward(Tensor::constant(row)).value()(0, 0);
  return r + cfg.gamma * (1.0 - done) * v;
}

Tensor q_loss(const SacBatch& batch, const SacNets& nets, const SacConfig& cfg) {
  if (batch.size() == 0) throw std::invalid_argument("q_loss: empty batch");
  Matrix targets(batch.size(), 1);
  {
    autograd::NoGradGuard guard;
    Tensor v_next = nets.value_target.forward(Tensor::constant(batch.next_states));
    for (Index r = 0; r < batch.size(); ++r)
      targets(r, 0) = batch.rewards[r] + cfg.gamma * (1.0 - batch.dones[r]) * v_next.value()(r, 0);
  }
  Tensor sa = concat_cols(std::vector<Tensor>{Tensor::constant(batch.states),
                                              Tensor::constant(batch.actions)});
  Tensor t = Tensor::constant(targets);
  Tensor l1 = scale(mean_all(square(sub(nets.q1.forward(sa), t))), 0.5);
  Tensor l2 = scale(mean_all(square(sub(nets.q2.forward(sa), t))), 0.5);
  return add(l1, l2);
}

Tensor value_loss(const SacBatch& batch, const SacNets& nets, const SacConfig& cfg, Rng& rng) {
  if (batch.size() == 0) throw std::invalid_argument("value_loss: empty batch");
  (void)cfg;
  Matrix vhat(batch.size(), 1);
  {
    autograd::NoGradGuard guard;
    PolicyNoise noise = draw_policy_noise(batch.size(), batch.prim.count(),
                                          batch.actions.cols(), rng);
    auto fw = nets.policy.forward_batch(batch.states, batch.prim, PolicyMode::Stochastic, noise);
    Tensor sa = concat_cols(std::vector<Tensor>{Tensor::constant(batch.states), fw.action});
    Tensor qmin = minimum(nets.q1.forward(sa), nets.q2.forward(sa));
    vhat = qmin.value() - fw.log_prob.value();
  }
  Tensor v = nets.value.forward(Tensor::constant(batch.states));
  return scale(mean_all(square(sub(v, Tensor::constant(vhat)))), 0.5);
}

Tensor policy_loss(const SacBatch& batch, const SacNets& nets, const SacConfig& cfg,
                   const PolicyNoise& noise) {
  if (batch.size() == 0) throw std::invalid_argument("policy_loss: empty batch");
  auto fw = nets.policy.forward_batch(batch.states, batch.prim, PolicyMode::Stochastic, noise);
  Tensor sa = concat_cols(std::vector<Tensor>{Tensor::constant(batch.states), fw.action});
  Tensor qmin = minimum(nets.q1.forward(sa, /*frozen=*/true), nets.q2.forward(sa, /*frozen=*/true));
  return mean_all(sub(scale(fw.log_prob, cfg.entropy_coef), qmin));
}

SacTrainer::SacTrainer(PointEnv env, Ensemble ensemble, SacNets nets, SacConfig cfg,
                       std::uint64_t seed)
    : env_(std::move(env)),
      ensemble_(std::move(ensemble)),
      nets_(std::move(nets)),
      cfg_(cfg),
      replay_(cfg.replay_capacity),
      env_rng_(make_stream(seed, "sac/env")),
      warmup_rng_(make_stream(seed, "sac/warmup")),
      policy_rng_(make_stream(seed, "sac/policy")),
      batch_rng_(make_stream(seed, "sac/replay")),
      value_rng_(make_stream(seed, "sac/value")),
      loss_rng_(make_stream(seed, "sac/policy_loss")),
      adam_value_({cfg.learning_rate}),
      adam_q_({cfg.learning_rate}),
      adam_policy_({cfg.learning_rate}) {
  value_params_ = nets_.value_params();
  q_params_ = nets_.q_params();
  policy_params_ = nets_.policy_params();
  value_target_params_ = nets_.value_target.params();
  value_online_params_ = nets_.value.params();
  obs_ = env_.reset(env_rng_);
}

void SacTrainer::env_step() {
  Eigen::VectorXd shat = strip_goal(obs_.s, env_.spec().shat_width);
  std::vector<GaussianAction> prims = ensemble_act(ensemble_, shat);

  Eigen::VectorXd action(env_.spec().action_dim);
  if (total_steps_ < cfg_.warmup_steps) {
    for (Index j = 0; j < action.size(); ++j)
      action[j] = uniform(warmup_rng_, -env_.spec().action_bound, env_.spec().action_bound);
  } else {
    action = nets_.policy.act(obs_.s, prims, PolicyMode::Stochastic, policy_rng_).action;
  }

  Transition t;
  t.s = obs_.s;
  t.a = action;
  const Index k = static_cast<Index>(prims.size());
  const Index a_dim = env_.spec().action_dim;
  t.prim_mu.resize(k, a_dim);
  t.prim_sigma.resize(k, a_dim);
  for (Index i = 0; i < k; ++i) {
    t.prim_mu.row(i) = prims[static_cast<std::size_t>(i)].mu.transpose();
    t.prim_sigma.row(i) = prims[static_cast<std::size_t>(i)].sigma.transpose();
  }

  StepResult res = env_.step(action);
  t.r = res.reward;
  t.s_next = res.obs.s;
  t.done = res.info.goal_reached ? 1.0 : 0.0;
  replay_.push(std::move(t));

  episode_return_ += res.reward;
  ++total_steps_;

  if (res.done) {
    EpisodeStats ep;
    ep.step = total_steps_;
    ep.episode_return = episode_return_;
    ep.final_distance = env_.distance_to_goal();
    ep.normalized_final_distance = ep.final_distance / env_.initial_distance();
    ep.success = res.info.goal_reached ? 1 : 0;
    episodes_.push_back(ep);
    episode_return_ = 0.0;
    obs_ = env_.reset(env_rng_);
  } else {
    obs_ = res.obs;
  }
}

void SacTrainer::update_round() {
  for (int g = 0; g < cfg_.gradient_steps; ++g) {
    SacBatch batch = assemble_batch(replay_.sample(cfg_.batch, batch_rng_));

    Tensor vl = value_loss(batch, nets_, cfg_, value_rng_);
    if (!std::isfinite(vl.item())) throw NumericalError("value loss is not finite");
    backward(vl);
    adam_value_.apply(value_params_);

    Tensor ql = q_loss(batch, nets_, cfg_);
    if (!std::isfinite(ql.item())) throw NumericalError("q loss is not finite");
    backward(ql);
    adam_q_.apply(q_params_);

    PolicyNoise noise = draw_policy_noise(batch.size(), batch.prim.count(),
                                          batch.actions.cols(), loss_rng_);
    Tensor pl = policy_loss(batch, nets_, cfg_, noise);
    if (!std::isfinite(pl.item())) throw NumericalError("policy loss is not finite");
    backward(pl);
    adam_policy_.apply(policy_params_);

    ++update_rounds_;
    if (update_rounds_ % cfg_.target_update_interval == 0)
      polyak_update(value_target_params_, value_online_params_, cfg_.tau);
  }
}

void SacTrainer::run(std::int64_t steps, const std::function<void(std::int64_t)>& after_step) {
  for (std::int64_t i = 0; i < steps; ++i) {
    env_step();
    if (total_steps_ > cfg_.warmup_steps && total_steps_ % cfg_.update_every == 0) update_round();
    if (after_step) after_step(total_steps_);
  }
}

namespace {

std::vector<double> transition_flat(const Transition& t) {
  std::vector<double> row;
  auto push_vec = [&](const Eigen::VectorXd& v) {
    for (Index i = 0; i < v.size(); ++i) row.push_back(v[i]);
  };
  auto push_mat = [&](const Matrix& m) {
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
  };
  push_vec(t.s);
  push_vec(t.a);
  push_mat(t.prim_mu);
  push_mat(t.prim_sigma);
  row.push_back(t.r);
  push_vec(t.s_next);
  row.push_back(t.done);
  return row;
}

Transition transition_unflat(const double* p, Index s_dim, Index a_dim, Index k) {
  Transition t;
  auto take_vec = [&](Index n) {
    Eigen::VectorXd v(n);
    for (Index i = 0; i < n; ++i) v[i] = *p++;
    return v;
  };
  auto take_mat = [&](Index r, Index c) {
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) m(i, j) = *p++;
    return m;
  };
  t.s = take_vec(s_dim);
  t.a = take_vec(a_dim);
  t.prim_mu = take_mat(k, a_dim);
  t.prim_sigma = take_mat(k, a_dim);
  t.r = *p++;
  t.s_next = take_vec(s_dim);
  t.done = *p++;
  return t;
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
  for (int half = 0; half < 2; ++half) {
    for (const Tensor& p : params) {
      Matrix m(p.rows(), p.cols());
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = flat.at(off++);
      (half == 0 ? m1 : m2).push_back(std::move(m));
    }
  }
}

}  // namespace

void SacTrainer::save(CheckpointWriter& w) const {
  NamedParams named;
  nets_.collect_params(named);
  w.add_params(named);

  std::vector<double> flat;
  for (std::size_t i = 0; i < replay_.size(); ++i) {
    std::vector<double> row = transition_flat(replay_.at(i));
    flat.insert(flat.end(), row.begin(), row.end());
  }
  w.add_blob("replay", flat);

  save_adam(w, "adam_value", adam_value_);
  save_adam(w, "adam_q", adam_q_);
  save_adam(w, "adam_policy", adam_policy_);

  auto& e = w.extra();
  e["algo"] = "sac";
  e["total_steps"] = total_steps_;
  e["update_rounds"] = update_rounds_;
  e["episode_return"] = episode_return_;
  e["replay_size"] = replay_.size();
  e["replay_cursor"] = replay_.cursor();
  e["env"] = env_.state_to_json();
  e["obs"] = std::vector<double>(obs_.s.data(), obs_.s.data() + obs_.s.size());
  e["rng"] = {{"env", rng_state_string(env_rng_)},     {"warmup", rng_state_string(warmup_rng_)},
              {"policy", rng_state_string(policy_rng_)}, {"replay", rng_state_string(batch_rng_)},
              {"value", rng_state_string(value_rng_)},   {"policy_loss", rng_state_string(loss_rng_)}};
  nlohmann::json eps = nlohmann::json::array();
  for (const EpisodeStats& ep : episodes_)
    eps.push_back({ep.step, ep.episode_return, ep.final_distance, ep.normalized_final_distance,
                   ep.success});
  e["episodes"] = std::move(eps);
}

void SacTrainer::load(const CheckpointReader& r) {
  NamedParams named;
  nets_.collect_params(named);
  r.load_params(named);

  const auto& e = r.extra();
  total_steps_ = e.at("total_steps").get<std::int64_t>();
  update_rounds_ = e.at("update_rounds").get<std::int64_t>();
  episode_return_ = e.at("episode_return").get<double>();

  Index s_dim = env_.spec().state_width();
  Index a_dim = env_.spec().action_dim;
  Index k = static_cast<Index>(ensemble_.size());
  std::size_t row_width = static_cast<std::size_t>(2 * s_dim + a_dim + 2 * k * a_dim + 2);
  std::vector<double> flat = r.blob("replay");
  std::size_t n = e.at("replay_size").get<std::size_t>();
  if (flat.size() != n * row_width) throw std::runtime_error("checkpoint: replay blob size mismatch");
  std::vector<Transition> items;
  items.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    items.push_back(transition_unflat(flat.data() + i * row_width, s_dim, a_dim, k));
  replay_.restore(std::move(items), e.at("replay_cursor").get<std::size_t>());

  load_adam(r, "adam_value", adam_value_, value_params_);
  load_adam(r, "adam_q", adam_q_, q_params_);
  load_adam(r, "adam_policy", adam_policy_, policy_params_);

  env_.state_from_json(e.at("env"));
  std::vector<double> obs = e.at("obs").get<std::vector<double>>();
  obs_.s = Eigen::Map<Eigen::VectorXd>(obs.data(), static_cast<Index>(obs.size()));
  obs_.shat_width = env_.spec().shat_width;

  rng_set_state(env_rng_, e.at("rng").at("env").get<std::string>());
  rng_set_state(warmup_rng_, e.at("rng").at("warmup").get<std::string>());
  rng_set_state(policy_rng_, e.at("rng").at("policy").get<std::string>());
  rng_set_state(batch_rng_, e.at("rng").at("replay").get<std::string>());
  rng_set_state(value_rng_, e.at("rng").at("value").get<std::string>());
  rng_set_state(loss_rng_, e.at("rng").at("policy_loss").get<std::string>());

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
