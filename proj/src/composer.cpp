#include "copo/composer.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace copo {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
}

ComposerVariant variant_from_string(const std::string& name) {
  if (name == "full") return ComposerVariant::Full;
  if (name == "no_attention") return ComposerVariant::NoAttention;
  if (name == "att_brnn_removed") return ComposerVariant::AttBrnnRemoved;
  if (name == "flat_baseline") return ComposerVariant::FlatBaseline;
  throw std::invalid_argument("unknown composer variant '" + name +
                              "', expected one of: full, no_attention, att_brnn_removed, flat_baseline");
}

std::string variant_to_string(ComposerVariant v) {
  switch (v) {
    case ComposerVariant::Full: return "full";
    case ComposerVariant::NoAttention: return "no_attention";
    case ComposerVariant::AttBrnnRemoved: return "att_brnn_removed";
    case ComposerVariant::FlatBaseline: return "flat_baseline";
  }
  return "?";
}

Tensor attention_logits(const AttentionParams& params, std::span<const Tensor> fwd_states,
                        std::span<const Tensor> bwd_states, const Tensor& h) {
  if (fwd_states.empty()) throw std::invalid_argument("attention_logits: no per-primitive states");
  if (fwd_states.size() != bwd_states.size())
    throw std::invalid_argument("attention_logits: state-count mismatch, " +
                                std::to_string(fwd_states.size()) + " forward vs " +
                                std::to_string(bwd_states.size()) + " backward");
  Tensor hd = matmul(h, params.wd);
  std::vector<Tensor> cols;
  cols.reserve(fwd_states.size());
  for (std::size_t i = 0; i < fwd_states.size(); ++i) {
    Tensor pre = add(add(matmul(fwd_states[i], params.wf), matmul(bwd_states[i], params.wb)), hd);
    cols.push_back(matmul(tanh(pre), params.w));  // B x 1
  }
  return concat_cols(cols);
}

MixtureWeights gumbel_weights(const Eigen::VectorXd& q, double temperature, PolicyMode mode,
                              Rng* rng) {
  if (!(temperature > 0.0)) throw std::invalid_argument("gumbel_weights: temperature must be positive");
  Eigen::VectorXd logits = q;
  if (mode == PolicyMode::Stochastic) {
    if (rng == nullptr) throw std::invalid_argument("gumbel_weights: stochastic mode needs an rng");
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits[i] += gumbel(*rng);
  }
  logits /= temperature;
  double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  MixtureWeights out;
  out.w = e / e.sum();
  return out;
}

Eigen::VectorXd mixture_sample(const MixtureDistribution& dist, Rng& rng) {
  if (dist.components.empty()) throw std::invalid_argument("mixture_sample: no components");
  if (dist.weights.w.size() != static_cast<Eigen::Index>(dist.components.size()))
    throw std::invalid_argument("mixture_sample: weight/component count mismatch");
  int k = categorical(dist.weights.w, rng);
  const GaussianAction& c = dist.components[static_cast<std::size_t>(k)];
  Eigen::VectorXd a = c.mu;
  for (Eigen::Index j = 0; j < a.size(); ++j) a[j] += c.sigma[j] * normal(rng);
  return a;
}

double mixture_log_prob(const MixtureDistribution& dist, const Eigen::VectorXd& action) {
  const Eigen::Index n = static_cast<Eigen::Index>(dist.components.size());
  if (n == 0) throw std::invalid_argument("mixture_log_prob: no components");
  if (dist.weights.w.size() != n)
    throw std::invalid_argument("mixture_log_prob: weight/component count mismatch");
  Eigen::VectorXd terms(n);
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    const GaussianAction& c = dist.components[static_cast<std::size_t>(i)];
    if (c.mu.size() != action.size())
      throw std::invalid_argument("mixture_log_prob: action width mismatch");
    double w = dist.weights.w[i];
    if (!(w > 0.0)) {
      terms[i] = -std::numeric_limits<double>::infinity();
      continue;
    }
    double lp = std::log(w);
    for (Eigen::Index j = 0; j < action.size(); ++j) {
      double sig = std::max(c.sigma[j], kMixtureSigmaFloor);
      double z = (action[j] - c.mu[j]) / sig;
      lp += -0.5 * kLog2Pi - std::log(sig) - 0.5 * z * z;
    }
    terms[i] = lp;
    best = std::max(best, lp);
  }
  if (!std::isfinite(best)) return -std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (std::isfinite(terms[i])) acc += std::exp(terms[i] - best);
  return best + std::log(acc);
}

PolicyNoise draw_policy_noise(Index batch, Index n_primitives, Index action_dim, Rng& rng) {
  PolicyNoise n;
  n.gumbel_weights.resize(batch, n_primitives);
  n.gumbel_select.resize(batch, n_primitives);
  n.eps.resize(batch, action_dim);
  for (Index r = 0; r < batch; ++r)
    for (Index c = 0; c < n_primitives; ++c) n.gumbel_weights(r, c) = gumbel(rng);
  for (Index r = 0; r < batch; ++r)
    for (Index c = 0; c < n_primitives; ++c) n.gumbel_select(r, c) = gumbel(rng);
  for (Index r = 0; r < batch; ++r)
    for (Index c = 0; c < action_dim; ++c) n.eps(r, c) = normal(rng);
  return n;
}

CompositePolicy::CompositePolicy(const Config& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.action_dim <= 0 || cfg.state_width <= 0 || cfg.n_primitives <= 0)
    throw std::invalid_argument("composer: state_width, action_dim and n_primitives must be positive");
  const Index d = cfg.d;
  switch (cfg.variant) {
    case ComposerVariant::Full:
      embed_ = Linear(2 * cfg.action_dim, d, rng);
      encoder_ = BiRnn(d, d, rng);
      decoder_ = Mlp(2 * d + cfg.state_width, {cfg.decoder_hidden}, d, Activation::Relu,
                     Mlp::Head::Linear, rng);
      att_.wf = Tensor::param(Matrix::NullaryExpr(d, d, [&rng, d]() {
        return uniform(rng, -1.0 / std::sqrt(double(d)), 1.0 / std::sqrt(double(d)));
      }));
      att_.wb = Tensor::param(Matrix::NullaryExpr(d, d, [&rng, d]() {
        return uniform(rng, -1.0 / std::sqrt(double(d)), 1.0 / std::sqrt(double(d)));
      }));
      att_.wd = Tensor::param(Matrix::NullaryExpr(d, d, [&rng, d]() {
        return uniform(rng, -1.0 / std::sqrt(double(d)), 1.0 / std::sqrt(double(d)));
      }));
      att_.w = Tensor::param(Matrix::NullaryExpr(d, 1, [&rng, d]() {
        return uniform(rng, -1.0 / std::sqrt(double(d)), 1.0 / std::sqrt(double(d)));
      }));
      break;
    case ComposerVariant::NoAttention:
      embed_ = Linear(2 * cfg.action_dim, d, rng);
      encoder_ = BiRnn(d, d, rng);
      decoder_ = Mlp(2 * d + cfg.state_width, {cfg.decoder_hidden}, cfg.action_dim, Activation::Relu,
                     Mlp::Head::Gaussian, rng);
      break;
    case ComposerVariant::AttBrnnRemoved:
      ff_ = Mlp(cfg.state_width + cfg.n_primitives * 2 * cfg.action_dim, {cfg.decoder_hidden},
                cfg.action_dim, Activation::Relu, Mlp::Head::Gaussian, rng);
      break;
    case ComposerVariant::FlatBaseline:
      ff_ = Mlp(cfg.state_width, cfg.flat_hidden, cfg.action_dim, Activation::Relu,
                Mlp::Head::Gaussian, rng);
      break;
  }
}

void CompositePolicy::check_inputs(const Matrix& states, const BatchPrimitives& prim) const {
  if (states.cols() != cfg_.state_width)
    throw std::invalid_argument("composer: state width mismatch, got " + std::to_string(states.cols()) +
                                " expected " + std::to_string(cfg_.state_width));
  if (cfg_.variant != ComposerVariant::FlatBaseline && prim.count() != cfg_.n_primitives)
    throw std::invalid_argument("composer: primitive count mismatch, got " + std::to_string(prim.count()) +
                                " expected " + std::to_string(cfg_.n_primitives));
}

Tensor CompositePolicy::attention_q_graph(const Matrix& states, const BatchPrimitives& prim) const {
  const Index k = prim.count();
  std::vector<Tensor> seq;
  seq.reserve(k);
  for (Index i = 0; i < k; ++i) {
    Tensor pair = concat_cols(std::vector<Tensor>{Tensor::constant(prim.mu[i]),
                                                  Tensor::constant(prim.sigma[i])});
    seq.push_back(embed_.forward(pair));
  }
  BiRnn::States enc = encoder_.forward(seq);
  Tensor dec_in = concat_cols(std::vector<Tensor>{enc.forward_last(), enc.backward_last(),
                                                  Tensor::constant(states)});
  Tensor h = decoder_.forward(dec_in);

  // aligned per-primitive states: forward state after consuming input i,
  // backward state after consuming inputs k-1..i
  std::vector<Tensor> fstates, bstates;
  for (Index i = 0; i < k; ++i) {
    fstates.push_back(enc.forward[static_cast<std::size_t>(i + 1)]);
    bstates.push_back(enc.backward[static_cast<std::size_t>(k - i)]);
  }
  return attention_logits(att_, fstates, bstates, h);
}

CompositePolicy::FullGraph CompositePolicy::full_weights_graph(const Matrix& states,
                                                               const BatchPrimitives& prim,
                                                               PolicyMode mode,
                                                               const Matrix& weight_gumbels) const {
  Tensor q = attention_q_graph(states, prim);
  Tensor logits = q;
  if (mode == PolicyMode::Stochastic) logits = add(q, Tensor::constant(weight_gumbels));
  logits = scale(logits, 1.0 / cfg_.temperature);
  Tensor log_w = sub(logits, broadcast_to(logsumexp_rows(logits), logits.rows(), logits.cols()));
  FullGraph g;
  g.log_weights = log_w;
  g.weights = exp(log_w);
  return g;
}

Mlp::GaussianOut CompositePolicy::gaussian_graph(const Matrix& states,
                                                 const BatchPrimitives& prim) const {
  switch (cfg_.variant) {
    case ComposerVariant::NoAttention: {
      std::vector<Tensor> seq;
      for (Index i = 0; i < prim.count(); ++i) {
        Tensor pair = concat_cols(std::vector<Tensor>{Tensor::constant(prim.mu[i]),
                                                      Tensor::constant(prim.sigma[i])});
        seq.push_back(embed_.forward(pair));
      }
      BiRnn::States enc = encoder_.forward(seq);
      Tensor dec_in = concat_cols(std::vector<Tensor>{enc.forward_last(), enc.backward_last(),
                                                      Tensor::constant(states)});
      return decoder_.forward_gaussian(dec_in);
    }
    case ComposerVariant::AttBrnnRemoved: {
      std::vector<Tensor> parts{Tensor::constant(states)};
      for (Index i = 0; i < prim.count(); ++i) {
        parts.push_back(Tensor::constant(prim.mu[i]));
        parts.push_back(Tensor::constant(prim.sigma[i]));
      }
      return ff_.forward_gaussian(concat_cols(parts));
    }
    case ComposerVariant::FlatBaseline:
      return ff_.forward_gaussian(Tensor::constant(states));
    default:
      throw std::logic_error("gaussian_graph: full variant has no gaussian head");
  }
}

Tensor CompositePolicy::mixture_log_prob_graph(const Tensor& log_weights, const BatchPrimitives& prim,
                                               const Tensor& actions) const {
  const Index k = prim.count();
  const Index batch = actions.rows();
  std::vector<Tensor> comp_lp;
  comp_lp.reserve(k);
  for (Index i = 0; i < k; ++i) {
    Matrix sig = prim.sigma[i].cwiseMax(kMixtureSigmaFloor);
    Matrix log_sig_sum(batch, 1);
    for (Index r = 0; r < batch; ++r) log_sig_sum(r, 0) = sig.row(r).array().log().sum();
    Tensor z = div(sub(actions, Tensor::constant(prim.mu[i])), Tensor::constant(sig));
    Tensor quad = scale(sum_axis(square(z), 1), -0.5);
    Tensor const_part = Tensor::constant(
        Matrix(-log_sig_sum.array() - 0.5 * kLog2Pi * static_cast<double>(actions.cols())));
    comp_lp.push_back(add(quad, const_part));  // B x 1
  }
  Tensor lp_mat = concat_cols(comp_lp);  // B x K
  return logsumexp_rows(add(log_weights, lp_mat));
}

CompositePolicy::Forward CompositePolicy::forward_batch(const Matrix& states,
                                                        const BatchPrimitives& prim, PolicyMode mode,
                                                        const PolicyNoise& noise) const {
  check_inputs(states, prim);
  const Index batch = states.rows();
  Forward out;
  if (cfg_.variant == ComposerVariant::Full) {
    FullGraph g = full_weights_graph(states, prim, mode, noise.gumbel_weights);
    out.weights = g.weights;
    const Index k = prim.count();
    if (mode == PolicyMode::Deterministic) {
      Tensor action = Tensor::zeros(batch, cfg_.action_dim);
      for (Index i = 0; i < k; ++i) {
        Tensor wi = broadcast_to(slice_cols(g.weights, i, 1), batch, cfg_.action_dim);
        action = add(action, mul(wi, Tensor::constant(prim.mu[i])));
      }
      out.action = action;
    } else {
      // Gumbel-softmax relaxed component selection over per-component
      // reparameterized draws; the hard categorical choice is its T->0 limit.
      Tensor sel_logits = scale(add(g.log_weights, Tensor::constant(noise.gumbel_select)),
                                1.0 / cfg_.temperature);
      Tensor kappa = softmax_rows(sel_logits);
      Tensor action = Tensor::zeros(batch, cfg_.action_dim);
      for (Index i = 0; i < k; ++i) {
        Matrix drawn = prim.mu[i] + prim.sigma[i].cwiseProduct(noise.eps);
        Tensor ki = broadcast_to(slice_cols(kappa, i, 1), batch, cfg_.action_dim);
        action = add(action, mul(ki, Tensor::constant(drawn)));
      }
      out.action = action;
    }
    out.log_prob = mixture_log_prob_graph(g.log_weights, prim, out.action);
  } else {
    Mlp::GaussianOut gauss = gaussian_graph(states, prim);
    Tensor action = mode == PolicyMode::Deterministic
                        ? gauss.mu
                        : add(gauss.mu, mul(gauss.sigma, Tensor::constant(noise.eps)));
    Tensor z = div(sub(action, gauss.mu), gauss.sigma);
    Tensor lp = sub(scale(sum_axis(square(z), 1), -0.5),
                    add_scalar(sum_axis(log(gauss.sigma), 1),
                               0.5 * kLog2Pi * static_cast<double>(cfg_.action_dim)));
    out.action = action;
    out.log_prob = lp;
  }
  return out;
}

Tensor CompositePolicy::log_prob_batch(const Matrix& states, const BatchPrimitives& prim,
                                       const Matrix& actions, PolicyMode mode,
                                       const PolicyNoise& noise) const {
  check_inputs(states, prim);
  Tensor a = Tensor::constant(actions);
  if (cfg_.variant == ComposerVariant::Full) {
    FullGraph g = full_weights_graph(states, prim, mode, noise.gumbel_weights);
    return mixture_log_prob_graph(g.log_weights, prim, a);
  }
  Mlp::GaussianOut gauss = gaussian_graph(states, prim);
  Tensor z = div(sub(a, gauss.mu), gauss.sigma);
  return sub(scale(sum_axis(square(z), 1), -0.5),
             add_scalar(sum_axis(log(gauss.sigma), 1),
                        0.5 * kLog2Pi * static_cast<double>(cfg_.action_dim)));
}

Tensor CompositePolicy::deterministic_action_batch(const Matrix& states,
                                                   const BatchPrimitives& prim) const {
  check_inputs(states, prim);
  if (cfg_.variant == ComposerVariant::Full) {
    FullGraph g = full_weights_graph(states, prim, PolicyMode::Deterministic, Matrix());
    Tensor action = Tensor::zeros(states.rows(), cfg_.action_dim);
    for (Index i = 0; i < prim.count(); ++i) {
      Tensor wi = broadcast_to(slice_cols(g.weights, i, 1), states.rows(), cfg_.action_dim);
      action = add(action, mul(wi, Tensor::constant(prim.mu[i])));
    }
    return action;
  }
  return gaussian_graph(states, prim).mu;
}

CompositePolicy::RolloutResult CompositePolicy::act(const Eigen::VectorXd& state,
                                                    const std::vector<GaussianAction>& prim,
                                                    PolicyMode mode, Rng& rng) const {
  autograd::NoGradGuard guard;
  Matrix s(1, state.size());
  s.row(0) = state.transpose();
  BatchPrimitives bp;
  for (const GaussianAction& g : prim) {
    Matrix mu(1, g.mu.size()), sig(1, g.sigma.size());
    mu.row(0) = g.mu.transpose();
    sig.row(0) = g.sigma.transpose();
    bp.mu.push_back(std::move(mu));
    bp.sigma.push_back(std::move(sig));
  }
  check_inputs(s, bp);

  RolloutResult out;
  if (cfg_.variant == ComposerVariant::Full) {
    Tensor q = attention_q_graph(s, bp);
    Eigen::VectorXd q_row = q.value().row(0).transpose();
    Eigen::VectorXd w = gumbel_weights(q_row, cfg_.temperature, mode,
                                       mode == PolicyMode::Stochastic ? &rng : nullptr)
                            .w;
    out.dist.weights.w = w;
    out.dist.components = prim;
    if (mode == PolicyMode::Stochastic) {
      out.action = mixture_sample(out.dist, rng);
    } else {
      out.action = Eigen::VectorXd::Zero(cfg_.action_dim);
      for (std::size_t i = 0; i < prim.size(); ++i) out.action += w[static_cast<Eigen::Index>(i)] * prim[i].mu;
    }
    out.log_prob = mixture_log_prob(out.dist, out.action);
  } else {
    Mlp::GaussianOut gauss = gaussian_graph(s, bp);
    Eigen::VectorXd mu = gauss.mu.value().row(0).transpose();
    Eigen::VectorXd sigma = gauss.sigma.value().row(0).transpose();
    out.action = mu;
    if (mode == PolicyMode::Stochastic)
      for (Eigen::Index j = 0; j < out.action.size(); ++j) out.action[j] += sigma[j] * normal(rng);
    out.dist.weights.w = Eigen::VectorXd::Ones(1);
    out.dist.components = {GaussianAction{mu, sigma}};
    out.log_prob = mixture_log_prob(out.dist, out.action);
  }
  return out;
}

Tensor CompositePolicy::attention_scores_batch(const Matrix& states,
                                               const BatchPrimitives& prim) const {
  if (cfg_.variant != ComposerVariant::Full)
    throw std::logic_error("attention_scores_batch: only the full variant has an attention network");
  check_inputs(states, prim);
  return attention_q_graph(states, prim);
}

MixtureDistribution CompositePolicy::distribution(const Eigen::VectorXd& state,
                                                  const std::vector<GaussianAction>& prim) const {
  autograd::NoGradGuard guard;
  Matrix s(1, state.size());
  s.row(0) = state.transpose();
  BatchPrimitives bp;
  for (const GaussianAction& g : prim) {
    Matrix mu(1, g.mu.size()), sig(1, g.sigma.size());
    mu.row(0) = g.mu.transpose();
    sig.row(0) = g.sigma.transpose();
    bp.mu.push_back(std::move(mu));
    bp.sigma.push_back(std::move(sig));
  }
  check_inputs(s, bp);
  MixtureDistribution dist;
  if (cfg_.variant == ComposerVariant::Full) {
    Tensor q = attention_q_graph(s, bp);
    dist.weights = gumbel_weights(q.value().row(0).transpose(), cfg_.temperature,
                                  PolicyMode::Deterministic, nullptr);
    dist.components = prim;
  } else {
    Mlp::GaussianOut gauss = gaussian_graph(s, bp);
    dist.weights.w = Eigen::VectorXd::Ones(1);
    dist.components = {GaussianAction{gauss.mu.value().row(0).transpose(),
                                      gauss.sigma.value().row(0).transpose()}};
  }
  return dist;
}

void CompositePolicy::collect_params(const std::string& prefix, NamedParams& out) const {
  switch (cfg_.variant) {
    case ComposerVariant::Full:
      out.emplace_back(prefix + ".embed.weight", embed_.weight);
      out.emplace_back(prefix + ".embed.bias", embed_.bias);
      encoder_.collect_params(prefix + ".encoder", out);
      decoder_.collect_params(prefix + ".decoder", out);
      out.emplace_back(prefix + ".attention.wf", att_.wf);
      out.emplace_back(prefix + ".attention.wb", att_.wb);
      out.emplace_back(prefix + ".attention.wd", att_.wd);
      out.emplace_back(prefix + ".attention.w", att_.w);
      break;
    case ComposerVariant::NoAttention:
      out.emplace_back(prefix + ".embed.weight", embed_.weight);
      out.emplace_back(prefix + ".embed.bias", embed_.bias);
      encoder_.collect_params(prefix + ".encoder", out);
      decoder_.collect_params(prefix + ".decoder", out);
      break;
    case ComposerVariant::AttBrnnRemoved:
    case ComposerVariant::FlatBaseline:
      ff_.collect_params(prefix + ".ff", out);
      break;
  }
}

std::vector<Tensor> CompositePolicy::params() const {
  NamedParams named;
  collect_params("p", named);
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (auto& [name, t] : named) out.push_back(t);
  return out;
}

CompositePolicy CompositePolicy::clone_frozen() const {
  CompositePolicy copy = *this;
  switch (cfg_.variant) {
    case ComposerVariant::Full:
      copy.embed_.weight = Tensor::constant(embed_.weight.value());
      copy.embed_.bias = Tensor::constant(embed_.bias.value());
      copy.encoder_ = encoder_.clone_frozen();
      copy.decoder_ = decoder_.clone_frozen();
      copy.att_.wf = Tensor::constant(att_.wf.value());
      copy.att_.wb = Tensor::constant(att_.wb.value());
      copy.att_.wd = Tensor::constant(att_.wd.value());
      copy.att_.w = Tensor::constant(att_.w.value());
      break;
    case ComposerVariant::NoAttention:
      copy.embed_.weight = Tensor::constant(embed_.weight.value());
      copy.embed_.bias = Tensor::constant(embed_.bias.value());
      copy.encoder_ = encoder_.clone_frozen();
      copy.decoder_ = decoder_.clone_frozen();
      break;
    case ComposerVariant::AttBrnnRemoved:
    case ComposerVariant::FlatBaseline:
      copy.ff_ = ff_.clone_frozen();
      break;
  }
  return copy;
}

}  // namespace copo
