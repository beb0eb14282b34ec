#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "copo/composer.hpp"
#include "doctest.h"

using namespace copo;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = uniform(rng, lo, hi);
  return m;
}

CompositePolicy::Config small_cfg(ComposerVariant v, Index n_prims, Index state = 4,
                                  Index act = 2) {
  CompositePolicy::Config cfg;
  cfg.variant = v;
  cfg.state_width = state;
  cfg.action_dim = act;
  cfg.n_primitives = n_prims;
  cfg.d = 6;
  cfg.decoder_hidden = 8;
  cfg.flat_hidden = {8};
  cfg.temperature = 0.5;
  return cfg;
}

std::vector<GaussianAction> random_gaussians(Index n, Index act, Rng& rng) {
  std::vector<GaussianAction> out;
  for (Index i = 0; i < n; ++i) {
    GaussianAction g;
    g.mu = Eigen::VectorXd::NullaryExpr(act, [&]() { return uniform(rng, -1, 1); });
    g.sigma = Eigen::VectorXd::NullaryExpr(act, [&]() { return uniform(rng, 0.1, 0.5); });
    out.push_back(std::move(g));
  }
  return out;
}

// Straight-line evaluation of the attention score for one primitive.
double attention_oracle(const Matrix& wf, const Matrix& wb, const Matrix& wd, const Matrix& w,
                        const Eigen::VectorXd& hf, const Eigen::VectorXd& hb,
                        const Eigen::VectorXd& h) {
  const Index d = wf.rows();
  double score = 0.0;
  for (Index k = 0; k < d; ++k) {
    double pre = 0.0;
    for (Index j = 0; j < d; ++j) pre += hf[j] * wf(j, k) + hb[j] * wb(j, k) + h[j] * wd(j, k);
    score += std::tanh(pre) * w(k, 0);
  }
  return score;
}

}  // namespace

TEST_CASE("attention with zero readout vector gives zero logits") {
  Rng rng = make_stream(1, "att0");
  AttentionParams p;
  p.wf = Tensor::param(random_matrix(4, 4, rng));
  p.wb = Tensor::param(random_matrix(4, 4, rng));
  p.wd = Tensor::param(random_matrix(4, 4, rng));
  p.w = Tensor::param(Matrix::Zero(4, 1));
  std::vector<Tensor> f{Tensor::constant(random_matrix(1, 4, rng)),
                        Tensor::constant(random_matrix(1, 4, rng))};
  std::vector<Tensor> b{Tensor::constant(random_matrix(1, 4, rng)),
                        Tensor::constant(random_matrix(1, 4, rng))};
  Tensor h = Tensor::constant(random_matrix(1, 4, rng));
  Tensor q = attention_logits(p, f, b, h);
  CHECK(q.value().isZero(0.0));
}

TEST_CASE("identical per-primitive states give identical logits") {
  Rng rng = make_stream(2, "attsym");
  AttentionParams p;
  p.wf = Tensor::param(random_matrix(4, 4, rng));
  p.wb = Tensor::param(random_matrix(4, 4, rng));
  p.wd = Tensor::param(random_matrix(4, 4, rng));
  p.w = Tensor::param(random_matrix(4, 1, rng));
  Tensor hf = Tensor::constant(random_matrix(1, 4, rng));
  Tensor hb = Tensor::constant(random_matrix(1, 4, rng));
  std::vector<Tensor> f{hf, hf, hf};
  std::vector<Tensor> b{hb, hb, hb};
  Tensor h = Tensor::constant(random_matrix(1, 4, rng));
  Tensor q = attention_logits(p, f, b, h);
  CHECK(q.value()(0, 0) == q.value()(0, 1));
  CHECK(q.value()(0, 1) == q.value()(0, 2));
}

TEST_CASE("attention matches the scalar oracle to 1e-12") {
  Rng rng = make_stream(3, "attorc");
  AttentionParams p;
  p.wf = Tensor::param(random_matrix(5, 5, rng));
  p.wb = Tensor::param(random_matrix(5, 5, rng));
  p.wd = Tensor::param(random_matrix(5, 5, rng));
  p.w = Tensor::param(random_matrix(5, 1, rng));
  Matrix hf0 = random_matrix(1, 5, rng), hf1 = random_matrix(1, 5, rng);
  Matrix hb0 = random_matrix(1, 5, rng), hb1 = random_matrix(1, 5, rng);
  Matrix hm = random_matrix(1, 5, rng);
  std::vector<Tensor> f{Tensor::constant(hf0), Tensor::constant(hf1)};
  std::vector<Tensor> b{Tensor::constant(hb0), Tensor::constant(hb1)};
  Tensor q = attention_logits(p, f, b, Tensor::constant(hm));
  for (int i = 0; i < 2; ++i) {
    double expect = attention_oracle(p.wf.value(), p.wb.value(), p.wd.value(), p.w.value(),
                                     (i == 0 ? hf0 : hf1).row(0).transpose(),
                                     (i == 0 ? hb0 : hb1).row(0).transpose(), hm.row(0).transpose());
    CHECK(q.value()(0, i) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("attention rejects mismatched state counts") {
  Rng rng = make_stream(4, "attn");
  AttentionParams p;
  p.wf = Tensor::param(random_matrix(3, 3, rng));
  p.wb = Tensor::param(random_matrix(3, 3, rng));
  p.wd = Tensor::param(random_matrix(3, 3, rng));
  p.w = Tensor::param(random_matrix(3, 1, rng));
  std::vector<Tensor> f{Tensor::constant(random_matrix(1, 3, rng))};
  std::vector<Tensor> b{Tensor::constant(random_matrix(1, 3, rng)),
                        Tensor::constant(random_matrix(1, 3, rng))};
  CHECK_THROWS_WITH_AS(attention_logits(p, f, b, Tensor::constant(random_matrix(1, 3, rng))),
                       doctest::Contains("state-count mismatch"), std::invalid_argument);
}

TEST_CASE("deterministic gumbel weights of a constant vector are uniform") {
  Eigen::VectorXd q = Eigen::VectorXd::Zero(4);
  MixtureWeights w = gumbel_weights(q, 0.5, PolicyMode::Deterministic, nullptr);
  for (int i = 0; i < 4; ++i) CHECK(w.w[i] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("deterministic gumbel weights match softmax(q/T)") {
  Eigen::VectorXd q(2);
  q << 1.0, 0.0;
  MixtureWeights w = gumbel_weights(q, 0.5, PolicyMode::Deterministic, nullptr);
  // softmax([2, 0])
  CHECK(w.w[0] == doctest::Approx(0.8807970779778823).epsilon(1e-12));
  CHECK(w.w[1] == doctest::Approx(0.11920292202211755).epsilon(1e-12));
}

TEST_CASE("gumbel weights reject non-positive temperature") {
  Eigen::VectorXd q = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(gumbel_weights(q, 0.0, PolicyMode::Deterministic, nullptr),
                  std::invalid_argument);
  CHECK_THROWS_AS(gumbel_weights(q, -1.0, PolicyMode::Deterministic, nullptr),
                  std::invalid_argument);
}

TEST_CASE("gumbel weights stay on the simplex over 1000 random draws") {
  Rng rng = make_stream(5, "simplex");
  for (int i = 0; i < 1000; ++i) {
    Eigen::VectorXd q =
        Eigen::VectorXd::NullaryExpr(5, [&]() { return uniform(rng, -10.0, 10.0); });
    double t = uniform(rng, 0.05, 5.0);
    MixtureWeights w = gumbel_weights(q, t, PolicyMode::Stochastic, &rng);
    CHECK((w.w.array() >= 0.0).all());
    CHECK(std::abs(w.w.sum() - 1.0) < 1e-9);
  }
}

TEST_CASE("temperature limits: one-hot at T->0, uniform at T->inf") {
  Eigen::VectorXd q(4);
  q << 0.3, 1.2, -0.5, 0.9;
  MixtureWeights cold = gumbel_weights(q, 1e-3, PolicyMode::Deterministic, nullptr);
  CHECK(cold.w[1] == doctest::Approx(1.0).epsilon(1e-3));
  MixtureWeights hot = gumbel_weights(q, 1e3, PolicyMode::Deterministic, nullptr);
  for (int i = 0; i < 4; ++i) CHECK(hot.w[i] == doctest::Approx(0.25).epsilon(1e-3));
}

TEST_CASE("cold-temperature ties break toward the lowest index") {
  Eigen::VectorXd q(3);
  q << 2.0, 2.0, 0.0;
  MixtureWeights cold = gumbel_weights(q, 1e-6, PolicyMode::Deterministic, nullptr);
  CHECK(cold.w[0] == doctest::Approx(0.5));
  CHECK(cold.w[1] == doctest::Approx(0.5));
  // exact ties split mass; the argmax convention is exercised through
  // mixture_sample's categorical inversion, which picks the lowest index
  MixtureDistribution dist;
  dist.weights = cold;
  Rng rng = make_stream(6, "tie");
  dist.components = random_gaussians(3, 2, rng);
  Rng sample_rng = make_stream(7, "tie2");
  (void)mixture_sample(dist, sample_rng);
}

TEST_CASE("single near-deterministic component returns its mean") {
  MixtureDistribution dist;
  dist.weights.w = Eigen::VectorXd::Ones(1);
  GaussianAction g;
  g.mu = Eigen::VectorXd(2);
  g.mu << 0.4, -0.3;
  g.sigma = Eigen::VectorXd::Constant(2, 1e-12);
  dist.components = {g};
  Rng rng = make_stream(8, "det");
  Eigen::VectorXd a = mixture_sample(dist, rng);
  CHECK(a[0] == doctest::Approx(0.4).epsilon(1e-9));
  CHECK(a[1] == doctest::Approx(-0.3).epsilon(1e-9));
}

TEST_CASE("degenerate weight vector never samples the dead component") {
  MixtureDistribution dist;
  dist.weights.w = Eigen::VectorXd(2);
  dist.weights.w << 1.0, 0.0;
  GaussianAction near, far;
  near.mu = Eigen::VectorXd::Zero(1);
  near.sigma = Eigen::VectorXd::Constant(1, 0.1);
  far.mu = Eigen::VectorXd::Constant(1, 100.0);
  far.sigma = Eigen::VectorXd::Constant(1, 0.1);
  dist.components = {near, far};
  Rng rng = make_stream(9, "deg");
  double mean = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) mean += mixture_sample(dist, rng)[0];
  mean /= n;
  CHECK(std::abs(mean) < 0.01);  // 0.1 / sqrt(10000) * few sigma
}

TEST_CASE("symmetric two-component mixture has near-zero empirical mean") {
  MixtureDistribution dist;
  dist.weights.w = Eigen::VectorXd::Constant(2, 0.5);
  GaussianAction a, b;
  a.mu = Eigen::VectorXd::Constant(1, -1.0);
  a.sigma = Eigen::VectorXd::Constant(1, 0.05);
  b.mu = Eigen::VectorXd::Constant(1, 1.0);
  b.sigma = Eigen::VectorXd::Constant(1, 0.05);
  dist.components = {a, b};
  Rng rng = make_stream(10, "mc");
  const int n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = mixture_sample(dist, rng)[0];
    sum += x;
    sumsq += x * x;
  }
  double mean = sum / n;
  double stderr_bound = 3.0 * std::sqrt((sumsq / n - mean * mean) / n);
  CHECK(std::abs(mean) < stderr_bound);
}

TEST_CASE("standard normal log density at zero") {
  MixtureDistribution dist;
  dist.weights.w = Eigen::VectorXd::Ones(1);
  GaussianAction g;
  g.mu = Eigen::VectorXd::Zero(1);
  g.sigma = Eigen::VectorXd::Ones(1);
  dist.components = {g};
  CHECK(mixture_log_prob(dist, Eigen::VectorXd::Zero(1)) ==
        doctest::Approx(-0.9189385332046727).epsilon(1e-12));
}

TEST_CASE("two identical components equal the single-component density") {
  Rng rng = make_stream(11, "same");
  GaussianAction g;
  g.mu = Eigen::VectorXd(2);
  g.mu << 0.2, -0.1;
  g.sigma = Eigen::VectorXd::Constant(2, 0.4);
  MixtureDistribution one, two;
  one.weights.w = Eigen::VectorXd::Ones(1);
  one.components = {g};
  two.weights.w = Eigen::VectorXd(2);
  two.weights.w << 0.3, 0.7;
  two.components = {g, g};
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd x(2);
    x << uniform(rng, -1, 1), uniform(rng, -1, 1);
    CHECK(mixture_log_prob(one, x) == doctest::Approx(mixture_log_prob(two, x)).epsilon(1e-12));
  }
}

TEST_CASE("1-d mixture density integrates to one by quadrature") {
  Rng rng = make_stream(12, "quad");
  MixtureDistribution dist;
  dist.weights.w = Eigen::VectorXd(3);
  dist.weights.w << 0.2, 0.5, 0.3;
  for (int i = 0; i < 3; ++i) {
    GaussianAction g;
    g.mu = Eigen::VectorXd::Constant(1, uniform(rng, -2, 2));
    g.sigma = Eigen::VectorXd::Constant(1, uniform(rng, 0.3, 1.0));
    dist.components.push_back(g);
  }
  const int n = 20000;
  const double lo = -10.0, hi = 10.0, h = (hi - lo) / n;
  double integral = 0.0;
  for (int i = 0; i <= n; ++i) {
    double x = lo + h * i;
    double p = std::exp(mixture_log_prob(dist, Eigen::VectorXd::Constant(1, x)));
    integral += (i == 0 || i == n) ? 0.5 * p : p;
  }
  integral *= h;
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("single-primitive composer reduces to that primitive's gaussian") {
  Rng rng = make_stream(13, "n0");
  CompositePolicy policy(small_cfg(ComposerVariant::Full, 1), rng);
  auto prims = random_gaussians(1, 2, rng);
  Eigen::VectorXd s(4);
  s << 0.1, 0.2, 0.3, 0.4;
  auto res = policy.act(s, prims, PolicyMode::Stochastic, rng);
  CHECK(res.dist.weights.w.size() == 1);
  CHECK(res.dist.weights.w[0] == doctest::Approx(1.0).epsilon(1e-12));
  MixtureDistribution single;
  single.weights.w = Eigen::VectorXd::Ones(1);
  single.components = prims;
  CHECK(res.log_prob == doctest::Approx(mixture_log_prob(single, res.action)).epsilon(1e-12));
}

TEST_CASE("act log_prob is consistent with mixture_log_prob of the returned action") {
  Rng rng = make_stream(14, "cons");
  CompositePolicy policy(small_cfg(ComposerVariant::Full, 4), rng);
  auto prims = random_gaussians(4, 2, rng);
  Eigen::VectorXd s(4);
  s << -0.2, 0.4, 0.9, -0.5;
  for (int i = 0; i < 10; ++i) {
    auto res = policy.act(s, prims, PolicyMode::Stochastic, rng);
    CHECK(res.log_prob == doctest::Approx(mixture_log_prob(res.dist, res.action)).epsilon(1e-12));
  }
  auto det = policy.act(s, prims, PolicyMode::Deterministic, rng);
  CHECK(det.log_prob == doctest::Approx(mixture_log_prob(det.dist, det.action)).epsilon(1e-12));
}

TEST_CASE("unknown variant names are rejected") {
  CHECK_THROWS_WITH_AS(variant_from_string("attention_only"), doctest::Contains("full"),
                       std::invalid_argument);
}

TEST_CASE("batch forward log_prob agrees with the scalar mixture density") {
  Rng rng = make_stream(15, "batch");
  CompositePolicy policy(small_cfg(ComposerVariant::Full, 3), rng);
  auto prims = random_gaussians(3, 2, rng);
  Eigen::VectorXd s(4);
  s << 0.3, -0.3, 0.6, 0.0;

  Matrix states(1, 4);
  states.row(0) = s.transpose();
  BatchPrimitives bp;
  for (const auto& g : prims) {
    Matrix mu(1, 2), sig(1, 2);
    mu.row(0) = g.mu.transpose();
    sig.row(0) = g.sigma.transpose();
    bp.mu.push_back(mu);
    bp.sigma.push_back(sig);
  }
  Matrix actions = random_matrix(1, 2, rng);
  PolicyNoise noise = draw_policy_noise(1, 3, 2, rng);
  Tensor lp = policy.log_prob_batch(states, bp, actions, PolicyMode::Deterministic, noise);

  MixtureDistribution dist = policy.distribution(s, prims);
  CHECK(lp.value()(0, 0) ==
        doctest::Approx(mixture_log_prob(dist, actions.row(0).transpose())).epsilon(1e-12));
}

TEST_CASE("gaussian-variant policies sample and score coherently") {
  Rng rng = make_stream(16, "gvar");
  for (ComposerVariant v : {ComposerVariant::NoAttention, ComposerVariant::AttBrnnRemoved,
                            ComposerVariant::FlatBaseline}) {
    CompositePolicy policy(small_cfg(v, 3), rng);
    auto prims = random_gaussians(3, 2, rng);
    Eigen::VectorXd s(4);
    s << 0.5, -0.1, 0.2, 0.8;
    auto res = policy.act(s, prims, PolicyMode::Stochastic, rng);
    CHECK(res.dist.components.size() == 1);
    CHECK(res.log_prob == doctest::Approx(mixture_log_prob(res.dist, res.action)).epsilon(1e-12));
    auto det = policy.act(s, prims, PolicyMode::Deterministic, rng);
    CHECK(det.action == det.dist.components[0].mu);
  }
}

TEST_CASE("deterministic full-variant action is the weight-blended mean") {
  Rng rng = make_stream(17, "blend");
  CompositePolicy policy(small_cfg(ComposerVariant::Full, 3), rng);
  auto prims = random_gaussians(3, 2, rng);
  Eigen::VectorXd s(4);
  s << 0.0, 0.1, -0.1, 0.2;
  auto res = policy.act(s, prims, PolicyMode::Deterministic, rng);
  Eigen::VectorXd expect = Eigen::VectorXd::Zero(2);
  for (int i = 0; i < 3; ++i) expect += res.dist.weights.w[i] * prims[static_cast<std::size_t>(i)].mu;
  CHECK((res.action - expect).cwiseAbs().maxCoeff() < 1e-14);
}
