#include "copo/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace copo {

namespace {

Matrix uniform_fan_in(Index in, Index out, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Matrix m(in, out);
  for (Index i = 0; i < in; ++i)
    for (Index j = 0; j < out; ++j) m(i, j) = uniform(rng, -bound, bound);
  return m;
}

Matrix uniform_bias(Index in, Index out, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Matrix m(1, out);
  for (Index j = 0; j < out; ++j) m(0, j) = uniform(rng, -bound, bound);
  return m;
}

}  // namespace

Linear::Linear(Index in, Index out, Rng& rng)
    : weight(Tensor::param(uniform_fan_in(in, out, rng))),
      bias(Tensor::param(uniform_bias(in, out, rng))) {}

Tensor Linear::forward(const Tensor& x, bool frozen) const {
  if (x.cols() != weight.rows())
    throw std::invalid_argument("linear: input width mismatch " + shape_str(x) + " vs weight " +
                                shape_str(weight));
  if (frozen) return add(matmul(x, weight.detach()), bias.detach());
  return add(matmul(x, weight), bias);
}

Mlp::Mlp(Index in, const std::vector<Index>& hidden, Index out, Activation act, Head head, Rng& rng)
    : act_(act), head_(head), in_(in), out_(out) {
  Index w = in;
  for (Index h : hidden) {
    layers_.emplace_back(w, h, rng);
    w = h;
  }
  layers_.emplace_back(w, head == Head::Gaussian ? 2 * out : out, rng);
}

Tensor Mlp::pre_head(const Tensor& x, bool frozen) const {
  if (x.cols() != in_)
    throw std::invalid_argument("mlp: input width mismatch, got " + shape_str(x) + " expected width " +
                                std::to_string(in_));
  Tensor h = x;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    h = layers_[i].forward(h, frozen);
    h = act_ == Activation::Relu ? relu(h) : tanh(h);
  }
  return layers_.back().forward(h, frozen);
}

Tensor Mlp::forward(const Tensor& x, bool frozen) const {
  if (head_ != Head::Linear) throw std::logic_error("mlp: forward called on gaussian-head network");
  return pre_head(x, frozen);
}

Mlp::GaussianOut Mlp::forward_gaussian(const Tensor& x, bool frozen) const {
  if (head_ != Head::Gaussian) throw std::logic_error("mlp: forward_gaussian called on linear-head network");
  Tensor raw = pre_head(x, frozen);
  Tensor mu = slice_cols(raw, 0, out_);
  Tensor log_sigma = clip(slice_cols(raw, out_, out_), kLogSigmaMin, kLogSigmaMax);
  return {mu, exp(log_sigma)};
}

void Mlp::collect_params(const std::string& prefix, NamedParams& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    out.emplace_back(prefix + ".layer" + std::to_string(i) + ".weight", layers_[i].weight);
    out.emplace_back(prefix + ".layer" + std::to_string(i) + ".bias", layers_[i].bias);
  }
}

std::vector<Tensor> Mlp::params() const {
  std::vector<Tensor> out;
  for (const Linear& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

Mlp Mlp::clone_frozen() const {
  Mlp copy = *this;
  for (Linear& l : copy.layers_) {
    l.weight = Tensor::constant(l.weight.value());
    l.bias = Tensor::constant(l.bias.value());
  }
  return copy;
}

LstmCell::LstmCell(Index input, Index hidden, Rng& rng) : in_(input), d_(hidden) {
  wx_ = Tensor::param(uniform_fan_in(input, 4 * hidden, rng));
  wh_ = Tensor::param(uniform_fan_in(hidden, 4 * hidden, rng));
  Matrix b = uniform_bias(hidden, 4 * hidden, rng);
  b.block(0, hidden, 1, hidden).setConstant(1.0);  // forget gate bias
  b_ = Tensor::param(std::move(b));
}

LstmCell::State LstmCell::initial_state(Index batch) const {
  return {Tensor::zeros(batch, d_), Tensor::zeros(batch, d_)};
}

LstmCell::State LstmCell::step(const Tensor& x, const State& s, bool frozen) const {
  if (x.cols() != in_)
    throw std::invalid_argument("lstm: input width mismatch, got " + shape_str(x) + " expected width " +
                                std::to_string(in_));
  Tensor wx = frozen ? wx_.detach() : wx_;
  Tensor wh = frozen ? wh_.detach() : wh_;
  Tensor b = frozen ? b_.detach() : b_;
  Tensor gates = add(add(matmul(x, wx), matmul(s.h, wh)), b);
  Tensor i = sigmoid(slice_cols(gates, 0, d_));
  Tensor f = sigmoid(slice_cols(gates, d_, d_));
  Tensor g = tanh(slice_cols(gates, 2 * d_, d_));
  Tensor o = sigmoid(slice_cols(gates, 3 * d_, d_));
  Tensor c = add(mul(f, s.c), mul(i, g));
  Tensor h = mul(o, tanh(c));
  return {h, c};
}

void LstmCell::collect_params(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".wx", wx_);
  out.emplace_back(prefix + ".wh", wh_);
  out.emplace_back(prefix + ".b", b_);
}

std::vector<Tensor> LstmCell::params() const { return {wx_, wh_, b_}; }

LstmCell LstmCell::clone_frozen() const {
  LstmCell copy = *this;
  copy.wx_ = Tensor::constant(wx_.value());
  copy.wh_ = Tensor::constant(wh_.value());
  copy.b_ = Tensor::constant(b_.value());
  return copy;
}

BiRnn::BiRnn(Index input, Index hidden, Rng& rng) : fwd_(input, hidden, rng), bwd_(input, hidden, rng) {}

BiRnn::States BiRnn::forward(std::span<const Tensor> seq, bool frozen) const {
  if (seq.empty()) throw std::invalid_argument("birnn: empty input sequence");
  Index batch = seq[0].rows();
  States out;
  out.forward.reserve(seq.size() + 1);
  out.backward.reserve(seq.size() + 1);

  LstmCell::State f = fwd_.initial_state(batch);
  out.forward.push_back(f.h);
  for (const Tensor& x : seq) {
    f = fwd_.step(x, f, frozen);
    out.forward.push_back(f.h);
  }

  LstmCell::State b = bwd_.initial_state(batch);
  out.backward.push_back(b.h);
  for (auto it = seq.rbegin(); it != seq.rend(); ++it) {
    b = bwd_.step(*it, b, frozen);
    out.backward.push_back(b.h);
  }
  return out;
}

void BiRnn::collect_params(const std::string& prefix, NamedParams& out) const {
  fwd_.collect_params(prefix + ".fwd", out);
  bwd_.collect_params(prefix + ".bwd", out);
}

std::vector<Tensor> BiRnn::params() const {
  std::vector<Tensor> out = fwd_.params();
  for (Tensor& t : bwd_.params()) out.push_back(t);
  return out;
}

BiRnn BiRnn::clone_frozen() const {
  BiRnn copy = *this;
  copy.fwd_ = fwd_.clone_frozen();
  copy.bwd_ = bwd_.clone_frozen();
  return copy;
}

void polyak_update(std::span<Tensor> target_params, std::span<const Tensor> online_params, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("polyak_update: tau must be in (0, 1]");
  if (target_params.size() != online_params.size())
    throw std::invalid_argument("polyak_update: parameter count mismatch");
  for (std::size_t i = 0; i < target_params.size(); ++i) {
    Tensor& t = target_params[i];
    const Tensor& o = online_params[i];
    if (t.rows() != o.rows() || t.cols() != o.cols())
      throw std::invalid_argument("polyak_update: shape mismatch " + shape_str(t) + " vs " + shape_str(o));
    t.value() = tau * o.value() + (1.0 - tau) * t.value();
  }
}

}  // namespace copo
