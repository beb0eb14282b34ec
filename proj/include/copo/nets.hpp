#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "copo/rng.hpp"
#include "copo/tensor.hpp"

namespace copo {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

enum class Activation { Relu, Tanh };

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out

  Linear() = default;
  Linear(Index in, Index out, Rng& rng);
  Tensor forward(const Tensor& x, bool frozen = false) const;
};

// Feed-forward network with an optional Gaussian head. The Gaussian head
// emits (mu, sigma) with log-sigma clipped to [-20, 2] before exponentiation.
class Mlp {
 public:
  enum class Head { Linear, Gaussian };

  Mlp() = default;
  Mlp(Index in, const std::vector<Index>& hidden, Index out, Activation act, Head head, Rng& rng);

  Tensor forward(const Tensor& x, bool frozen = false) const;

  struct GaussianOut {
    Tensor mu, sigma;
  };
  GaussianOut forward_gaussian(const Tensor& x, bool frozen = false) const;

  Index input_width() const { return in_; }
  Index output_width() const { return out_; }
  Head head() const { return head_; }

  void collect_params(const std::string& prefix, NamedParams& out) const;
  std::vector<Tensor> params() const;
  Mlp clone_frozen() const;  // constant-parameter copy for target networks

  static constexpr double kLogSigmaMin = -20.0;
  static constexpr double kLogSigmaMax = 2.0;

 private:
  Tensor pre_head(const Tensor& x, bool frozen) const;

  std::vector<Linear> layers_;  // hidden layers then head
  Activation act_ = Activation::Relu;
  Head head_ = Head::Linear;
  Index in_ = 0, out_ = 0;
};

// Standard 4-gate LSTM cell, gate order [input, forget, cell, output],
// forget-gate bias initialized to 1.
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(Index input, Index hidden, Rng& rng);

  struct State {
    Tensor h, c;
  };

  State initial_state(Index batch) const;
  State step(const Tensor& x, const State& s, bool frozen = false) const;

  Index input_width() const { return in_; }
  Index hidden_width() const { return d_; }

  void collect_params(const std::string& prefix, NamedParams& out) const;
  std::vector<Tensor> params() const;
  LstmCell clone_frozen() const;

 private:
  Tensor wx_;  // in x 4d
  Tensor wh_;  // d x 4d
  Tensor b_;   // 1 x 4d
  Index in_ = 0, d_ = 0;
};

// Bidirectional recurrent encoder. For a length-L input sequence each
// direction emits L+1 states: index 0 is the zero initial state and index k
// is the state after consuming k inputs (left-to-right for the forward cell,
// right-to-left for the backward cell).
class BiRnn {
 public:
  BiRnn() = default;
  BiRnn(Index input, Index hidden, Rng& rng);

  struct States {
    std::vector<Tensor> forward;
    std::vector<Tensor> backward;
    const Tensor& forward_last() const { return forward.back(); }
    const Tensor& backward_last() const { return backward.back(); }
  };

  States forward(std::span<const Tensor> seq, bool frozen = false) const;

  Index hidden_width() const { return fwd_.hidden_width(); }
  const LstmCell& forward_cell() const { return fwd_; }
  const LstmCell& backward_cell() const { return bwd_; }

  void collect_params(const std::string& prefix, NamedParams& out) const;
  std::vector<Tensor> params() const;
  BiRnn clone_frozen() const;

 private:
  LstmCell fwd_, bwd_;
};

// target <- tau*online + (1-tau)*target, elementwise over aligned spans.
void polyak_update(std::span<Tensor> target_params, std::span<const Tensor> online_params, double tau);

}  // namespace copo
