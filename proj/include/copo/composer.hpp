#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "copo/ensemble.hpp"
#include "copo/nets.hpp"
#include "copo/rng.hpp"
#include "copo/tensor.hpp"

namespace copo {

// Simplex-constrained weights over the N+1 primitives.
struct MixtureWeights {
  Eigen::VectorXd w;
};

struct MixtureDistribution {
  MixtureWeights weights;
  std::vector<GaussianAction> components;
};

enum class ComposerVariant { Full, NoAttention, AttBrnnRemoved, FlatBaseline };
enum class PolicyMode { Stochastic, Deterministic };

ComposerVariant variant_from_string(const std::string& name);
std::string variant_to_string(ComposerVariant v);

// Variance floor applied inside mixture densities.
inline constexpr double kMixtureSigmaFloor = 1e-4;

struct AttentionParams {
  Tensor wf, wb, wd;  // d x d
  Tensor w;           // d x 1
};

// Per-primitive scores q_i = w . tanh(h_f[i] Wf + h_b[i] Wb + h Wd), one
// column per primitive. State lists must be index-aligned with the ensemble.
Tensor attention_logits(const AttentionParams& params, std::span<const Tensor> fwd_states,
                        std::span<const Tensor> bwd_states, const Tensor& h);

// softmax((q + gumbel noise) / T); deterministic mode omits the noise.
MixtureWeights gumbel_weights(const Eigen::VectorXd& q, double temperature, PolicyMode mode,
                              Rng* rng);

// Exact mixture sampling: component index from the weights, then a diagonal
// Gaussian draw from that component. Unclipped.
Eigen::VectorXd mixture_sample(const MixtureDistribution& dist, Rng& rng);

// log sum_i w_i prod_j N(a_j; mu_ij, sigma_ij), log-sum-exp stabilized.
double mixture_log_prob(const MixtureDistribution& dist, const Eigen::VectorXd& action);

// Frozen noise draws for one differentiable policy forward. Draw order is
// fixed (weight gumbels, selection gumbels, gaussian eps, row-major) so a
// seeded stream reproduces the same forward exactly.
struct PolicyNoise {
  Matrix gumbel_weights;  // B x K
  Matrix gumbel_select;   // B x K
  Matrix eps;             // B x action_dim
};

PolicyNoise draw_policy_noise(Index batch, Index n_primitives, Index action_dim, Rng& rng);

// Batched primitive outputs: one B x action_dim (mu, sigma) pair per primitive.
struct BatchPrimitives {
  std::vector<Matrix> mu;
  std::vector<Matrix> sigma;

  Index count() const { return static_cast<Index>(mu.size()); }
};

// The composite policy. The full variant embeds primitive (mu, sigma) pairs,
// encodes them with the BiRnn, decodes with the state, scores primitives with
// the attention network and emits a Gaussian mixture. The ablated variants
// replace the mixture with a single Gaussian head:
//   no_attention     — decoder([h_f, h_b, s]) emits (mu, sigma) directly
//   att_brnn_removed — feed-forward([s, all primitive mu/sigma]) emits (mu, sigma)
//   flat_baseline    — feed-forward(s) only, primitives unused
class CompositePolicy {
 public:
  struct Config {
    ComposerVariant variant = ComposerVariant::Full;
    Index state_width = 0;  // decoder state input (s, or [s, goal] under hiro)
    Index action_dim = 0;
    Index n_primitives = 0;  // ensemble size N+1
    Index d = 128;
    Index decoder_hidden = 128;
    std::vector<Index> flat_hidden = {256, 256};
    double temperature = 0.5;
  };

  CompositePolicy() = default;
  CompositePolicy(const Config& cfg, Rng& rng);

  struct Forward {
    Tensor action;    // B x action_dim, reparameterized
    Tensor log_prob;  // B x 1
    Tensor weights;   // B x K mixture weights (full variant only)
  };

  // Differentiable sampled forward for the trainers. In the full variant the
  // action is the Gumbel-softmax relaxed composite (soft component selection
  // over per-component reparameterized draws); the density is the exact
  // mixture density at that action.
  Forward forward_batch(const Matrix& states, const BatchPrimitives& prim, PolicyMode mode,
                        const PolicyNoise& noise) const;

  // Density of externally supplied actions under the policy.
  Tensor log_prob_batch(const Matrix& states, const BatchPrimitives& prim, const Matrix& actions,
                        PolicyMode mode, const PolicyNoise& noise) const;

  // Noise-free differentiable action: weight-blended component means for the
  // full variant, the Gaussian mean otherwise. TD3 actor readout.
  Tensor deterministic_action_batch(const Matrix& states, const BatchPrimitives& prim) const;

  struct RolloutResult {
    Eigen::VectorXd action;  // unclipped
    double log_prob;
    MixtureDistribution dist;
  };

  // Env-facing single-state action; never records on the tape. Stochastic
  // mode does exact mixture sampling; deterministic mode omits all noise.
  RolloutResult act(const Eigen::VectorXd& state, const std::vector<GaussianAction>& prim,
                    PolicyMode mode, Rng& rng) const;

  // Noise-free action distribution at one state (relabel scoring, tests).
  MixtureDistribution distribution(const Eigen::VectorXd& state,
                                   const std::vector<GaussianAction>& prim) const;

  // Raw attention scores q through the embed/encoder/decoder chain (full
  // variant only); differentiable w.r.t. every composer parameter.
  Tensor attention_scores_batch(const Matrix& states, const BatchPrimitives& prim) const;

  void collect_params(const std::string& prefix, NamedParams& out) const;
  std::vector<Tensor> params() const;
  CompositePolicy clone_frozen() const;

  const Config& config() const { return cfg_; }

 private:
  struct FullGraph {
    Tensor log_weights;  // B x K
    Tensor weights;      // B x K
  };
  Tensor attention_q_graph(const Matrix& states, const BatchPrimitives& prim) const;
  FullGraph full_weights_graph(const Matrix& states, const BatchPrimitives& prim, PolicyMode mode,
                               const Matrix& weight_gumbels) const;
  Mlp::GaussianOut gaussian_graph(const Matrix& states, const BatchPrimitives& prim) const;
  Tensor mixture_log_prob_graph(const Tensor& log_weights, const BatchPrimitives& prim,
                                const Tensor& actions) const;
  void check_inputs(const Matrix& states, const BatchPrimitives& prim) const;

  Config cfg_;
  Linear embed_;     // 2*action_dim -> d            (full, no_attention)
  BiRnn encoder_;    // d -> d                       (full, no_attention)
  Mlp decoder_;      // [2d + state] -> d or gaussian head
  AttentionParams att_;  // full only
  Mlp ff_;           // att_brnn_removed / flat_baseline
};

}  // namespace copo
