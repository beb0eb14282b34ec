#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "copo/nets.hpp"

namespace copo {

// One primitive's action distribution over the shared action space.
struct GaussianAction {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;  // strictly positive, same width as mu
};

// A low-level policy mapping the primitive-visible state (never the goal) to
// a Gaussian over actions. Primitives are immutable once constructed.
struct PrimitivePolicy {
  std::string name;
  Eigen::Index state_width;  // expected width of the primitive state
  std::function<GaussianAction(const Eigen::VectorXd&)> act;
};

// Ordered primitive set; mixture weights downstream are index-aligned with
// this ordering for the lifetime of a run.
struct Ensemble {
  std::vector<PrimitivePolicy> members;

  std::size_t size() const { return members.size(); }
};

// One Gaussian per member, index-aligned.
std::vector<GaussianAction> ensemble_act(const Ensemble& e, const Eigen::VectorXd& shat);

// Drops the trailing goal block: s = [shat, g]. With an empty goal space this
// is the identity.
Eigen::VectorXd strip_goal(const Eigen::VectorXd& s, Eigen::Index shat_width);

// Scripted constant-Gaussian primitives per environment family:
//   nav    -> {left, right, up, down}
//   pusher -> {push-left, push-down}
//   hurdle -> {run-forward, jump}
// mu is a unit move in the named direction scaled to the action bound;
// sigma is 0.1 of the action range on every axis.
Ensemble make_scripted_primitives(const std::string& env_family, Eigen::Index state_width,
                                  double action_bound = 1.0);

// Wraps a serialized Gaussian-head Mlp (nets checkpoint format) as a
// primitive, for externally trained policies.
PrimitivePolicy make_mlp_primitive(const std::string& name, Mlp net);

}  // namespace copo
