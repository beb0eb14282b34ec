#include "copo/ensemble.hpp"

#include <memory>
#include <stdexcept>

namespace copo {

std::vector<GaussianAction> ensemble_act(const Ensemble& e, const Eigen::VectorXd& shat) {
  if (e.members.empty()) throw std::invalid_argument("ensemble_act: empty ensemble");
  std::vector<GaussianAction> out;
  out.reserve(e.members.size());
  for (const PrimitivePolicy& p : e.members) {
    if (shat.size() != p.state_width)
      throw std::invalid_argument("ensemble_act: state width " + std::to_string(shat.size()) +
                                  " does not match primitive '" + p.name + "' width " +
                                  std::to_string(p.state_width));
    out.push_back(p.act(shat));
  }
  return out;
}

Eigen::VectorXd strip_goal(const Eigen::VectorXd& s, Eigen::Index shat_width) {
  if (shat_width <= 0)
    throw std::invalid_argument("strip_goal: declared primitive state width must be positive, got " +
                                std::to_string(shat_width));
  if (s.size() < shat_width)
    throw std::invalid_argument("strip_goal: state of width " + std::to_string(s.size()) +
                                " shorter than declared primitive width " + std::to_string(shat_width));
  return s.head(shat_width);
}

namespace {

PrimitivePolicy constant_primitive(std::string name, Eigen::Index state_width, Eigen::VectorXd mu,
                                   double sigma) {
  Eigen::VectorXd sig = Eigen::VectorXd::Constant(mu.size(), sigma);
  return PrimitivePolicy{std::move(name), state_width,
                         [mu = std::move(mu), sig](const Eigen::VectorXd&) {
                           return GaussianAction{mu, sig};
                         }};
}

}  // namespace

Ensemble make_scripted_primitives(const std::string& env_family, Eigen::Index state_width,
                                  double action_bound) {
  double sigma = 0.1 * (2.0 * action_bound);  // 0.1 of the action range
  auto dir = [&](double x, double y) {
    Eigen::VectorXd v(2);
    v << x * action_bound, y * action_bound;
    return v;
  };
  Ensemble e;
  if (env_family == "nav") {
    e.members.push_back(constant_primitive("left", state_width, dir(-1, 0), sigma));
    e.members.push_back(constant_primitive("right", state_width, dir(1, 0), sigma));
    e.members.push_back(constant_primitive("up", state_width, dir(0, 1), sigma));
    e.members.push_back(constant_primitive("down", state_width, dir(0, -1), sigma));
  } else if (env_family == "pusher") {
    e.members.push_back(constant_primitive("push-left", state_width, dir(-1, 0), sigma));
    e.members.push_back(constant_primitive("push-down", state_width, dir(0, -1), sigma));
  } else if (env_family == "hurdle") {
    e.members.push_back(constant_primitive("run-forward", state_width, dir(1, 0), sigma));
    e.members.push_back(constant_primitive("jump", state_width, dir(0, 1), sigma));
  } else {
    throw std::invalid_argument("make_scripted_primitives: unknown family '" + env_family +
                                "', known families: nav, pusher, hurdle");
  }
  return e;
}

PrimitivePolicy make_mlp_primitive(const std::string& name, Mlp net) {
  auto shared = std::make_shared<Mlp>(std::move(net));
  return PrimitivePolicy{name, shared->input_width(), [shared](const Eigen::VectorXd& shat) {
                           autograd::NoGradGuard guard;
                           Tensor x = Tensor::row(shat);
                           auto out = shared->forward_gaussian(x);
                           GaussianAction a;
                           a.mu = out.mu.value().row(0).transpose();
                           a.sigma = out.sigma.value().row(0).transpose();
                           return a;
                         }};
}

}  // namespace copo
