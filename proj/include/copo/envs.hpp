#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "copo/rng.hpp"
#include "json.hpp"

namespace copo {

// Reward coefficients, Appendix-style lambda names.
struct NavCoeffs {
  double goal = 0.3, velocity = 0.0, survive = 0.05, control = 0.01, contact = 0.001;
  double reward_scale = 5.0;
};
struct MazeCoeffs {
  double goal = 1.0, control = 0.05, contact = 0.5e-4;
};
struct PusherCoeffs {
  double goal = 1.0, object = 0.1, control = 0.1;
};
struct HurdleCoeffs {
  double goal = 0.1, hurdle_count = 1.0, reach_goal = 1000.0, vertical = 0.3, forward = 1.0,
         collision = 2.0;
};

double reward_nav(const Eigen::Vector2d& pos, const Eigen::Vector2d& goal, double speed, bool alive,
                  const Eigen::VectorXd& action, bool contact, const NavCoeffs& c = {});
double reward_maze(const Eigen::Vector2d& pos, const Eigen::Vector2d& goal,
                   const Eigen::VectorXd& action, bool contact, const MazeCoeffs& c = {});
double reward_pusher(const Eigen::Vector2d& object, const Eigen::Vector2d& goal,
                     const Eigen::Vector2d& agent, const Eigen::VectorXd& action,
                     const PusherCoeffs& c = {});
double reward_hurdle(const Eigen::Vector2d& pos_xz, const Eigen::Vector2d& goal_xz,
                     int hurdles_ahead, bool at_goal, double vz, double vx, bool collided,
                     const Eigen::VectorXd& action, const HurdleCoeffs& c = {});

struct Aabb {
  double x0, y0, x1, y1;
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

struct EnvSpec {
  std::string name;
  std::string family;  // nav | pusher | hurdle (selects the scripted primitive set)
  Eigen::Index shat_width = 0;
  Eigen::Index goal_width = 0;  // task-information block width, 0 when G is empty
  Eigen::Index action_dim = 2;
  double action_bound = 1.0;
  int horizon = 500;
  double goal_radius = 0.25;
  Eigen::Index state_width() const { return shat_width + goal_width; }
};

struct EnvObservation {
  Eigen::VectorXd s;  // [shat, g]
  Eigen::Index shat_width = 0;
  Eigen::VectorXd shat() const { return s.head(shat_width); }
  Eigen::VectorXd goal_info() const { return s.tail(s.size() - shat_width); }
};

struct StepInfo {
  bool goal_reached = false;
  bool timeout = false;
  bool wall_contact = false;
};

struct StepResult {
  EnvObservation obs;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

// Deterministic point-mass environments: position += clip(action) * 0.25 per
// step, per-axis wall resolution, movable blocks displaced on contact.
class PointEnv {
 public:
  static PointEnv make(const std::string& name);
  static std::vector<std::string> registry();

  const EnvSpec& spec() const { return spec_; }

  EnvObservation reset(Rng& rng, bool eval_mode = false);
  StepResult step(const Eigen::VectorXd& action);

  EnvObservation observation() const;
  double distance_to_goal() const;
  double initial_distance() const { return initial_distance_; }
  bool done() const { return done_; }
  const std::vector<Aabb>& walls() const { return walls_; }
  bool in_wall(double x, double y) const;
  const Eigen::Vector2d& agent() const { return agent_; }
  const Eigen::Vector2d& goal() const { return goal_; }
  // xy (or xz) position block of the state, the hiro goal subspace
  Eigen::Index goal_space_dims() const { return 2; }

  nlohmann::json state_to_json() const;
  void state_from_json(const nlohmann::json& j);

  static constexpr double kDelta = 0.25;

 private:
  enum class Kind { RandomGoal, CrossMaze, UMaze, Push, Pusher, Hurdle };

  explicit PointEnv(Kind kind);
  bool free_at(double x, double y) const;
  void move_agent(const Eigen::Vector2d& delta, bool& contact);
  bool goal_captured() const;
  double compute_reward(const Eigen::VectorXd& commanded, bool contact, bool hurdle_hit) const;

  Kind kind_;
  EnvSpec spec_;
  Aabb bounds_{0, 0, 0, 0};
  std::vector<Aabb> walls_;
  std::vector<double> hurdle_x_;  // hurdle centers (hurdle env)
  double hurdle_halfwidth_ = 0.25;
  double hurdle_height_ = 0.75;

  Eigen::Vector2d agent_{0, 0};   // (x, y), or (x, z) for hurdle
  Eigen::Vector2d velocity_{0, 0};
  Eigen::Vector2d block_{0, 0};   // movable block / pushable object
  Eigen::Vector2d goal_{0, 0};
  int step_count_ = 0;
  bool done_ = true;  // must reset before stepping
  bool eval_mode_ = false;
  double initial_distance_ = 0.0;
};

}  // namespace copo
