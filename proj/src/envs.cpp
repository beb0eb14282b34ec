#include "copo/envs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace copo {

double reward_nav(const Eigen::Vector2d& pos, const Eigen::Vector2d& goal, double speed, bool alive,
                  const Eigen::VectorXd& action, bool contact, const NavCoeffs& c) {
  double dist_sq = (pos - goal).squaredNorm();
  double ctrl = action.squaredNorm();
  double r = -c.goal * dist_sq + c.velocity * speed + c.survive * (alive ? 1.0 : 0.0) -
             c.control * ctrl - c.contact * (contact ? 1.0 : 0.0);
  return c.reward_scale * r;
}

double reward_maze(const Eigen::Vector2d& pos, const Eigen::Vector2d& goal,
                   const Eigen::VectorXd& action, bool contact, const MazeCoeffs& c) {
  // distance term implemented as a penalty, matching the sibling rewards
  return -c.goal * (pos - goal).squaredNorm() - c.control * action.squaredNorm() -
         c.contact * (contact ? 1.0 : 0.0);
}

double reward_pusher(const Eigen::Vector2d& object, const Eigen::Vector2d& goal,
                     const Eigen::Vector2d& agent, const Eigen::VectorXd& action,
                     const PusherCoeffs& c) {
  return -c.goal * (object - goal).squaredNorm() - c.object * (agent - object).squaredNorm() -
         c.control * action.squaredNorm();
}

double reward_hurdle(const Eigen::Vector2d& pos_xz, const Eigen::Vector2d& goal_xz,
                     int hurdles_ahead, bool at_goal, double vz, double vx, bool collided,
                     const Eigen::VectorXd& action, const HurdleCoeffs& c) {
  (void)action;  // control cost is folded into the collision/count terms here
  return -c.goal * (pos_xz - goal_xz).squaredNorm() - c.hurdle_count * hurdles_ahead +
         c.reach_goal * (at_goal ? 1.0 : 0.0) + c.vertical * std::abs(vz) + c.forward * vx -
         c.collision * (collided ? 1.0 : 0.0);
}

PointEnv PointEnv::make(const std::string& name) {
  if (name == "point_random_goal") return PointEnv(Kind::RandomGoal);
  if (name == "point_cross_maze") return PointEnv(Kind::CrossMaze);
  if (name == "point_umaze") return PointEnv(Kind::UMaze);
  if (name == "point_push") return PointEnv(Kind::Push);
  if (name == "point_pusher") return PointEnv(Kind::Pusher);
  if (name == "point_hurdle") return PointEnv(Kind::Hurdle);
  std::string known;
  for (const std::string& n : registry()) known += (known.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown environment '" + name + "', known environments: " + known);
}

std::vector<std::string> PointEnv::registry() {
  return {"point_random_goal", "point_cross_maze", "point_umaze",
          "point_push",        "point_pusher",     "point_hurdle"};
}

PointEnv::PointEnv(Kind kind) : kind_(kind) {
  switch (kind) {
    case Kind::RandomGoal:
      spec_ = {"point_random_goal", "nav", 2, 2, 2, 1.0, 500, 0.25};
      bounds_ = {-6, -6, 6, 6};
      break;
    case Kind::CrossMaze:
      spec_ = {"point_cross_maze", "nav", 2, 2, 2, 1.0, 500, 1.0};
      bounds_ = {-7.5, -1.5, 7.5, 13.5};
      walls_ = {{-7.5, -1.5, -1.5, 4.5}, {1.5, -1.5, 7.5, 4.5},
                {-7.5, 7.5, -1.5, 13.5}, {1.5, 7.5, 7.5, 13.5}};
      break;
    case Kind::UMaze:
      spec_ = {"point_umaze", "nav", 2, 2, 2, 1.0, 500, 5.0};
      bounds_ = {-4, -4, 20, 20};
      walls_ = {{-4, 8, 12, 12}};
      break;
    case Kind::Push:
      spec_ = {"point_push", "nav", 4, 2, 2, 1.0, 500, 5.0};
      bounds_ = {-12, -4, 12, 20};
      walls_ = {{-12, 6, -2, 10}, {2, 6, 12, 10}};
      break;
    case Kind::Pusher:
      spec_ = {"point_pusher", "pusher", 6, 0, 2, 1.0, 200, 0.25};
      bounds_ = {-5, -5, 5, 5};
      break;
    case Kind::Hurdle:
      spec_ = {"point_hurdle", "hurdle", 5, 1, 2, 1.0, 200, 0.5};
      bounds_ = {-1, 0, 14, 5};
      hurdle_x_ = {3.0, 6.0, 9.0};
      break;
  }
}

bool PointEnv::in_wall(double x, double y) const {
  for (const Aabb& w : walls_)
    if (w.contains(x, y)) return true;
  return false;
}

bool PointEnv::free_at(double x, double y) const {
  if (!bounds_.contains(x, y)) return false;
  return !in_wall(x, y);
}

void PointEnv::move_agent(const Eigen::Vector2d& delta, bool& contact) {
  // per-axis resolution: a blocked axis stops motion along that axis only
  double nx = agent_.x() + delta.x();
  if (free_at(nx, agent_.y()))
    agent_.x() = nx;
  else
    contact = true;
  double ny = agent_.y() + delta.y();
  if (free_at(agent_.x(), ny))
    agent_.y() = ny;
  else
    contact = true;
}

bool PointEnv::goal_captured() const {
  switch (kind_) {
    case Kind::Pusher:
      return (block_ - goal_).norm() <= spec_.goal_radius;
    case Kind::Hurdle:
      return (agent_ - goal_).norm() <= spec_.goal_radius;
    default:
      return (agent_ - goal_).norm() <= spec_.goal_radius;
  }
}

EnvObservation PointEnv::observation() const {
  EnvObservation o;
  o.shat_width = spec_.shat_width;
  Eigen::VectorXd s(spec_.state_width());
  switch (kind_) {
    case Kind::RandomGoal:
    case Kind::CrossMaze:
    case Kind::UMaze:
      s << agent_.x(), agent_.y(), goal_.x(), goal_.y();
      break;
    case Kind::Push:
      s << agent_.x(), agent_.y(), block_.x(), block_.y(), goal_.x(), goal_.y();
      break;
    case Kind::Pusher:
      s << agent_.x(), agent_.y(), block_.x(), block_.y(), goal_.x(), goal_.y();
      break;
    case Kind::Hurdle: {
      double next_dx = bounds_.x1 - agent_.x();
      for (double hx : hurdle_x_)
        if (hx + hurdle_halfwidth_ > agent_.x()) {
          next_dx = hx - agent_.x();
          break;
        }
      s << agent_.x(), agent_.y(), velocity_.x(), velocity_.y(), next_dx, goal_.x();
      break;
    }
  }
  o.s = std::move(s);
  return o;
}

double PointEnv::distance_to_goal() const {
  if (kind_ == Kind::Pusher) return (block_ - goal_).norm();
  return (agent_ - goal_).norm();
}

EnvObservation PointEnv::reset(Rng& rng, bool eval_mode) {
  eval_mode_ = eval_mode;
  step_count_ = 0;
  done_ = false;
  velocity_.setZero();
  switch (kind_) {
    case Kind::RandomGoal: {
      agent_ = {0, 0};
      double r = 5.0 * std::sqrt(uniform01(rng));
      double th = 2.0 * M_PI * uniform01(rng);
      goal_ = {r * std::cos(th), r * std::sin(th)};
      break;
    }
    case Kind::CrossMaze: {
      agent_ = {0, 0};
      const Eigen::Vector2d targets[3] = {{-6, 6}, {6, 6}, {0, 12}};
      goal_ = targets[rng() % 3];
      break;
    }
    case Kind::UMaze: {
      agent_ = {0, 0};
      if (eval_mode) {
        goal_ = {0, 19};
      } else {
        do {
          goal_ = {uniform(rng, -4, 20), uniform(rng, -4, 20)};
        } while (in_wall(goal_.x(), goal_.y()));
      }
      break;
    }
    case Kind::Push: {
      agent_ = {0, 0};
      block_ = {0, 8};
      if (eval_mode) {
        goal_ = {0, 19};
      } else {
        do {
          goal_ = {uniform(rng, -12, 12), uniform(rng, -4, 20)};
        } while (in_wall(goal_.x(), goal_.y()));
      }
      break;
    }
    case Kind::Pusher: {
      agent_ = Eigen::Vector2d(3, 3) +
               Eigen::Vector2d(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5));
      block_ = Eigen::Vector2d(2, 2) +
               Eigen::Vector2d(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5));
      goal_ = {0, 0};
      break;
    }
    case Kind::Hurdle: {
      agent_ = {0, 0};
      goal_ = {12, 0};
      break;
    }
  }
  initial_distance_ = std::max(distance_to_goal(), 1e-9);
  return observation();
}

double PointEnv::compute_reward(const Eigen::VectorXd& commanded, bool contact,
                                bool hurdle_hit) const {
  switch (kind_) {
    case Kind::RandomGoal:
    case Kind::CrossMaze:
      return reward_nav(agent_, goal_, velocity_.norm(), true, commanded, contact);
    case Kind::UMaze:
    case Kind::Push:
      return reward_maze(agent_, goal_, commanded, contact);
    case Kind::Pusher:
      return reward_pusher(block_, goal_, agent_, commanded);
    case Kind::Hurdle: {
      int ahead = 0;
      for (double hx : hurdle_x_)
        if (hx + hurdle_halfwidth_ > agent_.x()) ++ahead;
      return reward_hurdle(agent_, goal_, ahead, goal_captured(), velocity_.y(), velocity_.x(),
                           hurdle_hit, commanded);
    }
  }
  return 0.0;
}

StepResult PointEnv::step(const Eigen::VectorXd& action) {
  if (done_) throw std::runtime_error("step: episode already ended, call reset first");
  if (action.size() != spec_.action_dim)
    throw std::invalid_argument("step: action width " + std::to_string(action.size()) +
                                " does not match env action dim " + std::to_string(spec_.action_dim));
  Eigen::VectorXd clipped = action.cwiseMax(-spec_.action_bound).cwiseMin(spec_.action_bound);
  Eigen::Vector2d prev = agent_;
  bool contact = false;
  bool hurdle_hit = false;

  if (kind_ == Kind::Hurdle) {
    // x: blocked by a hurdle unless above it; z: thrust against constant sink
    double nx = agent_.x() + clipped[0] * kDelta;
    double nz = std::max(0.0, agent_.y() + (clipped[1] - 0.5) * 2.0 * kDelta);
    nz = std::min(nz, bounds_.y1);
    double lo = std::min(agent_.x(), nx), hi = std::max(agent_.x(), nx);
    for (double hx : hurdle_x_) {
      if (hi >= hx - hurdle_halfwidth_ && lo <= hx + hurdle_halfwidth_ && nz < hurdle_height_) {
        hurdle_hit = true;
        nx = agent_.x();
        break;
      }
    }
    nx = std::clamp(nx, bounds_.x0, bounds_.x1);
    agent_ = {nx, nz};
  } else {
    move_agent(Eigen::Vector2d(clipped[0], clipped[1]) * kDelta, contact);
    if (kind_ == Kind::Push || kind_ == Kind::Pusher) {
      // contact rule: overlapping the object displaces it along the agent's motion
      double reach = kind_ == Kind::Push ? 2.0 + 0.5 : 0.5;  // push block is a 4x4 box
      Eigen::Vector2d diff = agent_ - block_;
      bool touching = kind_ == Kind::Push
                          ? (std::abs(diff.x()) <= reach && std::abs(diff.y()) <= reach)
                          : diff.norm() <= reach;
      if (touching) {
        Eigen::Vector2d displacement = agent_ - prev;
        Eigen::Vector2d nb = block_ + displacement;
        nb.x() = std::clamp(nb.x(), bounds_.x0, bounds_.x1);
        nb.y() = std::clamp(nb.y(), bounds_.y0, bounds_.y1);
        block_ = nb;
      }
    }
  }

  velocity_ = (agent_ - prev) / kDelta;
  ++step_count_;

  StepResult out;
  out.info.goal_reached = goal_captured();
  out.info.timeout = step_count_ >= spec_.horizon;
  out.info.wall_contact = contact || hurdle_hit;
  out.reward = compute_reward(action, contact, hurdle_hit);
  done_ = out.info.goal_reached || out.info.timeout;
  out.done = done_;
  out.obs = observation();
  return out;
}

nlohmann::json PointEnv::state_to_json() const {
  return nlohmann::json{{"agent", {agent_.x(), agent_.y()}},
                        {"velocity", {velocity_.x(), velocity_.y()}},
                        {"block", {block_.x(), block_.y()}},
                        {"goal", {goal_.x(), goal_.y()}},
                        {"step_count", step_count_},
                        {"done", done_},
                        {"eval_mode", eval_mode_},
                        {"initial_distance", initial_distance_}};
}

void PointEnv::state_from_json(const nlohmann::json& j) {
  agent_ = {j.at("agent")[0].get<double>(), j.at("agent")[1].get<double>()};
  velocity_ = {j.at("velocity")[0].get<double>(), j.at("velocity")[1].get<double>()};
  block_ = {j.at("block")[0].get<double>(), j.at("block")[1].get<double>()};
  goal_ = {j.at("goal")[0].get<double>(), j.at("goal")[1].get<double>()};
  step_count_ = j.at("step_count").get<int>();
  done_ = j.at("done").get<bool>();
  eval_mode_ = j.at("eval_mode").get<bool>();
  initial_distance_ = j.at("initial_distance").get<double>();
}

}  // namespace copo
