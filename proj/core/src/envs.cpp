// Copyright 2026 The Flowplan Authors
// SPDX-License-Identifier: Apache-2.0

#include "flowplan/envs.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace flowplan {

namespace {

double ball_sdf(const Obstacle& o, const Eigen::VectorXd& p) {
  return (p - o.center).norm() - o.radius;
}

Eigen::VectorXd ball_gradient(const Obstacle& o, const Eigen::VectorXd& p) {
  Eigen::VectorXd d = p - o.center;
  const double n = d.norm();
  if (n < 1e-300) {
    // Center of the ball: gradient direction is arbitrary; pick +x.
    Eigen::VectorXd g = Eigen::VectorXd::Zero(p.size());
    g[0] = 1.0;
    return g;
  }
  return d / n;
}

double box_sdf(const Obstacle& o, const Eigen::VectorXd& p) {
  const Eigen::VectorXd c = 0.5 * (o.box_min + o.box_max);
  const Eigen::VectorXd h = 0.5 * (o.box_max - o.box_min);
  const Eigen::VectorXd q = (p - c).cwiseAbs() - h;
  const double outside = q.cwiseMax(0.0).norm();
  const double inside = std::min(q.maxCoeff(), 0.0);
  return outside + inside;
}

Eigen::VectorXd box_gradient(const Obstacle& o, const Eigen::VectorXd& p) {
  const Eigen::VectorXd c = 0.5 * (o.box_min + o.box_max);
  const Eigen::VectorXd h = 0.5 * (o.box_max - o.box_min);
  const Eigen::VectorXd d = p - c;
  const Eigen::VectorXd q = d.cwiseAbs() - h;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(p.size());
  if ((q.array() > 0.0).any()) {
    const Eigen::VectorXd qpos = q.cwiseMax(0.0);
    const double n = qpos.norm();
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (q[i] > 0.0) g[i] = (d[i] >= 0.0 ? 1.0 : -1.0) * qpos[i] / n;
    }
  } else {
    // Inside: distance grows toward the nearest face.
    Eigen::Index axis = 0;
    q.maxCoeff(&axis);
    g[axis] = d[axis] >= 0.0 ? 1.0 : -1.0;
  }
  return g;
}

}  // namespace

Obstacle Obstacle::ball(const Eigen::VectorXd& center, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("ball radius must be > 0");
  Obstacle o;
  o.kind = Kind::Ball;
  o.center = center;
  o.radius = radius;
  return o;
}

Obstacle Obstacle::box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  if (lo.size() != hi.size() || ((hi - lo).array() <= 0.0).any())
    throw std::invalid_argument("box corners must satisfy lo < hi");
  Obstacle o;
  o.kind = Kind::Box;
  o.box_min = lo;
  o.box_max = hi;
  return o;
}

TaskObjective TaskObjective::between(const Eigen::VectorXd& start,
                                     const Eigen::VectorXd& goal) {
  TaskObjective t;
  t.start = start;
  t.goal = goal;
  t.start_velocity = Eigen::VectorXd::Zero(start.size());
  t.goal_velocity = Eigen::VectorXd::Zero(goal.size());
  return t;
}

double sdf(const WorldSDF& env, const Eigen::VectorXd& p) {
  if (p.size() != env.dim)
    throw std::invalid_argument("query point dimension mismatch");
  double best = std::numeric_limits<double>::infinity();
  for (const Obstacle& o : env.obstacles) {
    const double d = o.kind == Obstacle::Kind::Ball ? ball_sdf(o, p)
                                                    : box_sdf(o, p);
    if (d < best) best = d;
  }
  return best;
}

Eigen::VectorXd sdf_gradient(const WorldSDF& env, const Eigen::VectorXd& p) {
  if (p.size() != env.dim)
    throw std::invalid_argument("query point dimension mismatch");
  if (env.obstacles.empty()) return Eigen::VectorXd::Zero(env.dim);
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_idx = 0;
  for (std::size_t i = 0; i < env.obstacles.size(); ++i) {
    const Obstacle& o = env.obstacles[i];
    const double d = o.kind == Obstacle::Kind::Ball ? ball_sdf(o, p)
                                                    : box_sdf(o, p);
    if (d < best) {  // strict: ties keep the lowest index
      best = d;
      best_idx = i;
    }
  }
  const Obstacle& o = env.obstacles[best_idx];
  return o.kind == Obstacle::Kind::Ball ? ball_gradient(o, p)
                                        : box_gradient(o, p);
}

bool point_is_clear(const WorldSDF& env, const Eigen::VectorXd& p,
                    double margin) {
  if (env.obstacles.empty()) return true;
  return sdf(env, p) >= margin;
}

bool is_collision_free(const Trajectory& traj, const WorldSDF& env,
                       double margin) {
  if (traj.dim() != env.dim)
    throw std::invalid_argument("trajectory/environment dimension mismatch");
  if (env.obstacles.empty()) return true;
  const int L = traj.length();
  for (int i = 0; i < L; ++i) {
    if (sdf(env, traj.positions.row(i).transpose()) < margin) return false;
    if (i + 1 < L) {
      const Eigen::VectorXd mid =
          0.5 * (traj.positions.row(i) + traj.positions.row(i + 1))
              .transpose();
      if (sdf(env, mid) < margin) return false;
    }
  }
  return true;
}

TaskObjective sample_task(const WorldSDF& env, Rng& rng, double min_separation,
                          double margin) {
  const int max_rejections = 10000;
  auto draw = [&]() {
    Eigen::VectorXd p(env.dim);
    for (int d = 0; d < env.dim; ++d)
      p[d] = rng.uniform(env.bounds_min[d], env.bounds_max[d]);
    return p;
  };
  for (int attempt = 0; attempt < max_rejections; ++attempt) {
    const Eigen::VectorXd start = draw();
    if (!point_is_clear(env, start, 2.0 * margin)) continue;
    const Eigen::VectorXd goal = draw();
    if (!point_is_clear(env, goal, 2.0 * margin)) continue;
    if ((goal - start).norm() < min_separation) continue;
    return TaskObjective::between(start, goal);
  }
  throw std::runtime_error("sample_task: environment too dense (10^4 rejections)");
}

WorldSDF make_empty(int dim) {
  WorldSDF env;
  env.dim = dim;
  env.name = dim == 2 ? "empty2d" : "empty3d";
  env.bounds_min = Eigen::VectorXd::Constant(dim, -1.0);
  env.bounds_max = Eigen::VectorXd::Constant(dim, 1.0);
  return env;
}

WorldSDF make_maze2d() {
  WorldSDF env = make_empty(2);
  env.name = "maze2d";
  auto v = [](double x, double y) {
    Eigen::Vector2d p(x, y);
    return Eigen::VectorXd(p);
  };
  // Two offset walls forming an S-shaped passage, plus two round pillars
  // in the open halves.
  env.obstacles.push_back(Obstacle::box(v(-0.70, -1.00), v(-0.30, 0.35)));
  env.obstacles.push_back(Obstacle::box(v(0.30, -0.35), v(0.70, 1.00)));
  env.obstacles.push_back(Obstacle::ball(v(-0.50, 0.72), 0.13));
  env.obstacles.push_back(Obstacle::ball(v(0.50, -0.72), 0.13));
  return env;
}

WorldSDF make_spheres3d() {
  WorldSDF env = make_empty(3);
  env.name = "spheres3d";
  auto v = [](double x, double y, double z) {
    Eigen::Vector3d p(x, y, z);
    return Eigen::VectorXd(p);
  };
  env.obstacles.push_back(Obstacle::ball(v(0.0, 0.0, 0.0), 0.30));
  env.obstacles.push_back(Obstacle::ball(v(0.55, 0.55, 0.30), 0.22));
  env.obstacles.push_back(Obstacle::ball(v(-0.55, -0.55, -0.30), 0.22));
  env.obstacles.push_back(Obstacle::ball(v(0.55, -0.50, -0.45), 0.18));
  env.obstacles.push_back(Obstacle::ball(v(-0.50, 0.55, 0.45), 0.18));
  return env;
}

void save_world(const WorldSDF& env, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.precision(17);
  out << "flowplan-env v1\n";
  out << "name " << env.name << "\n";
  out << "dim " << env.dim << "\n";
  out << "bounds";
  for (int d = 0; d < env.dim; ++d) out << " " << env.bounds_min[d];
  for (int d = 0; d < env.dim; ++d) out << " " << env.bounds_max[d];
  out << "\n";
  for (const Obstacle& o : env.obstacles) {
    if (o.kind == Obstacle::Kind::Ball) {
      out << "ball";
      for (int d = 0; d < env.dim; ++d) out << " " << o.center[d];
      out << " " << o.radius << "\n";
    } else {
      out << "box";
      for (int d = 0; d < env.dim; ++d) out << " " << o.box_min[d];
      for (int d = 0; d < env.dim; ++d) out << " " << o.box_max[d];
      out << "\n";
    }
  }
}

WorldSDF load_world_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open environment file " + path);
  std::string line;
  if (!std::getline(in, line) || line != "flowplan-env v1")
    throw std::runtime_error("bad environment header in " + path);
  WorldSDF env;
  env.dim = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "name") {
      ss >> env.name;
    } else if (tag == "dim") {
      ss >> env.dim;
      if (env.dim != 2 && env.dim != 3)
        throw std::runtime_error("environment dim must be 2 or 3");
    } else if (tag == "bounds") {
      env.bounds_min.resize(env.dim);
      env.bounds_max.resize(env.dim);
      for (int d = 0; d < env.dim; ++d) ss >> env.bounds_min[d];
      for (int d = 0; d < env.dim; ++d) ss >> env.bounds_max[d];
    } else if (tag == "ball") {
      Eigen::VectorXd c(env.dim);
      double r;
      for (int d = 0; d < env.dim; ++d) ss >> c[d];
      ss >> r;
      env.obstacles.push_back(Obstacle::ball(c, r));
    } else if (tag == "box") {
      Eigen::VectorXd lo(env.dim), hi(env.dim);
      for (int d = 0; d < env.dim; ++d) ss >> lo[d];
      for (int d = 0; d < env.dim; ++d) ss >> hi[d];
      env.obstacles.push_back(Obstacle::box(lo, hi));
    } else {
      throw std::runtime_error("unknown environment record: " + tag);
    }
    if (ss.fail())
      throw std::runtime_error("malformed environment record: " + line);
  }
  if (env.dim == 0 || env.bounds_min.size() != env.dim)
    throw std::runtime_error("environment file missing dim/bounds");
  return env;
}

WorldSDF load_world(const std::string& name_or_path) {
  if (name_or_path == "maze2d") return make_maze2d();
  if (name_or_path == "spheres3d") return make_spheres3d();
  if (name_or_path == "empty2d") return make_empty(2);
  if (name_or_path == "empty3d") return make_empty(3);
  if (std::filesystem::exists(name_or_path))
    return load_world_file(name_or_path);
  throw std::runtime_error("unknown environment '" + name_or_path +
                           "' (not a fixture name or readable file)");
}

}  // namespace flowplan
