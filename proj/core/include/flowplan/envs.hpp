// Copyright 2026 The Flowplan Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "flowplan/rng.hpp"
#include "flowplan/splines.hpp"

namespace flowplan {

// Obstacle primitive: a ball (disk in 2D, sphere in 3D) or an axis-aligned
// box. Signed distance is negative inside.
struct Obstacle {
  enum class Kind { Ball, Box };
  Kind kind = Kind::Ball;
  Eigen::VectorXd center;   // ball
  double radius = 0.0;      // ball
  Eigen::VectorXd box_min;  // box
  Eigen::VectorXd box_max;  // box

  static Obstacle ball(const Eigen::VectorXd& center, double radius);
  static Obstacle box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);
};

// Immutable obstacle world with a workspace bounding box. All queries are
// safe to run concurrently.
struct WorldSDF {
  int dim = 2;
  std::string name;  // fixture name or file stem, recorded in dataset meta
  std::vector<Obstacle> obstacles;
  Eigen::VectorXd bounds_min;
  Eigen::VectorXd bounds_max;

  // Largest per-axis side of the workspace box; margins and step sizes are
  // expressed relative to it.
  double extent() const { return (bounds_max - bounds_min).maxCoeff(); }
  double default_margin() const { return 0.03 * extent(); }
};

// Start/goal configurations (with optional boundary velocities) that
// condition the motion field.
struct TaskObjective {
  Eigen::VectorXd start;
  Eigen::VectorXd goal;
  Eigen::VectorXd start_velocity;  // defaults to zero
  Eigen::VectorXd goal_velocity;   // defaults to zero

  static TaskObjective between(const Eigen::VectorXd& start,
                               const Eigen::VectorXd& goal);
};

// Signed distance to the union of obstacles (min over primitives, exact
// analytic formulas). Positive outside every obstacle.
double sdf(const WorldSDF& env, const Eigen::VectorXd& p);

// Analytic gradient of sdf. At exact distance ties between obstacles the
// lowest-index obstacle wins.
Eigen::VectorXd sdf_gradient(const WorldSDF& env, const Eigen::VectorXd& p);

// True iff sdf >= margin at every waypoint and at every segment midpoint
// (one level of subdivision).
bool is_collision_free(const Trajectory& traj, const WorldSDF& env,
                       double margin);
bool point_is_clear(const WorldSDF& env, const Eigen::VectorXd& p,
                    double margin);

// Rejection-samples start/goal from the workspace with clearance
// >= 2 * margin and separation >= min_separation. Throws after 10^4
// rejections (environment too dense).
TaskObjective sample_task(const WorldSDF& env, Rng& rng, double min_separation,
                          double margin);

// Fixture environments shipped with the project.
WorldSDF make_maze2d();
WorldSDF make_spheres3d();
WorldSDF make_empty(int dim);

// Environment descriptor files: structured text listing bounds and
// primitives. load_world accepts a fixture name ("maze2d", "spheres3d",
// "empty2d", "empty3d") or a descriptor file path.
void save_world(const WorldSDF& env, const std::string& path);
WorldSDF load_world_file(const std::string& path);
WorldSDF load_world(const std::string& name_or_path);

}  // namespace flowplan
