// Copyright 2026 The Flowplan Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "flowplan/rng.hpp"

namespace flowplan {

// Clamped B-spline basis on the phase interval [0, 1]. End knots are
// repeated degree+1 times so the curve interpolates the first and last
// control points; interior knots are uniform.
struct SplineBasis {
  int degree = 3;
  Eigen::VectorXd knots;  // nondecreasing, size n_ctrl + degree + 1
  int n_ctrl = 0;

  // Basis for n_via interior via-points plus the four boundary control
  // points (start/end position and velocity). Interior knots sit at
  // i/(n_via+1); choosing n_via+1 a power of two keeps them on dyadic
  // grids, which the integration-error metric relies on.
  static SplineBasis clamped_cubic(int n_via);

  // Validating constructor used by clamped_cubic and tests.
  static SplineBasis from_knots(int degree, Eigen::VectorXd knots);
};

// Boundary conditions: start/end positions (config units) and velocities
// (config units per second).
struct BoundaryConditions {
  Eigen::VectorXd start;
  Eigen::VectorXd start_velocity;
  Eigen::VectorXd goal;
  Eigen::VectorXd goal_velocity;

  static BoundaryConditions rest_to_rest(const Eigen::VectorXd& start,
                                         const Eigen::VectorXd& goal);
};

// Interior via-points plus boundary record and total duration.
struct ViaPointSpec {
  Eigen::MatrixXd via;  // n x D
  BoundaryConditions bc;
  double duration = 1.0;  // seconds, > 0

  int n_via() const { return static_cast<int>(via.rows()); }
  int dim() const { return static_cast<int>(via.cols()); }
};

// Three aligned profiles on a uniform phase grid.
struct Trajectory {
  Eigen::MatrixXd positions;      // L x D, config units
  Eigen::MatrixXd velocities;     // L x D, units/s
  Eigen::MatrixXd accelerations;  // L x D, units/s^2
  double duration = 1.0;

  int length() const { return static_cast<int>(positions.rows()); }
  int dim() const { return static_cast<int>(positions.cols()); }
};

// Row of basis values (order 0) or exact analytic derivative values
// (order 1 or 2) over all n_ctrl control points at phase s in [0, 1].
Eigen::VectorXd basis_row(const SplineBasis& basis, double s,
                          int derivative_order);

// L x n_ctrl matrix stacking basis_row over the uniform phase grid.
// Precomputed once per (basis, L) in hot loops.
Eigen::MatrixXd basis_matrix(const SplineBasis& basis, int L,
                             int derivative_order);

// Control points realizing the spec: first/last rows pin the endpoint
// positions, second/second-to-last pin the endpoint velocities through the
// clamped-spline derivative identity, interior rows are the via-points.
Eigen::MatrixXd control_points(const ViaPointSpec& spec,
                               const SplineBasis& basis);

// Evaluates positions and exact analytic velocity/acceleration profiles on
// a uniform L-point phase grid. Velocities carry the 1/T scaling and
// accelerations 1/T^2 from the phase-to-time change of variables.
Trajectory eval_trajectory(const ViaPointSpec& spec, const SplineBasis& basis,
                           int L);

// Fast path used by the optimizer: same result as eval_trajectory given
// precomputed basis matrices for orders 0..2.
Trajectory eval_trajectory_cached(const ViaPointSpec& spec,
                                  const SplineBasis& basis,
                                  const Eigen::MatrixXd& phi0,
                                  const Eigen::MatrixXd& phi1,
                                  const Eigen::MatrixXd& phi2);

// Adds i.i.d. Gaussian increments (discrete Brownian steps) of standard
// deviation sigma to every via-point coordinate.
Eigen::MatrixXd perturb_via_points(const Eigen::MatrixXd& via, double sigma,
                                   std::uint64_t seed);
Eigen::MatrixXd perturb_via_points(const Eigen::MatrixXd& via, double sigma,
                                   Rng& rng);

}  // namespace flowplan
