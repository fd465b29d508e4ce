// Copyright 2026 The Flowplan Authors
// SPDX-License-Identifier: Apache-2.0

#include "flowplan/splines.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowplan {

namespace {

// Safe division with the 0/0 -> 0 convention of the Cox-de Boor recursion.
inline double div0(double num, double den) {
  return den == 0.0 ? 0.0 : num / den;
}

}  // namespace

SplineBasis SplineBasis::from_knots(int degree, Eigen::VectorXd knots) {
  if (degree < 1) throw std::invalid_argument("spline degree must be >= 1");
  const int n_knots = static_cast<int>(knots.size());
  const int n_ctrl = n_knots - degree - 1;
  if (n_ctrl < degree + 1)
    throw std::invalid_argument("degenerate knot vector: too few knots");
  for (int i = 1; i < n_knots; ++i)
    if (knots[i] < knots[i - 1])
      throw std::invalid_argument("degenerate knot vector: not nondecreasing");
  for (int i = 0; i <= degree; ++i) {
    if (knots[i] != knots[0] || knots[n_knots - 1 - i] != knots[n_knots - 1])
      throw std::invalid_argument(
          "knot vector is not clamped: end multiplicity must be degree+1");
  }
  if (knots[0] == knots[n_knots - 1])
    throw std::invalid_argument("degenerate knot vector: zero span");
  SplineBasis b;
  b.degree = degree;
  b.knots = std::move(knots);
  b.n_ctrl = n_ctrl;
  return b;
}

SplineBasis SplineBasis::clamped_cubic(int n_via) {
  if (n_via < 1) throw std::invalid_argument("need at least one via-point");
  const int degree = 3;
  const int n_ctrl = n_via + 4;
  const int n_knots = n_ctrl + degree + 1;
  Eigen::VectorXd knots(n_knots);
  for (int i = 0; i <= degree; ++i) knots[i] = 0.0;
  for (int i = 1; i <= n_via; ++i)
    knots[degree + i] = static_cast<double>(i) / (n_via + 1);
  for (int i = 0; i <= degree; ++i) knots[n_knots - 1 - i] = 1.0;
  return from_knots(degree, std::move(knots));
}

BoundaryConditions BoundaryConditions::rest_to_rest(
    const Eigen::VectorXd& start, const Eigen::VectorXd& goal) {
  BoundaryConditions bc;
  bc.start = start;
  bc.goal = goal;
  bc.start_velocity = Eigen::VectorXd::Zero(start.size());
  bc.goal_velocity = Eigen::VectorXd::Zero(goal.size());
  return bc;
}

Eigen::VectorXd basis_row(const SplineBasis& basis, double s,
                          int derivative_order) {
  if (s < 0.0 || s > 1.0)
    throw std::invalid_argument("phase s = " + std::to_string(s) +
                                " outside [0,1]");
  if (derivative_order < 0 || derivative_order > basis.degree)
    throw std::invalid_argument("derivative order exceeds spline degree");

  const Eigen::VectorXd& t = basis.knots;
  const int p = basis.degree;
  const int n = basis.n_ctrl;

  // Degree-0 indicators over every span; s == 1 belongs to the last
  // nonempty span so the clamped endpoint evaluates by left-continuity.
  const int n_spans = n + p;  // number of degree-0 functions
  std::vector<Eigen::VectorXd> level(p + 1);
  level[0] = Eigen::VectorXd::Zero(n_spans);
  for (int j = 0; j < n_spans; ++j) {
    const bool inside = (t[j] <= s && s < t[j + 1]);
    const bool at_end = (s == t[t.size() - 1] && t[j] < s && t[j + 1] == s);
    if (inside || at_end) level[0][j] = 1.0;
  }

  for (int q = 1; q <= p; ++q) {
    const int m = n_spans - q;
    level[q].resize(m);
    for (int j = 0; j < m; ++j) {
      const double left = div0(s - t[j], t[j + q] - t[j]);
      const double right = div0(t[j + q + 1] - s, t[j + q + 1] - t[j + 1]);
      level[q][j] = left * level[q - 1][j] + right * level[q - 1][j + 1];
    }
  }

  if (derivative_order == 0) return level[p].head(n);

  // D N^q_j = q * (N^{q-1}_j / (t_{j+q} - t_j)
  //              - N^{q-1}_{j+1} / (t_{j+q+1} - t_{j+1}))
  auto derivative_of = [&](const Eigen::VectorXd& lower, int q) {
    const int m = static_cast<int>(lower.size()) - 1;
    Eigen::VectorXd out(m);
    for (int j = 0; j < m; ++j) {
      out[j] = q * (div0(lower[j], t[j + q] - t[j]) -
                    div0(lower[j + 1], t[j + q + 1] - t[j + 1]));
    }
    return out;
  };

  if (derivative_order == 1) return derivative_of(level[p - 1], p).head(n);

  // Second derivative: differentiate the first-derivative recursion once more.
  const Eigen::VectorXd d_lower = derivative_of(level[p - 2], p - 1);
  return derivative_of(d_lower, p).head(n);
}

Eigen::MatrixXd basis_matrix(const SplineBasis& basis, int L,
                             int derivative_order) {
  if (L < 2) throw std::invalid_argument("phase grid needs L >= 2");
  Eigen::MatrixXd phi(L, basis.n_ctrl);
  for (int i = 0; i < L; ++i) {
    const double s = static_cast<double>(i) / (L - 1);
    phi.row(i) = basis_row(basis, s, derivative_order).transpose();
  }
  return phi;
}

Eigen::MatrixXd control_points(const ViaPointSpec& spec,
                               const SplineBasis& basis) {
  const int n = spec.n_via();
  const int D = spec.dim();
  if (basis.n_ctrl != n + 4)
    throw std::invalid_argument("basis sized for " +
                                std::to_string(basis.n_ctrl - 4) +
                                " via-points, spec has " + std::to_string(n));
  if (spec.bc.start.size() != D || spec.bc.goal.size() != D ||
      spec.bc.start_velocity.size() != D || spec.bc.goal_velocity.size() != D)
    throw std::invalid_argument("boundary condition dimension mismatch");
  if (!(spec.duration > 0.0))
    throw std::invalid_argument("duration must be positive");

  // Clamped cubic endpoint-derivative identity: q'(0) in phase units equals
  // degree * (P1 - P0) / t_{degree+1}, so P1 follows from the requested
  // start velocity (in time units, hence the extra factor T).
  const Eigen::VectorXd& t = basis.knots;
  const int p = basis.degree;
  const double span0 = t[p + 1] - t[p];          // first interior span
  const double span1 = t[t.size() - 1 - p] - t[t.size() - 2 - p];
  const double c0 = spec.duration * span0 / p;
  const double c1 = spec.duration * span1 / p;

  Eigen::MatrixXd ctrl(n + 4, D);
  ctrl.row(0) = spec.bc.start.transpose();
  ctrl.row(1) = spec.bc.start.transpose() +
                c0 * spec.bc.start_velocity.transpose();
  ctrl.middleRows(2, n) = spec.via;
  ctrl.row(n + 2) =
      spec.bc.goal.transpose() - c1 * spec.bc.goal_velocity.transpose();
  ctrl.row(n + 3) = spec.bc.goal.transpose();
  return ctrl;
}

Trajectory eval_trajectory_cached(const ViaPointSpec& spec,
                                  const SplineBasis& basis,
                                  const Eigen::MatrixXd& phi0,
                                  const Eigen::MatrixXd& phi1,
                                  const Eigen::MatrixXd& phi2) {
  const Eigen::MatrixXd ctrl = control_points(spec, basis);
  const double T = spec.duration;
  Trajectory traj;
  traj.positions = phi0 * ctrl;
  traj.velocities = (phi1 * ctrl) / T;
  traj.accelerations = (phi2 * ctrl) / (T * T);
  traj.duration = T;
  traj.positions.row(0) = spec.bc.start.transpose();
  traj.positions.row(traj.length() - 1) = spec.bc.goal.transpose();
  return traj;
}

Trajectory eval_trajectory(const ViaPointSpec& spec, const SplineBasis& basis,
                           int L) {
  const Eigen::MatrixXd ctrl = control_points(spec, basis);
  const double T = spec.duration;
  Trajectory traj;
  traj.positions = basis_matrix(basis, L, 0) * ctrl;
  traj.velocities = (basis_matrix(basis, L, 1) * ctrl) / T;
  traj.accelerations = (basis_matrix(basis, L, 2) * ctrl) / (T * T);
  traj.duration = T;
  // Clamped construction makes endpoints exact; pin them to remove the
  // last bits of floating-point noise from the basis evaluation.
  traj.positions.row(0) = spec.bc.start.transpose();
  traj.positions.row(L - 1) = spec.bc.goal.transpose();
  return traj;
}

Eigen::MatrixXd perturb_via_points(const Eigen::MatrixXd& via, double sigma,
                                   Rng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("sigma must be >= 0");
  if (sigma == 0.0) return via;
  Eigen::MatrixXd out = via;
  for (Eigen::Index i = 0; i < via.rows(); ++i)
    for (Eigen::Index j = 0; j < via.cols(); ++j)
      out(i, j) += rng.normal(0.0, sigma);
  return out;
}

Eigen::MatrixXd perturb_via_points(const Eigen::MatrixXd& via, double sigma,
                                   std::uint64_t seed) {
  Rng rng(seed);
  return perturb_via_points(via, sigma, rng);
}

}  // namespace flowplan
