// Copyright 2026 The Flowplan Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flowplan/envs.hpp"
#include "flowplan/splines.hpp"

namespace flowplan {

// Weights of the trajectory cost terms (collision, smoothness, timing).
struct CostWeights {
  double collision = 100.0;
  double smooth = 1.0;
  double time = 0.1;

  void validate() const;
};

// Weighted sum of (a) squared hinge collision penalty at margin, (b)
// integrated squared acceleration, (c) duration.
double trajectory_cost(const Trajectory& traj, const WorldSDF& env,
                       const CostWeights& weights, double margin);

// CMA-ES internal state, exposed for inspection and tests.
struct CmaesState {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  double step_size = 0.0;
  Eigen::VectorXd path_sigma;
  Eigen::VectorXd path_cov;
  int generation = 0;
};

struct CmaesResult {
  Eigen::VectorXd best;
  double best_cost = 0.0;
  std::vector<double> history;  // best-so-far cost per generation
  int evaluations = 0;
};

// Standard CMA-ES with rank-mu and rank-1 covariance updates and cumulative
// step-size adaptation; population 4 + floor(3 ln dim), log-rank weights.
// Non-finite costs are treated as +inf; a generation where every candidate
// is non-finite aborts with a diagnostic.
CmaesResult cmaes_minimize(
    const std::function<double(const Eigen::VectorXd&)>& cost_fn,
    const Eigen::VectorXd& init_mean, double init_sigma, int budget,
    std::uint64_t seed);

// One expert trajectory with the task that produced it.
struct ExpertRecord {
  Trajectory trajectory;
  TaskObjective objective;
  std::string env_id;
  int task_id = 0;
  int sample_id = 0;
};

// Generation configuration recorded alongside the records.
struct DatasetMeta {
  int schema_version = 1;
  int L = 64;
  int D = 2;
  double T = 5.0;
  std::string env_id;
  int n_via = 7;
  double sigma = 0.05;
  double margin = 0.0;
  CostWeights weights;
  int cmaes_budget = 3000;
  double min_separation = 0.0;
  std::uint64_t seed = 0;
  int tasks_requested = 0;
  int tasks_skipped = 0;
};

struct ExpertDataset {
  DatasetMeta meta;
  std::vector<ExpertRecord> records;

  void validate(const WorldSDF& env) const;
};

struct DatasetConfig {
  int n_tasks = 100;
  int samples_per_task = 10;
  double sigma = 0.05;
  int L = 64;
  double T = 5.0;
  int n_via = 7;
  CostWeights weights;
  int cmaes_budget = 3000;
  int task_retries = 3;
  double min_separation = 0.0;  // 0 -> 0.5 * extent
  bool parallel = true;
  std::uint64_t seed = 0;
};

// Runs CMA-ES per sampled task to find optimal via-points, then emits
// samples_per_task Brownian-perturbed spline trajectories per task,
// resampling perturbations that collide (50 tries, then sigma halves).
// Tasks whose optimization never clears the environment are skipped and
// counted in meta.tasks_skipped.
ExpertDataset build_dataset(const WorldSDF& env, const DatasetConfig& config);

// Straight-line via-point initialization between start and goal.
Eigen::MatrixXd straight_line_via(const TaskObjective& objective, int n_via);

// Optimizes via-points for one task; returns true when the resulting base
// trajectory is collision-free at the environment margin.
bool optimize_task(const WorldSDF& env, const TaskObjective& objective,
                   const DatasetConfig& config, std::uint64_t seed,
                   Eigen::MatrixXd* via_out);

// Dataset file: self-describing structured text, one header record then one
// record per trajectory with the three L x D matrices row-major at full
// precision (numeric payload round-trips bit-identically).
void save_dataset(const ExpertDataset& dataset, const std::string& path);
ExpertDataset load_dataset(const std::string& path);

}  // namespace flowplan
