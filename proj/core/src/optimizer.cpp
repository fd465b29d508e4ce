// Copyright 2026 The Flowplan Authors
// SPDX-License-Identifier: Apache-2.0

#include "flowplan/optimizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace flowplan {

void CostWeights::validate() const {
  if (collision < 0.0 || smooth < 0.0 || time < 0.0)
    throw std::invalid_argument("cost weights must be nonnegative");
  if (collision == 0.0 && smooth == 0.0 && time == 0.0)
    throw std::invalid_argument("at least one cost weight must be positive");
}

double trajectory_cost(const Trajectory& traj, const WorldSDF& env,
                       const CostWeights& weights, double margin) {
  if (traj.dim() != env.dim)
    throw std::invalid_argument("trajectory/environment dimension mismatch");
  if (!traj.positions.allFinite() || !traj.velocities.allFinite() ||
      !traj.accelerations.allFinite())
    throw std::invalid_argument("trajectory contains non-finite values");
  const int L = traj.length();
  const double dt = traj.duration / (L - 1);

  double collision = 0.0;
  if (!env.obstacles.empty() && weights.collision > 0.0) {
    for (int i = 0; i < L; ++i) {
      const double d = sdf(env, traj.positions.row(i).transpose());
      const double pen = std::max(0.0, margin - d);
      collision += pen * pen;
    }
  }
  double smooth = 0.0;
  if (weights.smooth > 0.0) {
    for (int i = 0; i < L; ++i)
      smooth += traj.accelerations.row(i).squaredNorm() * dt;
  }
  return weights.collision * collision + weights.smooth * smooth +
         weights.time * traj.duration;
}

CmaesResult cmaes_minimize(
    const std::function<double(const Eigen::VectorXd&)>& cost_fn,
    const Eigen::VectorXd& init_mean, double init_sigma, int budget,
    std::uint64_t seed) {
  const int n = static_cast<int>(init_mean.size());
  if (n < 1) throw std::invalid_argument("cmaes: empty search space");
  if (!(init_sigma > 0.0))
    throw std::invalid_argument("cmaes: init_sigma must be > 0");

  const int lambda = 4 + static_cast<int>(std::floor(3.0 * std::log(n)));
  if (budget < lambda)
    throw std::invalid_argument("cmaes: budget below population size " +
                                std::to_string(lambda));
  const int mu = lambda / 2;

  // Log-rank recombination weights.
  Eigen::VectorXd w(mu);
  for (int i = 0; i < mu; ++i)
    w[i] = std::log(mu + 0.5) - std::log(i + 1.0);
  w /= w.sum();
  const double mu_eff = 1.0 / w.squaredNorm();

  const double c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
  const double d_sigma =
      1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) +
      c_sigma;
  const double c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
  const double c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff);
  const double c_mu =
      std::min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) /
                              ((n + 2.0) * (n + 2.0) + mu_eff));
  const double chi_n =
      std::sqrt(static_cast<double>(n)) *
      (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

  CmaesState st;
  st.mean = init_mean;
  st.cov = Eigen::MatrixXd::Identity(n, n);
  st.step_size = init_sigma;
  st.path_sigma = Eigen::VectorXd::Zero(n);
  st.path_cov = Eigen::VectorXd::Zero(n);

  Rng rng(seed);
  CmaesResult result;
  result.best_cost = std::numeric_limits<double>::infinity();

  Eigen::MatrixXd eigvec = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd eigval_sqrt = Eigen::VectorXd::Ones(n);

  auto decompose = [&]() {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(st.cov);
    if (es.info() != Eigen::Success)
      throw std::runtime_error("cmaes: covariance eigendecomposition failed");
    eigvec = es.eigenvectors();
    // Repair: clamp eigenvalues so the covariance stays positive definite.
    eigval_sqrt = es.eigenvalues().cwiseMax(1e-12).cwiseSqrt();
  };
  decompose();

  std::vector<Eigen::VectorXd> zs(lambda), ys(lambda), xs(lambda);
  std::vector<double> costs(lambda);
  std::vector<int> order(lambda);

  while (result.evaluations + lambda <= budget) {
    int n_finite = 0;
    for (int k = 0; k < lambda; ++k) {
      Eigen::VectorXd z(n);
      for (int i = 0; i < n; ++i) z[i] = rng.normal();
      zs[k] = z;
      ys[k] = eigvec * (eigval_sqrt.asDiagonal() * z);
      xs[k] = st.mean + st.step_size * ys[k];
      double c = cost_fn(xs[k]);
      if (!std::isfinite(c)) c = std::numeric_limits<double>::infinity();
      else ++n_finite;
      costs[k] = c;
      ++result.evaluations;
    }
    if (n_finite == 0)
      throw std::runtime_error(
          "cmaes: entire generation evaluated non-finite at generation " +
          std::to_string(st.generation));

    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return costs[a] < costs[b]; });

    if (costs[order[0]] < result.best_cost) {
      result.best_cost = costs[order[0]];
      result.best = xs[order[0]];
    }
    result.history.push_back(result.best_cost);

    Eigen::VectorXd y_w = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < mu; ++i) y_w += w[i] * ys[order[i]];
    st.mean += st.step_size * y_w;

    // Cumulative step-size adaptation with C^{-1/2} y_w.
    const Eigen::VectorXd c_inv_sqrt_yw =
        eigvec * (eigval_sqrt.cwiseInverse().asDiagonal() *
                  (eigvec.transpose() * y_w));
    st.path_sigma = (1.0 - c_sigma) * st.path_sigma +
                    std::sqrt(c_sigma * (2.0 - c_sigma) * mu_eff) *
                        c_inv_sqrt_yw;
    const double ps_norm = st.path_sigma.norm();
    const double denom = std::sqrt(
        1.0 - std::pow(1.0 - c_sigma, 2.0 * (st.generation + 1)));
    const bool h_sigma =
        ps_norm / denom < (1.4 + 2.0 / (n + 1.0)) * chi_n;

    st.path_cov = (1.0 - c_c) * st.path_cov;
    if (h_sigma)
      st.path_cov += std::sqrt(c_c * (2.0 - c_c) * mu_eff) * y_w;

    Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < mu; ++i)
      rank_mu += w[i] * (ys[order[i]] * ys[order[i]].transpose());

    st.cov = (1.0 - c_1 - c_mu) * st.cov +
             c_1 * (st.path_cov * st.path_cov.transpose() +
                    (h_sigma ? 0.0 : c_c * (2.0 - c_c)) * st.cov) +
             c_mu * rank_mu;
    st.cov = 0.5 * (st.cov + st.cov.transpose());  // keep exactly symmetric

    st.step_size *= std::exp((c_sigma / d_sigma) * (ps_norm / chi_n - 1.0));
    ++st.generation;
    decompose();
  }

  if (!result.best.size()) {
    // Budget allowed zero generations is excluded by the precondition, so
    // reaching here means every generation was rejected above.
    throw std::runtime_error("cmaes: no candidate evaluated");
  }
  return result;
}

Eigen::MatrixXd straight_line_via(const TaskObjective& objective, int n_via) {
  const int D = static_cast<int>(objective.start.size());
  Eigen::MatrixXd via(n_via, D);
  for (int i = 0; i < n_via; ++i) {
    const double a = static_cast<double>(i + 1) / (n_via + 1);
    via.row(i) = ((1.0 - a) * objective.start + a * objective.goal).transpose();
  }
  return via;
}

bool optimize_task(const WorldSDF& env, const TaskObjective& objective,
                   const DatasetConfig& config, std::uint64_t seed,
                   Eigen::MatrixXd* via_out) {
  const int D = env.dim;
  const int n_via = config.n_via;
  const double margin = env.default_margin();
  const SplineBasis basis = SplineBasis::clamped_cubic(n_via);
  const Eigen::MatrixXd phi0 = basis_matrix(basis, config.L, 0);
  const Eigen::MatrixXd phi1 = basis_matrix(basis, config.L, 1);
  const Eigen::MatrixXd phi2 = basis_matrix(basis, config.L, 2);

  ViaPointSpec spec;
  spec.bc = BoundaryConditions::rest_to_rest(objective.start, objective.goal);
  spec.bc.start_velocity = objective.start_velocity;
  spec.bc.goal_velocity = objective.goal_velocity;
  spec.duration = config.T;

  auto cost_of_via = [&](const Eigen::VectorXd& flat) {
    ViaPointSpec candidate = spec;
    candidate.via =
        Eigen::Map<const Eigen::MatrixXd>(flat.data(), n_via, D);
    const Trajectory traj =
        eval_trajectory_cached(candidate, basis, phi0, phi1, phi2);
    return trajectory_cost(traj, env, config.weights, margin);
  };

  const Eigen::MatrixXd init = straight_line_via(objective, n_via);
  const Eigen::VectorXd init_flat =
      Eigen::Map<const Eigen::VectorXd>(init.data(), init.size());
  const double init_sigma = 0.2 * env.extent();

  const CmaesResult res =
      cmaes_minimize(cost_of_via, init_flat, init_sigma, config.cmaes_budget,
                     seed);
  ViaPointSpec best = spec;
  best.via = Eigen::Map<const Eigen::MatrixXd>(res.best.data(), n_via, D);
  const Trajectory traj =
      eval_trajectory_cached(best, basis, phi0, phi1, phi2);
  *via_out = best.via;
  return is_collision_free(traj, env, margin);
}

namespace {

struct TaskResult {
  bool ok = false;
  std::vector<ExpertRecord> records;
};

TaskResult build_task_records(const WorldSDF& env, const DatasetConfig& config,
                              int task_id, std::uint64_t master_seed) {
  TaskResult out;
  Rng task_rng = Rng(master_seed).child(static_cast<std::uint64_t>(task_id));
  const double margin = env.default_margin();
  const double min_sep = config.min_separation > 0.0
                             ? config.min_separation
                             : 0.5 * env.extent();
  const SplineBasis basis = SplineBasis::clamped_cubic(config.n_via);
  const Eigen::MatrixXd phi0 = basis_matrix(basis, config.L, 0);
  const Eigen::MatrixXd phi1 = basis_matrix(basis, config.L, 1);
  const Eigen::MatrixXd phi2 = basis_matrix(basis, config.L, 2);

  TaskObjective objective;
  Eigen::MatrixXd via_star;
  bool found = false;
  for (int attempt = 0; attempt < config.task_retries && !found; ++attempt) {
    objective = sample_task(env, task_rng, min_sep, margin);
    found = optimize_task(env, objective, config, task_rng.next_u64(),
                          &via_star);
  }
  if (!found) return out;

  ViaPointSpec spec;
  spec.bc = BoundaryConditions::rest_to_rest(objective.start, objective.goal);
  spec.duration = config.T;

  for (int s = 0; s < config.samples_per_task; ++s) {
    double sigma = config.sigma;
    Trajectory traj;
    bool accepted = false;
    // Perturbations that collide are rejected; after 50 rejections the
    // noise scale halves. sigma -> 0 recovers the collision-free base
    // trajectory, so this terminates in practice.
    for (int round = 0; round < 8 && !accepted; ++round) {
      for (int tries = 0; tries < 50; ++tries) {
        spec.via = perturb_via_points(via_star, sigma, task_rng);
        traj = eval_trajectory_cached(spec, basis, phi0, phi1, phi2);
        if (is_collision_free(traj, env, margin)) {
          accepted = true;
          break;
        }
      }
      sigma *= 0.5;
    }
    if (!accepted) {
      spec.via = via_star;
      traj = eval_trajectory_cached(spec, basis, phi0, phi1, phi2);
    }
    ExpertRecord rec;
    rec.trajectory = traj;
    rec.objective = objective;
    rec.env_id = env.name;
    rec.task_id = task_id;
    rec.sample_id = s;
    out.records.push_back(std::move(rec));
  }
  out.ok = true;
  return out;
}

}  // namespace

ExpertDataset build_dataset(const WorldSDF& env, const DatasetConfig& config) {
  if (config.n_tasks < 0 || config.samples_per_task < 1)
    throw std::invalid_argument("build_dataset: bad task/sample counts");
  config.weights.validate();

  ExpertDataset ds;
  ds.meta.L = config.L;
  ds.meta.D = env.dim;
  ds.meta.T = config.T;
  ds.meta.env_id = env.name;
  ds.meta.n_via = config.n_via;
  ds.meta.sigma = config.sigma;
  ds.meta.margin = env.default_margin();
  ds.meta.weights = config.weights;
  ds.meta.cmaes_budget = config.cmaes_budget;
  ds.meta.min_separation = config.min_separation;
  ds.meta.seed = config.seed;
  ds.meta.tasks_requested = config.n_tasks;

  std::vector<TaskResult> results(config.n_tasks);
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (config.parallel && hw > 1 && config.n_tasks > 1) {
    // Task-level parallelism; per-task seeds derive from the task index and
    // results merge by index, so the outcome is thread-count independent.
    std::atomic<int> next{0};
    auto worker = [&]() {
      for (;;) {
        const int tid = next.fetch_add(1);
        if (tid >= config.n_tasks) return;
        results[tid] = build_task_records(env, config, tid, config.seed);
      }
    };
    std::vector<std::thread> pool;
    const unsigned n_workers = std::min<unsigned>(hw, config.n_tasks);
    pool.reserve(n_workers);
    for (unsigned i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  } else {
    for (int tid = 0; tid < config.n_tasks; ++tid)
      results[tid] = build_task_records(env, config, tid, config.seed);
  }

  for (int tid = 0; tid < config.n_tasks; ++tid) {
    if (!results[tid].ok) {
      ++ds.meta.tasks_skipped;
      continue;
    }
    for (ExpertRecord& r : results[tid].records)
      ds.records.push_back(std::move(r));
  }
  ds.validate(env);
  return ds;
}

void ExpertDataset::validate(const WorldSDF& env) const {
  for (const ExpertRecord& rec : records) {
    if (rec.trajectory.length() != meta.L || rec.trajectory.dim() != meta.D)
      throw std::runtime_error("dataset record shape mismatch");
    if (rec.trajectory.duration != meta.T)
      throw std::runtime_error("dataset record duration mismatch");
    if (env.name == meta.env_id &&
        !is_collision_free(rec.trajectory, env, meta.margin))
      throw std::runtime_error("dataset record collides with environment");
  }
}

namespace {

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ' ';
      out << m(i, j);
    }
    out << '\n';
  }
}

Eigen::MatrixXd read_matrix(std::istream& in, int rows, int cols,
                            const std::string& what) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      if (!(in >> m(i, j)))
        throw std::runtime_error("dataset: truncated " + what + " matrix");
  return m;
}

void write_vector(std::ostream& out, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out << ' ';
    out << v[i];
  }
}

Eigen::VectorXd read_vector(std::istream& in, int n, const std::string& what) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i)
    if (!(in >> v[i]))
      throw std::runtime_error("dataset: truncated " + what + " vector");
  return v;
}

}  // namespace

void save_dataset(const ExpertDataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.precision(17);  // doubles round-trip bit-identically at 17 digits
  const DatasetMeta& m = dataset.meta;
  out << "flowplan-dataset v" << m.schema_version << "\n";
  out << "L " << m.L << "\n";
  out << "D " << m.D << "\n";
  out << "T " << m.T << "\n";
  out << "env " << m.env_id << "\n";
  out << "n_via " << m.n_via << "\n";
  out << "sigma " << m.sigma << "\n";
  out << "margin " << m.margin << "\n";
  out << "weights " << m.weights.collision << " " << m.weights.smooth << " "
      << m.weights.time << "\n";
  out << "cmaes_budget " << m.cmaes_budget << "\n";
  out << "min_separation " << m.min_separation << "\n";
  out << "seed " << m.seed << "\n";
  out << "tasks_requested " << m.tasks_requested << "\n";
  out << "tasks_skipped " << m.tasks_skipped << "\n";
  out << "records " << dataset.records.size() << "\n";
  for (const ExpertRecord& rec : dataset.records) {
    out << "record " << rec.task_id << " " << rec.sample_id << " "
        << rec.env_id << "\n";
    out << "start ";
    write_vector(out, rec.objective.start);
    out << "\ngoal ";
    write_vector(out, rec.objective.goal);
    out << "\nstart_velocity ";
    write_vector(out, rec.objective.start_velocity);
    out << "\ngoal_velocity ";
    write_vector(out, rec.objective.goal_velocity);
    out << "\npositions\n";
    write_matrix(out, rec.trajectory.positions);
    out << "velocities\n";
    write_matrix(out, rec.trajectory.velocities);
    out << "accelerations\n";
    write_matrix(out, rec.trajectory.accelerations);
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

ExpertDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file " + path);
  std::string tag;
  std::string header;
  if (!std::getline(in, header) || header.rfind("flowplan-dataset v", 0) != 0)
    throw std::runtime_error("bad dataset header in " + path);

  ExpertDataset ds;
  ds.meta.schema_version = std::stoi(header.substr(18));
  if (ds.meta.schema_version != 1)
    throw std::runtime_error("unsupported dataset schema version");

  std::size_t n_records = 0;
  DatasetMeta& m = ds.meta;
  while (in >> tag) {
    if (tag == "L") in >> m.L;
    else if (tag == "D") in >> m.D;
    else if (tag == "T") in >> m.T;
    else if (tag == "env") in >> m.env_id;
    else if (tag == "n_via") in >> m.n_via;
    else if (tag == "sigma") in >> m.sigma;
    else if (tag == "margin") in >> m.margin;
    else if (tag == "weights")
      in >> m.weights.collision >> m.weights.smooth >> m.weights.time;
    else if (tag == "cmaes_budget") in >> m.cmaes_budget;
    else if (tag == "min_separation") in >> m.min_separation;
    else if (tag == "seed") in >> m.seed;
    else if (tag == "tasks_requested") in >> m.tasks_requested;
    else if (tag == "tasks_skipped") in >> m.tasks_skipped;
    else if (tag == "records") {
      in >> n_records;
      break;
    } else {
      throw std::runtime_error("dataset: unknown header field " + tag);
    }
    if (in.fail()) throw std::runtime_error("dataset: malformed header");
  }
  if (in.fail()) throw std::runtime_error("dataset: malformed header");

  ds.records.reserve(n_records);
  for (std::size_t r = 0; r < n_records; ++r) {
    ExpertRecord rec;
    if (!(in >> tag) || tag != "record")
      throw std::runtime_error("dataset: expected record " +
                               std::to_string(r));
    in >> rec.task_id >> rec.sample_id >> rec.env_id;
    auto expect = [&](const char* want) {
      if (!(in >> tag) || tag != want)
        throw std::runtime_error(std::string("dataset: expected '") + want +
                                 "' in record " + std::to_string(r));
    };
    expect("start");
    rec.objective.start = read_vector(in, m.D, "start");
    expect("goal");
    rec.objective.goal = read_vector(in, m.D, "goal");
    expect("start_velocity");
    rec.objective.start_velocity = read_vector(in, m.D, "start_velocity");
    expect("goal_velocity");
    rec.objective.goal_velocity = read_vector(in, m.D, "goal_velocity");
    expect("positions");
    rec.trajectory.positions = read_matrix(in, m.L, m.D, "positions");
    expect("velocities");
    rec.trajectory.velocities = read_matrix(in, m.L, m.D, "velocities");
    expect("accelerations");
    rec.trajectory.accelerations = read_matrix(in, m.L, m.D, "accelerations");
    rec.trajectory.duration = m.T;
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace flowplan
