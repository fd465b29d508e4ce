// Copyright 2026 The Flowplan Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "flowplan/envs.hpp"

namespace flowplan {

// One trunk with three linear heads, or three separate trunks (one per
// field head).
enum class ArchMode : std::uint8_t { SingleTrunk = 0, SeparateTrunks = 1 };

// Whether the network sees the full (q, qdot, qddot) triple or only q.
enum class InputMode : std::uint8_t { FullState = 0, PositionOnly = 1 };

// Sinusoidal encoding of flow time: sin/cos pairs at geometrically spaced
// frequencies plus the raw value.
struct TimeEmbedding {
  int n_sinusoidal = 16;  // must be even: sin/cos pairs

  int size() const { return n_sinusoidal + 1; }
  Eigen::VectorXd features(double t) const;
};

// Per-channel, per-dimension normalization statistics (position, velocity,
// acceleration channels in that order).
struct ChannelStats {
  Eigen::MatrixXd mean;    // 3 x D
  Eigen::MatrixXd stddev;  // 3 x D, entries >= 1e-8

  static ChannelStats unit(int D);
};

struct ModelLayout {
  int L = 64;
  int D = 2;
  int hidden_width = 256;
  int hidden_layers = 3;
  int time_sinusoidal = 16;
  ArchMode arch = ArchMode::SingleTrunk;
  InputMode input_mode = InputMode::FullState;

  int state_features() const {
    return (input_mode == InputMode::FullState ? 3 : 1) * L * D;
  }
  int objective_features() const { return 2 * D; }
  int input_size() const {
    return state_features() + time_sinusoidal + 1 + objective_features();
  }
  int head_size() const { return L * D; }
};

// The conditional field predictor plus everything inference needs:
// normalization statistics, workspace bounds for objective encoding, and
// the trajectory duration of the training data.
struct MotionFieldModel {
  ModelLayout layout;
  Eigen::VectorXd params;
  ChannelStats stats;
  Eigen::VectorXd bounds_min;
  Eigen::VectorXd bounds_max;
  double duration = 5.0;
  std::uint64_t config_hash = 0;

  std::int64_t param_count() const { return params.size(); }
};

// Heads evaluated for a batch of inputs: one row per batch element,
// head_size columns each.
struct HeadBatch {
  Eigen::MatrixXd u;
  Eigen::MatrixXd v;
  Eigen::MatrixXd w;
};

// Cached activations from a forward pass, consumed by backward().
struct ForwardCache {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> pre;   // pre-activations per linear layer
  std::vector<Eigen::MatrixXd> post;  // activations per hidden layer
};

MotionFieldModel make_model(const ModelLayout& layout,
                            const Eigen::VectorXd& bounds_min,
                            const Eigen::VectorXd& bounds_max,
                            double duration, std::uint64_t seed);

// Normalized objective features: start and goal mapped per-dimension to
// [-1, 1] using the workspace bounds.
Eigen::VectorXd objective_features(const MotionFieldModel& model,
                                   const TaskObjective& objective);

// Input row assembly for one batch element. All state matrices are in
// normalized channel units and flattened row-major (grid index major).
Eigen::VectorXd assemble_input(const MotionFieldModel& model,
                               const Eigen::MatrixXd& q,
                               const Eigen::MatrixXd& qdot,
                               const Eigen::MatrixXd& qddot, double t,
                               const TaskObjective& objective);

// Batched forward pass; rows of `input` are assemble_input rows.
HeadBatch forward_batch(const MotionFieldModel& model,
                        const Eigen::MatrixXd& input,
                        ForwardCache* cache = nullptr);

// Single-state convenience wrapper returning the three heads as L x D.
struct HeadsLD {
  Eigen::MatrixXd u, v, w;
};
HeadsLD forward(const MotionFieldModel& model, const Eigen::MatrixXd& q,
                const Eigen::MatrixXd& qdot, const Eigen::MatrixXd& qddot,
                double t, const TaskObjective& objective);

// Exact analytic gradient of the training loss with respect to every
// parameter, given the loss gradients at the three heads. Requires the
// cache produced by forward_batch on the same inputs.
Eigen::VectorXd backward(const MotionFieldModel& model,
                         const ForwardCache& cache,
                         const Eigen::MatrixXd& grad_u,
                         const Eigen::MatrixXd& grad_v,
                         const Eigen::MatrixXd& grad_w);

// Adam with optional cosine learning-rate decay, used by the trainer.
struct AdamOptimizer {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  int step_count = 0;

  void init(Eigen::Index n);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
            double lr_now);
};

// Checkpoint persistence. Round-trips every parameter bit-exactly; the
// header carries a version byte, the layout, the training config hash and
// param_count, and truncated or mismatched files fail loudly.
void save_checkpoint(const MotionFieldModel& model, const std::string& path);
MotionFieldModel load_checkpoint(const std::string& path);

// Smooth GELU-style activation used by the hidden layers (exposed for the
// gradient tests).
double gelu(double x);
double gelu_derivative(double x);

}  // namespace flowplan
