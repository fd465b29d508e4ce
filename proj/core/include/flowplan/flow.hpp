// Copyright 2026 The Flowplan Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "flowplan/net.hpp"
#include "flowplan/optimizer.hpp"

namespace flowplan {

// The evolving triple (q, qdot, qddot) at flow time t.
struct FlowState {
  Eigen::MatrixXd q;
  Eigen::MatrixXd qdot;
  Eigen::MatrixXd qddot;
  double t = 0.0;
};

// Per-channel noise draw from the source distribution.
struct NoiseTriple {
  Eigen::MatrixXd q;
  Eigen::MatrixXd qdot;
  Eigen::MatrixXd qddot;
};

// Flow-time derivatives of the three channels (the regression target and
// the model output live in this shape).
struct FieldTarget {
  Eigen::MatrixXd u;
  Eigen::MatrixXd v;
  Eigen::MatrixXd w;
};

// How regression targets are formed: exact flow-time derivatives of the
// order-matched interpolants (default), or the constant fields that only
// involve the position endpoint and the noises.
enum class TargetMode : std::uint8_t { DerivativeMatched = 0, PaperConstant = 1 };

// Order-matched interpolants between noise (t=0) and data (t=1):
//   q(t)     cubic:     (1-t^3) e_q + (t-t^3) e_qd + ((t^2-t^3)/2) e_qdd + t^3 q1
//   qdot(t)  quadratic: (1-t^2) e_qd + (t-t^2) e_qdd + t^2 qd1
//   qddot(t) linear:    (1-t) e_qdd + t qdd1
FlowState interp_channels(const Trajectory& data, const NoiseTriple& eps,
                          double t);

// Exact flow-time derivatives of the interpolants above:
//   u = 3t^2 (q1 - e_q) + (1-3t^2) e_qd + (t - 1.5 t^2) e_qdd
//   v = 2t (qd1 - e_qd) + (1-2t) e_qdd
//   w = qdd1 - e_qdd
FieldTarget target_fields(const Trajectory& data, const NoiseTriple& eps,
                          double t);

// Constant-target variant: u = q1 - e_q, v = 2(q1-e_q) - 2 e_qd,
// w = 6(q1-e_q) - 6 e_qd - 3 e_qdd.
FieldTarget target_fields_constant(const Trajectory& data,
                                   const NoiseTriple& eps);

// Mean squared error over all entries of the three heads, with its
// gradient 2(pred - target)/count at the prediction.
double fm_loss(const FieldTarget& pred, const FieldTarget& target,
               FieldTarget* grad = nullptr);

struct TrainConfig {
  int epochs = 300;
  int batch_size = 128;
  double learning_rate = 1e-3;
  bool cosine_decay = true;
  int hidden_width = 256;
  int hidden_layers = 3;
  int time_sinusoidal = 16;
  ArchMode arch = ArchMode::SingleTrunk;
  InputMode input_mode = InputMode::FullState;
  TargetMode target_mode = TargetMode::DerivativeMatched;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MotionFieldModel model;
  std::vector<double> epoch_loss;  // mean loss per epoch
};

// Second-order conditional flow matching: per step, sample a batch with
// per-element flow times and noises, build interpolated states and exact
// derivative targets, and regress the three heads with Adam. Deterministic
// under the config seed; record order does not matter (records are
// canonicalized by task/sample id first).
TrainResult train_motion_field(const ExpertDataset& dataset,
                               const WorldSDF& env, const TrainConfig& config);

// Normalization helpers shared by the trainer and sampler.
Eigen::MatrixXd normalize_channel(const Eigen::MatrixXd& x,
                                  const ChannelStats& stats, int channel);
Eigen::MatrixXd denormalize_channel(const Eigen::MatrixXd& x,
                                    const ChannelStats& stats, int channel);
ChannelStats compute_stats(const ExpertDataset& dataset);

std::uint64_t hash_train_config(const TrainConfig& config);

}  // namespace flowplan
