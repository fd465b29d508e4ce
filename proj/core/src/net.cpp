// Copyright 2026 The Flowplan Authors
// SPDX-License-Identifier: Apache-2.0

#include "flowplan/net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace flowplan {

namespace {

constexpr char kMagic[8] = {'F', 'P', 'C', 'K', 'P', 'T', '0', '\n'};
constexpr std::uint8_t kVersion = 1;

// Parameter slices. Hidden layers come first, then the three heads (for
// separate trunks: trunk0, head0, trunk1, head1, trunk2, head2).
struct Linear {
  int rows = 0;  // output size
  int cols = 0;  // input size
  Eigen::Index w_offset = 0;
  Eigen::Index b_offset = 0;
};

struct Wiring {
  std::vector<std::vector<Linear>> trunks;  // hidden layers per trunk
  std::vector<Linear> heads;                // one per field head
  Eigen::Index total = 0;
};

Wiring wire(const ModelLayout& layout) {
  Wiring w;
  Eigen::Index at = 0;
  auto make = [&](int rows, int cols) {
    Linear l;
    l.rows = rows;
    l.cols = cols;
    l.w_offset = at;
    at += static_cast<Eigen::Index>(rows) * cols;
    l.b_offset = at;
    at += rows;
    return l;
  };
  const int n_trunks = layout.arch == ArchMode::SingleTrunk ? 1 : 3;
  for (int t = 0; t < n_trunks; ++t) {
    std::vector<Linear> hidden;
    int in = layout.input_size();
    for (int l = 0; l < layout.hidden_layers; ++l) {
      hidden.push_back(make(layout.hidden_width, in));
      in = layout.hidden_width;
    }
    w.trunks.push_back(std::move(hidden));
    if (layout.arch == ArchMode::SeparateTrunks)
      w.heads.push_back(make(layout.head_size(), layout.hidden_width));
  }
  if (layout.arch == ArchMode::SingleTrunk)
    for (int h = 0; h < 3; ++h)
      w.heads.push_back(make(layout.head_size(), layout.hidden_width));
  w.total = at;
  return w;
}

Eigen::Map<const Eigen::MatrixXd> weight(const Eigen::VectorXd& p,
                                         const Linear& l) {
  return {p.data() + l.w_offset, l.rows, l.cols};
}

Eigen::Map<const Eigen::VectorXd> bias(const Eigen::VectorXd& p,
                                       const Linear& l) {
  return {p.data() + l.b_offset, l.rows};
}

Eigen::Map<Eigen::MatrixXd> weight_grad(Eigen::VectorXd& g, const Linear& l) {
  return {g.data() + l.w_offset, l.rows, l.cols};
}

Eigen::Map<Eigen::VectorXd> bias_grad(Eigen::VectorXd& g, const Linear& l) {
  return {g.data() + l.b_offset, l.rows};
}

// A (B x in) -> (B x out)
Eigen::MatrixXd apply_linear(const Eigen::VectorXd& p, const Linear& l,
                             const Eigen::MatrixXd& a) {
  return (a * weight(p, l).transpose()).rowwise() +
         bias(p, l).transpose();
}

}  // namespace

double gelu(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  return 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x)));
}

double gelu_derivative(double x) {
  constexpr double k = 0.7978845608028654;
  constexpr double c = 0.044715;
  const double u = k * (x + c * x * x * x);
  const double th = std::tanh(u);
  const double sech2 = 1.0 - th * th;
  return 0.5 * (1.0 + th) + 0.5 * x * sech2 * k * (1.0 + 3.0 * c * x * x);
}

Eigen::VectorXd TimeEmbedding::features(double t) const {
  if (n_sinusoidal % 2 != 0)
    throw std::invalid_argument("time embedding needs an even feature count");
  Eigen::VectorXd f(size());
  const int pairs = n_sinusoidal / 2;
  for (int j = 0; j < pairs; ++j) {
    const double omega = M_PI * std::pow(2.0, j);
    f[2 * j] = std::sin(omega * t);
    f[2 * j + 1] = std::cos(omega * t);
  }
  f[n_sinusoidal] = t;
  return f;
}

ChannelStats ChannelStats::unit(int D) {
  ChannelStats s;
  s.mean = Eigen::MatrixXd::Zero(3, D);
  s.stddev = Eigen::MatrixXd::Ones(3, D);
  return s;
}

MotionFieldModel make_model(const ModelLayout& layout,
                            const Eigen::VectorXd& bounds_min,
                            const Eigen::VectorXd& bounds_max,
                            double duration, std::uint64_t seed) {
  if (layout.L < 2 || layout.D < 1 || layout.hidden_width < 1 ||
      layout.hidden_layers < 1)
    throw std::invalid_argument("bad model layout");
  if (bounds_min.size() != layout.D || bounds_max.size() != layout.D)
    throw std::invalid_argument("bounds dimension mismatch");

  MotionFieldModel model;
  model.layout = layout;
  model.bounds_min = bounds_min;
  model.bounds_max = bounds_max;
  model.duration = duration;
  model.stats = ChannelStats::unit(layout.D);

  const Wiring w = wire(layout);
  model.params.resize(w.total);
  Rng rng(seed);
  auto init_linear = [&](const Linear& l, double scale) {
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(l.rows) * l.cols;
         ++i)
      model.params[l.w_offset + i] = rng.normal(0.0, scale);
    for (int i = 0; i < l.rows; ++i) model.params[l.b_offset + i] = 0.0;
  };
  for (const auto& trunk : w.trunks)
    for (const Linear& l : trunk) init_linear(l, std::sqrt(2.0 / l.cols));
  for (const Linear& l : w.heads) init_linear(l, std::sqrt(1.0 / l.cols));
  return model;
}

Eigen::VectorXd objective_features(const MotionFieldModel& model,
                                   const TaskObjective& objective) {
  const int D = model.layout.D;
  if (objective.start.size() != D || objective.goal.size() != D)
    throw std::invalid_argument("objective dimension mismatch");
  Eigen::VectorXd f(2 * D);
  for (int d = 0; d < D; ++d) {
    const double lo = model.bounds_min[d];
    const double hi = model.bounds_max[d];
    const double span = hi - lo;
    f[d] = 2.0 * (objective.start[d] - lo) / span - 1.0;
    f[D + d] = 2.0 * (objective.goal[d] - lo) / span - 1.0;
  }
  return f;
}

Eigen::VectorXd assemble_input(const MotionFieldModel& model,
                               const Eigen::MatrixXd& q,
                               const Eigen::MatrixXd& qdot,
                               const Eigen::MatrixXd& qddot, double t,
                               const TaskObjective& objective) {
  const ModelLayout& lay = model.layout;
  if (q.rows() != lay.L || q.cols() != lay.D)
    throw std::invalid_argument("state shape does not match model layout");
  Eigen::VectorXd x(lay.input_size());
  Eigen::Index at = 0;
  auto put = [&](const Eigen::MatrixXd& m) {
    for (int i = 0; i < lay.L; ++i)
      for (int d = 0; d < lay.D; ++d) x[at++] = m(i, d);
  };
  put(q);
  if (lay.input_mode == InputMode::FullState) {
    if (qdot.rows() != lay.L || qddot.rows() != lay.L)
      throw std::invalid_argument("state shape does not match model layout");
    put(qdot);
    put(qddot);
  }
  TimeEmbedding emb{lay.time_sinusoidal};
  x.segment(at, emb.size()) = emb.features(t);
  at += emb.size();
  x.segment(at, 2 * lay.D) = objective_features(model, objective);
  return x;
}

HeadBatch forward_batch(const MotionFieldModel& model,
                        const Eigen::MatrixXd& input, ForwardCache* cache) {
  const ModelLayout& lay = model.layout;
  if (input.cols() != lay.input_size())
    throw std::invalid_argument("input width does not match model layout");
  const Wiring w = wire(lay);
  if (model.params.size() != w.total)
    throw std::invalid_argument("parameter vector does not match layout");

  if (cache) {
    cache->input = input;
    cache->pre.clear();
    cache->post.clear();
  }

  HeadBatch out;
  std::vector<Eigen::MatrixXd> trunk_tops;
  for (const auto& trunk : w.trunks) {
    Eigen::MatrixXd a = input;
    for (const Linear& l : trunk) {
      Eigen::MatrixXd z = apply_linear(model.params, l, a);
      if (cache) cache->pre.push_back(z);
      a = z.unaryExpr([](double v) { return gelu(v); });
      if (cache) cache->post.push_back(a);
    }
    trunk_tops.push_back(std::move(a));
  }
  const bool single = lay.arch == ArchMode::SingleTrunk;
  out.u = apply_linear(model.params, w.heads[0],
                       single ? trunk_tops[0] : trunk_tops[0]);
  out.v = apply_linear(model.params, w.heads[1],
                       single ? trunk_tops[0] : trunk_tops[1]);
  out.w = apply_linear(model.params, w.heads[2],
                       single ? trunk_tops[0] : trunk_tops[2]);
  if (!out.u.allFinite() || !out.v.allFinite() || !out.w.allFinite())
    throw std::runtime_error("model forward produced non-finite values");
  return out;
}

HeadsLD forward(const MotionFieldModel& model, const Eigen::MatrixXd& q,
                const Eigen::MatrixXd& qdot, const Eigen::MatrixXd& qddot,
                double t, const TaskObjective& objective) {
  if (t < 0.0 || t > 1.0)
    throw std::invalid_argument("flow time t outside [0,1]");
  Eigen::MatrixXd input(1, model.layout.input_size());
  input.row(0) =
      assemble_input(model, q, qdot, qddot, t, objective).transpose();
  const HeadBatch hb = forward_batch(model, input);
  const int L = model.layout.L;
  const int D = model.layout.D;
  HeadsLD heads;
  auto unflatten = [&](const Eigen::MatrixXd& row) {
    Eigen::MatrixXd m(L, D);
    for (int i = 0; i < L; ++i)
      for (int d = 0; d < D; ++d) m(i, d) = row(0, i * D + d);
    return m;
  };
  heads.u = unflatten(hb.u);
  heads.v = unflatten(hb.v);
  heads.w = unflatten(hb.w);
  return heads;
}

Eigen::VectorXd backward(const MotionFieldModel& model,
                         const ForwardCache& cache,
                         const Eigen::MatrixXd& grad_u,
                         const Eigen::MatrixXd& grad_v,
                         const Eigen::MatrixXd& grad_w) {
  const ModelLayout& lay = model.layout;
  const Wiring w = wire(lay);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.params.size());

  const bool single = lay.arch == ArchMode::SingleTrunk;
  const int n_trunks = single ? 1 : 3;
  const int layers = lay.hidden_layers;
  const Eigen::MatrixXd* head_grads[3] = {&grad_u, &grad_v, &grad_w};

  for (int trunk_idx = 0; trunk_idx < n_trunks; ++trunk_idx) {
    const auto& trunk = w.trunks[trunk_idx];
    const Eigen::MatrixXd& top = cache.post[trunk_idx * layers + layers - 1];

    // Head gradients and the gradient flowing into the trunk top.
    Eigen::MatrixXd d_top =
        Eigen::MatrixXd::Zero(top.rows(), lay.hidden_width);
    for (int h = 0; h < 3; ++h) {
      if (!single && h != trunk_idx) continue;
      const Linear& head = w.heads[h];
      const Eigen::MatrixXd& gh = *head_grads[h];
      weight_grad(grad, head) += gh.transpose() * top;
      bias_grad(grad, head) += gh.colwise().sum().transpose();
      d_top += gh * weight(model.params, head);
    }

    // Hidden layers in reverse.
    Eigen::MatrixXd d_a = std::move(d_top);
    for (int l = layers - 1; l >= 0; --l) {
      const Linear& lin = trunk[l];
      const Eigen::MatrixXd& z = cache.pre[trunk_idx * layers + l];
      const Eigen::MatrixXd d_z =
          d_a.array() *
          z.unaryExpr([](double v) { return gelu_derivative(v); }).array();
      const Eigen::MatrixXd& below =
          l == 0 ? cache.input : cache.post[trunk_idx * layers + l - 1];
      weight_grad(grad, lin) += d_z.transpose() * below;
      bias_grad(grad, lin) += d_z.colwise().sum().transpose();
      if (l > 0) d_a = d_z * weight(model.params, lin);
    }
  }
  return grad;
}

void AdamOptimizer::init(Eigen::Index n) {
  m = Eigen::VectorXd::Zero(n);
  v = Eigen::VectorXd::Zero(n);
  step_count = 0;
}

void AdamOptimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
                         double lr_now) {
  ++step_count;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1, step_count);
  const double bc2 = 1.0 - std::pow(beta2, step_count);
  params -= (lr_now / bc1) * m.cwiseQuotient(
                ((v / bc2).cwiseSqrt().array() + epsilon).matrix());
}

namespace {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& in, T& v, const char* what) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in)
    throw std::runtime_error(std::string("checkpoint: truncated at ") + what);
}

void write_vec(std::ostream& out, const Eigen::VectorXd& v) {
  const std::uint64_t n = static_cast<std::uint64_t>(v.size());
  write_pod(out, n);
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
}

Eigen::VectorXd read_vec(std::istream& in, const char* what) {
  std::uint64_t n = 0;
  read_pod(in, n, what);
  if (n > (1ull << 32))
    throw std::runtime_error(std::string("checkpoint: absurd size for ") +
                             what);
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in)
    throw std::runtime_error(std::string("checkpoint: truncated at ") + what);
  return v;
}

}  // namespace

void save_checkpoint(const MotionFieldModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  const ModelLayout& lay = model.layout;
  write_pod(out, static_cast<std::uint32_t>(lay.L));
  write_pod(out, static_cast<std::uint32_t>(lay.D));
  write_pod(out, static_cast<std::uint32_t>(lay.hidden_width));
  write_pod(out, static_cast<std::uint32_t>(lay.hidden_layers));
  write_pod(out, static_cast<std::uint32_t>(lay.time_sinusoidal));
  write_pod(out, static_cast<std::uint8_t>(lay.arch));
  write_pod(out, static_cast<std::uint8_t>(lay.input_mode));
  write_pod(out, model.config_hash);
  write_pod(out, model.duration);
  write_vec(out, model.bounds_min);
  write_vec(out, model.bounds_max);
  for (int c = 0; c < 3; ++c) write_vec(out, model.stats.mean.row(c));
  for (int c = 0; c < 3; ++c) write_vec(out, model.stats.stddev.row(c));
  write_pod(out, static_cast<std::uint64_t>(model.params.size()));
  out.write(reinterpret_cast<const char*>(model.params.data()),
            static_cast<std::streamsize>(model.params.size() *
                                         sizeof(double)));
  if (!out) throw std::runtime_error("write failed for " + path);
}

MotionFieldModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint8_t version = 0;
  read_pod(in, version, "version");
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));

  MotionFieldModel model;
  ModelLayout& lay = model.layout;
  std::uint32_t u32;
  read_pod(in, u32, "L"), lay.L = static_cast<int>(u32);
  read_pod(in, u32, "D"), lay.D = static_cast<int>(u32);
  read_pod(in, u32, "hidden_width"), lay.hidden_width = static_cast<int>(u32);
  read_pod(in, u32, "hidden_layers"),
      lay.hidden_layers = static_cast<int>(u32);
  read_pod(in, u32, "time_sinusoidal"),
      lay.time_sinusoidal = static_cast<int>(u32);
  std::uint8_t u8;
  read_pod(in, u8, "arch"), lay.arch = static_cast<ArchMode>(u8);
  read_pod(in, u8, "input_mode"), lay.input_mode = static_cast<InputMode>(u8);
  read_pod(in, model.config_hash, "config_hash");
  read_pod(in, model.duration, "duration");
  model.bounds_min = read_vec(in, "bounds_min");
  model.bounds_max = read_vec(in, "bounds_max");
  model.stats.mean.resize(3, lay.D);
  model.stats.stddev.resize(3, lay.D);
  for (int c = 0; c < 3; ++c) {
    const Eigen::VectorXd row = read_vec(in, "stats_mean");
    if (row.size() != lay.D)
      throw std::runtime_error("checkpoint: stats row size mismatch");
    model.stats.mean.row(c) = row.transpose();
  }
  for (int c = 0; c < 3; ++c) {
    const Eigen::VectorXd row = read_vec(in, "stats_std");
    if (row.size() != lay.D)
      throw std::runtime_error("checkpoint: stats row size mismatch");
    model.stats.stddev.row(c) = row.transpose();
  }
  std::uint64_t n_params = 0;
  read_pod(in, n_params, "param_count");
  const Wiring w = wire(lay);
  if (static_cast<std::uint64_t>(w.total) != n_params)
    throw std::runtime_error(
        "checkpoint: param_count does not match layout (corrupt header?)");
  model.params.resize(static_cast<Eigen::Index>(n_params));
  in.read(reinterpret_cast<char*>(model.params.data()),
          static_cast<std::streamsize>(n_params * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint: truncated parameter block");
  if (!model.params.allFinite())
    throw std::runtime_error("checkpoint: non-finite parameters");
  return model;
}

}  // namespace flowplan
