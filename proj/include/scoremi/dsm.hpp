#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scoremi/channels.hpp"
#include "scoremi/error.hpp"
#include "scoremi/nn.hpp"
#include "scoremi/rng.hpp"
#include "scoremi/score.hpp"

namespace scoremi {

// Denoising score matching, residual form: mean_i || s(y_i) + (y_i - w_i) / t ||^2.
inline double dsm_loss(const ScoreFn& score, const SampleBatch& batch) {
  if (!(batch.t > 0.0)) throw InputError("dsm_loss: t must be positive");
  const Matrix s = score(batch.y, batch.t);
  if (!s.allFinite()) throw NumericError("dsm_loss: non-finite score output");
  return (s + (batch.y - batch.w) / batch.t).rowwise().squaredNorm().mean();
}

// The same objective written with the noise draw: mean_i || s(y_i) + eps_i / sqrt(t) ||^2.
inline double dsm_loss_eps_form(const ScoreFn& score, const SampleBatch& batch) {
  if (!(batch.t > 0.0)) throw InputError("dsm_loss: t must be positive");
  const Matrix s = score(batch.y, batch.t);
  if (!s.allFinite()) throw NumericError("dsm_loss: non-finite score output");
  return (s + batch.eps / std::sqrt(batch.t)).rowwise().squaredNorm().mean();
}

struct ArchConfig {
  std::vector<int> hidden{128, 128, 128};
  int embed_frequencies = 32;
  double embed_scale = 4.0;

  std::vector<int> layer_dims(int n) const {
    std::vector<int> d{n};
    d.insert(d.end(), hidden.begin(), hidden.end());
    d.push_back(n);
    return d;
  }
};

struct SchemeAConfig {
  long iterations = 300;
  long batch_size = 4096;
  double lr = 1e-3;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  ArchConfig arch;
};

using LossWeight = std::function<double(double t)>;

struct SchemeBConfig {
  long steps = 20000;
  long batch_size = 4096;
  double lr = 1e-3;
  double clip_norm = 1.0;
  double t_lo = 0.005;
  double t_hi = 50.0;
  LossWeight weight = [](double t) { return t; };
  std::uint64_t seed = 0;
  ArchConfig arch;
};

struct LossRecord {
  long step = 0;
  double t = 0.0;
  double loss = 0.0;  // weighted for Scheme B
};

struct TrainResult {
  ScoreNetwork net;
  std::vector<LossRecord> trace;
};

// log t uniform on [log t_lo, log t_hi].
inline double sample_log_uniform_t(double t_lo, double t_hi, Rng& rng) {
  if (!(t_lo > 0.0) || !(t_hi > t_lo) || !std::isfinite(t_hi))
    throw InputError("sample_log_uniform_t: need 0 < t_lo < t_hi");
  const double lo = std::log(t_lo), hi = std::log(t_hi);
  return std::clamp(std::exp(lo + (hi - lo) * rng.uniform()), t_lo, t_hi);
}

namespace detail {

// One optimizer step on a fresh batch; returns the unweighted DSM loss.
inline double dsm_step(ScoreNetwork& net, AdamState& adam, const SampleBatch& batch, double weight, double lr,
                       double clip_norm, long step) {
  const Matrix residual = (batch.y - batch.w) / batch.t;
  const double inv_n = 1.0 / static_cast<double>(batch.y.rows());
  double raw = 0.0;
  BatchLoss loss = [&](const Matrix& out, Matrix& d_out) {
    const Matrix diff = out + residual;
    raw = diff.rowwise().squaredNorm().mean();
    d_out = (2.0 * weight * inv_n) * diff;
    return weight * raw;
  };
  std::optional<double> t;
  if (net.conditional()) t = batch.t;
  LossAndGradients lg;
  try {
    lg = loss_gradients(net, batch.y, t, loss);
  } catch (const NumericError& e) {
    throw TrainingError(std::string("training diverged at step ") + std::to_string(step) + ": " + e.what(), step);
  }
  const double limit = 1e6 * static_cast<double>(net.dim()) / batch.t;
  if (!(raw <= limit))
    throw TrainingError("training diverged at step " + std::to_string(step) + ": loss " + std::to_string(raw) +
                            " exceeds " + std::to_string(limit),
                        step);
  try {
    optimizer_step(net, adam, std::move(lg.grads), lr, clip_norm);
  } catch (const NumericError& e) {
    throw TrainingError(std::string("training diverged at step ") + std::to_string(step) + ": " + e.what(), step);
  }
  return raw;
}

inline void check_common(long steps, long batch, double lr, double clip) {
  if (steps < 0) throw ConfigError("training: iteration count must be non-negative");
  if (batch < 1) throw ConfigError("training: batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("training: lr must be positive");
  if (!(clip > 0.0)) throw ConfigError("training: clip_norm must be positive");
}

}  // namespace detail

// Per-noise-level training. `stream` selects the RNG sub-streams
// (init@stream, train@stream), normally the grid index.
inline TrainResult train_scheme_a(const ChannelModel& model, double t, const SchemeAConfig& cfg,
                                  std::uint64_t stream = 0) {
  if (!(t > 0.0)) throw InputError("train_scheme_a: t must be positive");
  detail::check_common(cfg.iterations, cfg.batch_size, cfg.lr, cfg.clip_norm);
  Rng init_rng(cfg.seed, "init", stream);
  Rng rng(cfg.seed, "train", stream);
  TrainResult r{ScoreNetwork::initialized(cfg.arch.layer_dims(model.dim()), init_rng), {}};
  AdamState adam = AdamState::for_parameters(r.net.params());
  r.trace.reserve(static_cast<std::size_t>(cfg.iterations));
  for (long step = 0; step < cfg.iterations; ++step) {
    const SampleBatch batch = forward_channel(model, t, cfg.batch_size, rng);
    const double loss = detail::dsm_step(r.net, adam, batch, 1.0, cfg.lr, cfg.clip_norm, step);
    r.trace.push_back({step, t, loss});
  }
  return r;
}

// Noise-conditional training: each step draws t log-uniformly, then a batch
// at that t, and minimizes weight(t) * dsm_loss.
inline TrainResult train_scheme_b(const ChannelModel& model, const SchemeBConfig& cfg) {
  detail::check_common(cfg.steps, cfg.batch_size, cfg.lr, cfg.clip_norm);
  if (!(cfg.t_lo > 0.0) || !(cfg.t_hi > cfg.t_lo)) throw ConfigError("train_scheme_b: need 0 < t_lo < t_hi");
  Rng init_rng(cfg.seed, "init-conditional");
  Rng rng(cfg.seed, "train-conditional");
  TrainResult r{ScoreNetwork::initialized(cfg.arch.layer_dims(model.dim()), init_rng,
                                          std::pair{cfg.arch.embed_frequencies, cfg.arch.embed_scale}),
                {}};
  AdamState adam = AdamState::for_parameters(r.net.params());
  r.trace.reserve(static_cast<std::size_t>(cfg.steps));
  for (long step = 0; step < cfg.steps; ++step) {
    const double t = sample_log_uniform_t(cfg.t_lo, cfg.t_hi, rng);
    const double weight = cfg.weight(t);
    if (!(weight > 0.0) || !std::isfinite(weight))
      throw ConfigError("train_scheme_b: loss weight must be positive at t=" + std::to_string(t));
    const SampleBatch batch = forward_channel(model, t, cfg.batch_size, rng);
    const double loss = detail::dsm_step(r.net, adam, batch, weight, cfg.lr, cfg.clip_norm, step);
    r.trace.push_back({step, t, weight * loss});
  }
  return r;
}

}  // namespace scoremi
