#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scoremi/channels.hpp"
#include "scoremi/config.hpp"
#include "scoremi/dsm.hpp"
#include "scoremi/error.hpp"
#include "scoremi/fisher_mi.hpp"
#include "scoremi/nn.hpp"
#include "scoremi/oracles.hpp"
#include "scoremi/rng.hpp"
#include "scoremi/score.hpp"

namespace scoremi {

// One CSV row. Missing quantities stay empty in the file.
struct ReportRow {
  double t = 0.0;
  std::optional<double> j_hat, j_se, j_ref, mmse_hat, mi_hat, mi_ref, mi_rel_err, kde_mi;
};

struct ExperimentReport {
  std::string command;
  int n = 0;
  ExperimentConfig config;
  std::vector<ReportRow> rows;  // ascending t
  nlohmann::json summary;
  std::vector<LossRecord> loss_trace;
};

inline constexpr const char* kCurveHeader =
    "t,j_hat,j_se,j_ref,mmse_hat,mi_hat,mi_ref,mi_rel_err,kde_mi,mi_hat_per_n,mi_ref_per_n";

// numpy-style percentile (linear interpolation between order statistics).
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw InputError("percentile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(std::vector<double> v) { return percentile(std::move(v), 50.0); }

inline double relative_error(double estimate, double reference) {
  return std::abs(estimate - reference) / std::abs(reference);
}

// Reference values for channels with a known answer.
struct ChannelOracle {
  std::string name;
  double tolerance = 0.0;  // accuracy of the reference itself (nats)
  std::function<double(double)> mi;
  std::function<double(double)> fisher;
};

inline std::optional<ChannelOracle> channel_oracle(const ChannelModel& model) {
  const int n = model.dim();
  const double p = model.prior.power;
  if (model.prior.kind == PriorKind::gaussian_iso && model.frontend.kind == FrontEndKind::identity)
    return ChannelOracle{"gaussian_closed_form", 0.0,
                         [n, p](double t) { return gaussian_closed_forms(n, p, t).mi; },
                         [n, p](double t) { return gaussian_closed_forms(n, p, t).fisher; }};
  if (model.prior.kind == PriorKind::gaussian_iso && model.frontend.kind == FrontEndKind::linear) {
    const Matrix a = model.frontend.matrix;
    return ChannelOracle{"linear_closed_form", 0.0, [a, p](double t) { return linear_closed_forms(a, p, t).mi; },
                         [a, p](double t) { return linear_closed_forms(a, p, t).fisher; }};
  }
  if (model.prior.kind == PriorKind::bpsk && model.frontend.kind == FrontEndKind::identity) {
    // Coordinates are independent, so both quantities add up over n.
    const QuadratureSpec q;
    return ChannelOracle{"bpsk_quadrature", n * q.abs_tol,
                         [n, p, q](double t) { return n * bpsk_exact_mi(p, t, q); },
                         [n, p, q](double t) { return n * bpsk_exact_fisher(p, t, q); }};
  }
  return std::nullopt;
}

namespace detail {

template <typename F>
auto staged(const char* stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("[") + stage + "] " + e.what());
  }
}

inline std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline std::string csv_number(const std::optional<double>& v) {
  if (!v) return {};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

inline nlohmann::json channel_fingerprint(const ExperimentConfig& cfg, const ChannelModel& model) {
  nlohmann::json j = to_json(cfg)["channel"];
  j.erase("matrix_file");
  j.erase("matrix_seed");
  std::vector<std::string> a;
  for (Eigen::Index r = 0; r < model.frontend.matrix.rows(); ++r)
    for (Eigen::Index c = 0; c < model.frontend.matrix.cols(); ++c) a.push_back(exact(model.frontend.matrix(r, c)));
  j["matrix"] = a;
  return j;
}

}  // namespace detail

inline ChannelModel build_channel(const ExperimentConfig& cfg) {
  ChannelModel m;
  m.prior = {cfg.channel.prior, cfg.channel.power, cfg.channel.n};
  m.frontend.kind = cfg.channel.frontend;
  if (m.frontend.kind != FrontEndKind::identity) {
    if (!cfg.channel.matrix_file.empty()) {
      m.frontend.matrix = read_matrix_file(cfg.channel.matrix_file);
    } else {
      Rng rng = cfg.channel.matrix_seed ? Rng(*cfg.channel.matrix_seed) : Rng(cfg.train.seed, "matrix");
      m.frontend.matrix = random_orthogonal(cfg.channel.n, rng);
    }
  }
  m.validate();
  return m;
}

// Trained score models, one per grid point (per_t) or one shared model
// (conditional). Networks are cached on disk under a content digest.
class ScoreBank {
public:
  ScoreBank(const ExperimentConfig& cfg, const ChannelModel& model, const NoiseGrid& grid,
            std::vector<LossRecord>* trace)
      : cfg_(cfg), model_(model) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.cache_directory(), ec);
    if (ec) throw IoError("cannot create checkpoint directory " + cfg.cache_directory() + ": " + ec.message());
    if (cfg.train.scheme == ExperimentConfig::Scheme::per_t) {
      for (std::size_t k = 0; k < grid.size(); ++k) nets_.push_back(per_t(grid[k], k, trace));
    } else {
      nets_.push_back(conditional(grid, trace));
    }
  }

  ScoreFn at(std::size_t k) const { return network_score(nets_.size() == 1 && nets_[0]->conditional() ? nets_[0] : nets_[k]); }
  const std::vector<std::shared_ptr<const ScoreNetwork>>& networks() const { return nets_; }

private:
  std::string cache_path(const nlohmann::json& key) const {
    return cfg_.cache_directory() + "/" + hex_digest(key.dump()) + ".json";
  }

  nlohmann::json base_key() const {
    const auto j = to_json(cfg_);
    return {{"channel", detail::channel_fingerprint(cfg_, model_)}, {"network", j["network"]}};
  }

  template <typename Train>
  std::shared_ptr<const ScoreNetwork> cached(const nlohmann::json& key, Train&& train) {
    const std::string path = cache_path(key);
    if (std::filesystem::exists(path)) return std::make_shared<const ScoreNetwork>(load_checkpoint(path));
    TrainResult r = train();
    const std::string tmp = path + ".tmp";
    save_checkpoint(r.net, tmp);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
    return std::make_shared<const ScoreNetwork>(std::move(r.net));
  }

  std::shared_ptr<const ScoreNetwork> per_t(double t, std::size_t k, std::vector<LossRecord>* trace) {
    SchemeAConfig a;
    a.iterations = cfg_.train.iterations;
    a.batch_size = cfg_.train.batch_size;
    a.lr = cfg_.train.lr;
    a.clip_norm = cfg_.train.clip_norm;
    a.seed = cfg_.train.seed;
    a.arch = cfg_.network;
    nlohmann::json key = base_key();
    key["scheme"] = "per_t";
    key["t"] = detail::exact(t);
    key["stream"] = k;
    key["train"] = {{"iterations", a.iterations}, {"batch_size", a.batch_size}, {"lr", detail::exact(a.lr)},
                    {"clip_norm", detail::exact(a.clip_norm)}, {"seed", a.seed}};
    return cached(key, [&] {
      TrainResult r = train_scheme_a(model_, t, a, k);
      if (trace) trace->insert(trace->end(), r.trace.begin(), r.trace.end());
      return r;
    });
  }

  std::shared_ptr<const ScoreNetwork> conditional(const NoiseGrid& grid, std::vector<LossRecord>* trace) {
    SchemeBConfig b;
    b.steps = cfg_.train.steps;
    b.batch_size = cfg_.train.batch_size;
    b.lr = cfg_.train.lr;
    b.clip_norm = cfg_.train.clip_norm;
    b.seed = cfg_.train.seed;
    b.arch = cfg_.network;
    b.t_lo = cfg_.train.t_lo.value_or(grid.t_min);
    b.t_hi = cfg_.train.t_hi.value_or(grid.t_max);
    const bool weighted = cfg_.train.weight == ExperimentConfig::Weight::t;
    b.weight = weighted ? LossWeight([](double t) { return t; }) : LossWeight([](double) { return 1.0; });
    nlohmann::json key = base_key();
    key["scheme"] = "conditional";
    key["train"] = {{"steps", b.steps},           {"batch_size", b.batch_size},
                    {"lr", detail::exact(b.lr)},  {"clip_norm", detail::exact(b.clip_norm)},
                    {"seed", b.seed},             {"t_lo", detail::exact(b.t_lo)},
                    {"t_hi", detail::exact(b.t_hi)}, {"weight", weighted ? "t" : "none"}};
    return cached(key, [&] {
      TrainResult r = train_scheme_b(model_, b);
      if (trace) trace->insert(trace->end(), r.trace.begin(), r.trace.end());
      return r;
    });
  }

  const ExperimentConfig& cfg_;
  const ChannelModel& model_;
  std::vector<std::shared_ptr<const ScoreNetwork>> nets_;
};

inline FisherCurve fisher_curve(const ExperimentConfig& cfg, const ChannelModel& model, const NoiseGrid& grid,
                                const std::function<ScoreFn(std::size_t)>& score_at) {
  FisherCurve c;
  c.grid = grid;
  c.n_samples = cfg.fisher.mc_samples;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    Rng rng(cfg.train.seed, "fisher", k);
    const FisherEstimate e = estimate_fisher(score_at(k), model, grid[k], cfg.fisher.mc_samples, rng);
    c.j_hat.push_back(e.j_hat);
    c.std_error.push_back(e.std_error);
  }
  return c;
}

// tr Cov of the effective channel input used by the tail correction.
inline double tail_trace(const ExperimentConfig& cfg, const ChannelModel& model) {
  using S = ExperimentConfig::TraceSource;
  if (cfg.tail.source == S::explicit_value) return *cfg.tail.value;
  Rng rng(cfg.train.seed, "tail");
  const Matrix x = sample_prior(model.prior, cfg.tail.samples, rng);
  if (cfg.tail.source == S::cov_x) return trace_cov_estimate(x);
  return trace_cov_estimate(apply_frontend(model.frontend, x));
}

namespace detail {

struct RunState {
  ExperimentConfig cfg;
  ChannelModel model;
  NoiseGrid grid;
  std::optional<ChannelOracle> oracle;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
};

inline RunState prepare(const ExperimentConfig& cfg) {
  validate(cfg);
  RunState s{cfg, staged("channel", [&] { return build_channel(cfg); }),
             staged("grid", [&] { return make_grid(cfg.grid.t_min, cfg.grid.t_max, cfg.grid.points); }),
             std::nullopt};
  s.oracle = channel_oracle(s.model);
  return s;
}

inline ExperimentReport new_report(const RunState& s, const std::string& command) {
  ExperimentReport r;
  r.command = command;
  r.n = s.model.dim();
  r.config = s.cfg;
  for (double t : s.grid.points) r.rows.push_back(ReportRow{t});
  return r;
}

inline void fill_fisher_and_mi(const RunState& s, ExperimentReport& r, bool with_reference) {
  std::vector<LossRecord>* trace = s.cfg.output.verbose ? &r.loss_trace : nullptr;
  const ScoreBank bank = staged("train", [&] { return ScoreBank(s.cfg, s.model, s.grid, trace); });
  const FisherCurve curve =
      staged("fisher", [&] { return fisher_curve(s.cfg, s.model, s.grid, [&](std::size_t k) { return bank.at(k); }); });
  double trace_cov = 0.0, tail = 0.0;
  if (s.cfg.tail.enabled) {
    trace_cov = staged("tail", [&] { return tail_trace(s.cfg, s.model); });
    tail = tail_correction(trace_cov, s.grid.t_max);
  }
  const MICurve mi = staged("integrate", [&] { return integrate_mi(curve, s.model.dim(), tail); });
  const MMSECurve mmse = mmse_from_fisher(curve, s.model.dim());

  nlohmann::json clamped = nlohmann::json::array(), mmse_clamped = nlohmann::json::array();
  for (std::size_t k = 0; k < s.grid.size(); ++k) {
    auto& row = r.rows[k];
    row.j_hat = curve.j_hat[k];
    row.j_se = curve.std_error[k];
    row.mmse_hat = mmse.mmse_hat[k];
    row.mi_hat = mi.mi_hat[k];
    if (mi.clamped[k]) clamped.push_back(k);
    if (mmse.clamped[k]) mmse_clamped.push_back(k);
  }
  r.summary["tail"] = {{"enabled", s.cfg.tail.enabled},
                       {"value", tail},
                       {"trace_cov", trace_cov},
                       {"source", to_string(s.cfg.tail.source)}};
  r.summary["integrand_clamped"] = clamped;
  r.summary["mmse_clamped"] = mmse_clamped;

  if (with_reference && s.oracle) {
    staged("reference", [&] {
      for (auto& row : r.rows) {
        row.j_ref = s.oracle->fisher(row.t);
        row.mi_ref = s.oracle->mi(row.t);
        row.mi_rel_err = relative_error(*row.mi_hat, *row.mi_ref);
      }
    });
  }
}

inline void fill_kde(const RunState& s, ExperimentReport& r) {
  nlohmann::json seconds = nlohmann::json::array();
  staged("kde", [&] {
    for (std::size_t k = 0; k < s.grid.size(); ++k) {
      Rng rng(s.cfg.train.seed, "kde", k);
      const auto t0 = std::chrono::steady_clock::now();
      const SampleBatch b = forward_channel(s.model, s.grid[k], s.cfg.baseline.kde_n, rng);
      r.rows[k].kde_mi = kde_loo_mi(b.w, b.y, s.grid[k]);
      seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
  });
  r.summary["kde"] = {{"samples", s.cfg.baseline.kde_n},
                      {"low_confidence", s.cfg.baseline.kde_n < 1000},
                      {"seconds", seconds}};
}

inline nlohmann::json error_stats(const std::vector<double>& e) {
  if (e.empty()) return nullptr;
  return {{"median", median(e)}, {"p90", percentile(e, 90.0)}, {"max", *std::max_element(e.begin(), e.end())}};
}

inline void finish_summary(const RunState& s, ExperimentReport& r) {
  std::vector<double> fisher_err, mi_err, kde_dev, kde_err;
  for (const auto& row : r.rows) {
    if (row.j_hat && row.j_ref) fisher_err.push_back(relative_error(*row.j_hat, *row.j_ref));
    if (row.mi_rel_err) mi_err.push_back(*row.mi_rel_err);
    if (row.kde_mi && row.mi_hat) kde_dev.push_back(relative_error(*row.mi_hat, *row.kde_mi));
    if (row.kde_mi && row.mi_ref) kde_err.push_back(relative_error(*row.kde_mi, *row.mi_ref));
  }
  r.summary["command"] = r.command;
  r.summary["n"] = r.n;
  r.summary["points"] = r.rows.size();
  r.summary["fisher_rel_err"] = error_stats(fisher_err);
  r.summary["mi_rel_err"] = error_stats(mi_err);
  r.summary["mi_vs_kde_rel_dev"] = error_stats(kde_dev);
  r.summary["kde_rel_err"] = error_stats(kde_err);
  if (s.oracle && (r.rows.front().mi_ref || r.rows.front().j_ref)) {
    r.summary["reference"] = s.oracle->name;
    r.summary["reference_tolerance"] = s.oracle->tolerance;
  } else {
    r.summary["reference"] = nullptr;
  }
  r.summary["config_digest"] = config_digest(s.cfg);
  r.summary["seed"] = s.cfg.train.seed;
  r.summary["runtime_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - s.start).count();
}

}  // namespace detail

// Full estimation pipeline: train, Fisher curve, tail, integration (plus the
// KDE baseline when enabled). No reference columns.
inline ExperimentReport run_estimate(const ExperimentConfig& cfg) {
  auto s = detail::prepare(cfg);
  auto r = detail::new_report(s, "estimate");
  detail::fill_fisher_and_mi(s, r, false);
  if (cfg.baseline.kde) detail::fill_kde(s, r);
  detail::finish_summary(s, r);
  return r;
}

// Same as run_estimate, with oracle columns and error percentiles.
inline ExperimentReport run_validate(const ExperimentConfig& cfg) {
  auto s = detail::prepare(cfg);
  if (!s.oracle)
    throw ConfigError("validate: no reference is available for this channel (prior " +
                      std::string(detail::to_string(cfg.channel.prior)) + ", front-end " +
                      detail::to_string(cfg.channel.frontend) + "); use 'estimate' instead");
  auto r = detail::new_report(s, "validate");
  detail::fill_fisher_and_mi(s, r, true);
  if (cfg.baseline.kde) detail::fill_kde(s, r);
  detail::finish_summary(s, r);
  return r;
}

// Fisher curve only (reference Fisher information when known).
inline ExperimentReport run_fisher(const ExperimentConfig& cfg) {
  auto s = detail::prepare(cfg);
  auto r = detail::new_report(s, "fisher");
  std::vector<LossRecord>* trace = cfg.output.verbose ? &r.loss_trace : nullptr;
  const ScoreBank bank = detail::staged("train", [&] { return ScoreBank(s.cfg, s.model, s.grid, trace); });
  const FisherCurve curve = detail::staged(
      "fisher", [&] { return fisher_curve(s.cfg, s.model, s.grid, [&](std::size_t k) { return bank.at(k); }); });
  for (std::size_t k = 0; k < s.grid.size(); ++k) {
    r.rows[k].j_hat = curve.j_hat[k];
    r.rows[k].j_se = curve.std_error[k];
    if (s.oracle) r.rows[k].j_ref = s.oracle->fisher(s.grid[k]);
  }
  detail::finish_summary(s, r);
  return r;
}

// KDE-LOO column only (reference MI when known).
inline ExperimentReport run_kde_baseline(const ExperimentConfig& cfg) {
  auto s = detail::prepare(cfg);
  auto r = detail::new_report(s, "kde-baseline");
  detail::fill_kde(s, r);
  if (s.oracle)
    for (auto& row : r.rows) row.mi_ref = s.oracle->mi(row.t);
  detail::finish_summary(s, r);
  return r;
}

inline std::string curve_csv(const ExperimentReport& r) {
  std::string out = std::string(kCurveHeader) + "\n";
  auto per_n = [&](const std::optional<double>& v) -> std::optional<double> {
    if (!v) return std::nullopt;
    return *v / r.n;
  };
  for (const auto& row : r.rows) {
    const std::optional<double> cols[] = {row.t,      row.j_hat,  row.j_se,       row.j_ref,
                                          row.mmse_hat, row.mi_hat, row.mi_ref,   row.mi_rel_err,
                                          row.kde_mi, per_n(row.mi_hat), per_n(row.mi_ref)};
    bool first = true;
    for (const auto& c : cols) {
      if (!first) out += ',';
      out += detail::csv_number(c);
      first = false;
    }
    out += '\n';
  }
  return out;
}

// Writes curve.csv, summary.json, config.resolved and (verbose) loss_trace.csv.
inline void write_report(const ExperimentReport& r, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
  auto write = [&](const std::string& name, const std::string& text) {
    const std::string path = dir + "/" + name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("failed writing " + path);
  };
  write("curve.csv", curve_csv(r));
  write("summary.json", r.summary.dump(2) + "\n");
  write("config.resolved", to_json(r.config).dump(2) + "\n");
  if (r.config.output.verbose && !r.loss_trace.empty()) {
    std::string trace = "step,t,loss\n";
    for (const auto& rec : r.loss_trace)
      trace += std::to_string(rec.step) + "," + detail::csv_number(rec.t) + "," + detail::csv_number(rec.loss) + "\n";
    write("loss_trace.csv", trace);
  }
}

}  // namespace scoremi
