#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "scoremi/channels.hpp"
#include "scoremi/error.hpp"
#include "scoremi/rng.hpp"
#include "scoremi/score.hpp"

namespace scoremi {

// Geometric grid t_k = t_min (t_max / t_min)^(k / (M - 1)), i.e. uniform in
// u = log t with spacing du.
struct NoiseGrid {
  double t_min = 0.0;
  double t_max = 0.0;
  std::vector<double> points;
  double du = 0.0;

  std::size_t size() const { return points.size(); }
  double operator[](std::size_t k) const { return points[k]; }

  // Index of an exact grid point (up to 1e-12 relative), or throws.
  std::size_t index_of(double t) const {
    for (std::size_t k = 0; k < points.size(); ++k)
      if (std::abs(points[k] - t) <= 1e-12 * points[k]) return k;
    throw InputError("noise level " + std::to_string(t) + " is not a grid point");
  }
};

inline NoiseGrid make_grid(double t_min, double t_max, int count) {
  if (!(t_min > 0.0) || !(t_max > t_min) || !std::isfinite(t_max))
    throw InputError("make_grid: need 0 < t_min < t_max");
  if (count < 2) throw InputError("make_grid: need at least two points");
  NoiseGrid g;
  g.t_min = t_min;
  g.t_max = t_max;
  g.du = std::log(t_max / t_min) / (count - 1);
  const double ratio = t_max / t_min;
  g.points.resize(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k)
    g.points[k] = t_min * std::pow(ratio, static_cast<double>(k) / (count - 1));
  g.points.front() = t_min;
  g.points.back() = t_max;
  return g;
}

// Pairwise summation over fixed 128-element leaves; the reduction tree depends
// only on the length.
inline double pairwise_sum(std::span<const double> x) {
  if (x.size() <= 128) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  }
  const std::size_t half = x.size() / 2;
  return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

struct FisherEstimate {
  double j_hat = 0.0;
  double std_error = 0.0;
};

// J_hat = (1/N) sum ||s(y_i)||^2 over fresh forward samples at noise level t.
inline FisherEstimate estimate_fisher(const ScoreFn& score, const ChannelModel& model, double t, long count, Rng& rng,
                                      long chunk = 8192) {
  if (!(t > 0.0)) throw InputError("estimate_fisher: t must be positive");
  if (count < 2) throw InputError("estimate_fisher: need at least two samples");
  std::vector<double> sq(static_cast<std::size_t>(count));
  for (long start = 0; start < count; start += chunk) {
    const long m = std::min(chunk, count - start);
    const SampleBatch b = forward_channel(model, t, m, rng);
    const Matrix s = score(b.y, t);
    for (long i = 0; i < m; ++i) {
      const double v = s.row(i).squaredNorm();
      if (!std::isfinite(v))
        throw NumericError("estimate_fisher: non-finite score at sample " + std::to_string(start + i));
      sq[static_cast<std::size_t>(start + i)] = v;
    }
  }
  const double n = static_cast<double>(count);
  const double mean = pairwise_sum(sq) / n;
  for (double& v : sq) v = (v - mean) * (v - mean);
  const double var = pairwise_sum(sq) / (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

struct FisherCurve {
  NoiseGrid grid;
  std::vector<double> j_hat;
  std::vector<double> std_error;
  long n_samples = 0;
};

// Contribution of (t_max, inf) when mmse(t) has reached tr Cov.
inline double tail_correction(double trace_cov, double t_max) {
  if (trace_cov < 0.0 || !std::isfinite(trace_cov)) throw InputError("tail_correction: trace must be nonnegative");
  if (!(t_max > 0.0)) throw InputError("tail_correction: t_max must be positive");
  return trace_cov / (2.0 * t_max);
}

struct MICurve {
  NoiseGrid grid;
  std::vector<double> mi_hat;     // nats, at T = t_k
  std::vector<double> integrand;  // l(u_k) = n - t_k J_hat(t_k), clamped at 0
  std::vector<bool> clamped;
  double tail = 0.0;
  double trace_cov = std::nan("");

  double at(double t) const { return mi_hat[grid.index_of(t)]; }
};

// Trapezoid rule in u = log t:
//   I(T = t_k) = 1/2 sum_{j=k}^{M-2} (l_j + l_{j+1}) / 2 du + tail.
inline MICurve integrate_mi(const FisherCurve& curve, int n, double tail) {
  const std::size_t m = curve.grid.size();
  if (curve.j_hat.size() != m) throw InputError("integrate_mi: curve length does not match its grid");
  if (m < 2) throw InputError("integrate_mi: grid needs at least two points");
  if (tail < 0.0) throw InputError("integrate_mi: tail must be nonnegative");
  MICurve mi;
  mi.grid = curve.grid;
  mi.tail = tail;
  mi.integrand.resize(m);
  mi.clamped.assign(m, false);
  for (std::size_t k = 0; k < m; ++k) {
    const double l = n - curve.grid[k] * curve.j_hat[k];
    mi.clamped[k] = l < 0.0;
    mi.integrand[k] = std::max(l, 0.0);
  }
  mi.mi_hat.assign(m, 0.0);
  double acc = 0.0;
  mi.mi_hat[m - 1] = tail;
  for (std::size_t k = m - 1; k-- > 0;) {
    acc += 0.5 * (mi.integrand[k] + mi.integrand[k + 1]) * curve.grid.du;
    mi.mi_hat[k] = 0.5 * acc + tail;
  }
  return mi;
}

struct MMSECurve {
  NoiseGrid grid;
  std::vector<double> mmse_hat;
  std::vector<bool> clamped;
};

// mmse(t) = n t - t^2 J(t), clamped to [0, n t].
inline MMSECurve mmse_from_fisher(const FisherCurve& curve, int n) {
  MMSECurve out;
  out.grid = curve.grid;
  for (std::size_t k = 0; k < curve.grid.size(); ++k) {
    const double t = curve.grid[k];
    const double raw = n * t - t * t * curve.j_hat[k];
    const double v = std::clamp(raw, 0.0, n * t);
    out.mmse_hat.push_back(v);
    out.clamped.push_back(v != raw);
  }
  return out;
}

// E[W | Y_t = y] = y + t s(y), applied row-wise.
inline Matrix tweedie_posterior_mean(const ScoreFn& score, const Matrix& y, double t) {
  if (!(t > 0.0)) throw InputError("tweedie_posterior_mean: t must be positive");
  return y + t * score(y, t);
}

}  // namespace scoremi
