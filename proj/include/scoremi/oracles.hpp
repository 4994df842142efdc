#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scoremi/error.hpp"
#include "scoremi/fisher_mi.hpp"
#include "scoremi/nn.hpp"

namespace scoremi {

// All information quantities are in nats.

struct GaussianForms {
  double mi = 0.0;
  double fisher = 0.0;
  double mmse = 0.0;
  double cond_entropy = 0.0;
};

// X ~ N(0, P I_n), Y_t = X + Z_t.
inline GaussianForms gaussian_closed_forms(int n, double power, double t) {
  if (n < 1) throw InputError("gaussian_closed_forms: n must be positive");
  if (!(power > 0.0) || !(t > 0.0)) throw InputError("gaussian_closed_forms: P and t must be positive");
  GaussianForms g;
  g.mi = 0.5 * n * std::log1p(power / t);
  g.fisher = n / (power + t);
  g.mmse = n * power * t / (power + t);
  g.cond_entropy = 0.5 * n * std::log(2.0 * std::numbers::pi * std::numbers::e * power * t / (power + t));
  return g;
}

struct LinearForms {
  double mi = 0.0;
  double fisher = 0.0;
  double mmse = 0.0;
};

// X ~ N(0, P I_n), Y_t = A X + Z_t with A square and nonsingular.
inline LinearForms linear_closed_forms(const Matrix& a, double power, double t) {
  if (a.rows() != a.cols() || a.rows() == 0) throw InputError("linear_closed_forms: A must be square");
  if (!(power > 0.0) || !(t > 0.0)) throw InputError("linear_closed_forms: P and t must be positive");
  const Eigen::JacobiSVD<Matrix> svd(a);
  const auto& sv = svd.singularValues();
  if (!(sv.minCoeff() > 1e-12 * sv.maxCoeff())) throw InputError("linear_closed_forms: A is singular");
  const Eigen::Index n = a.rows();
  const Matrix id = Matrix::Identity(n, n);
  const Matrix aat = a * a.transpose();
  LinearForms r;
  const Eigen::LLT<Matrix> snr(id + (power / t) * aat);
  r.mi = snr.matrixLLT().diagonal().array().log().sum();  // 1/2 log det = sum log diag(L)
  r.fisher = (power * aat + t * id).llt().solve(id).trace();
  r.mmse = (id / power + a.transpose() * a / t).llt().solve(id).trace();
  return r;
}

struct QuadratureSpec {
  double abs_tol = 1e-10;
  double window_sigmas = 12.0;  // half-width sqrt(P) + window_sigmas * sqrt(t)
  int min_depth = 6;
  int max_depth = 48;
};

namespace detail {

template <typename F>
struct Simpson {
  F& f;
  int min_depth;
  int max_depth;
  bool failed = false;

  double rec(double a, double b, double fa, double fm, double fb, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    // Panels whose disagreement is at rounding level cannot be refined further.
    const double floor = 64.0 * std::numeric_limits<double>::epsilon() * std::abs(left + right);
    if (depth >= min_depth && std::abs(delta) <= std::max(15.0 * tol, floor)) return left + right + delta / 15.0;
    if (depth >= max_depth) {
      failed = true;
      return left + right + delta / 15.0;
    }
    return rec(a, m, fa, flm, fm, left, 0.5 * tol, depth + 1) + rec(m, b, fm, frm, fb, right, 0.5 * tol, depth + 1);
  }
};

}  // namespace detail

// Adaptive composite Simpson on [a, b] to absolute tolerance `tol`.
template <typename F>
double adaptive_simpson(F f, double a, double b, double tol, int min_depth = 6, int max_depth = 48) {
  detail::Simpson<F> s{f, min_depth, max_depth};
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  const double v = s.rec(a, b, fa, fm, fb, whole, tol, 0);
  if (s.failed || !std::isfinite(v)) throw NumericError("adaptive_simpson: no convergence on [" + std::to_string(a) +
                                                        ", " + std::to_string(b) + "]");
  return v;
}

namespace detail {

// log of the equal-weight mixture 1/2 N(-a, t) + 1/2 N(a, t) at y.
inline double bpsk_log_density(double y, double amp, double t) {
  const double e1 = -(y - amp) * (y - amp) / (2.0 * t);
  const double e2 = -(y + amp) * (y + amp) / (2.0 * t);
  const double hi = std::max(e1, e2);
  return hi + std::log1p(std::exp(std::min(e1, e2) - hi)) - std::log(2.0) -
         0.5 * std::log(2.0 * std::numbers::pi * t);
}

// Integral of g over the real line for an even integrand concentrated
// around +-amp, split at the peak.
template <typename G>
double bpsk_even_integral(G g, double amp, double t, const QuadratureSpec& q) {
  const double edge = amp + q.window_sigmas * std::sqrt(t);
  const double tol = 0.25 * q.abs_tol;
  return 2.0 * (adaptive_simpson(g, 0.0, amp, tol, q.min_depth, q.max_depth) +
                adaptive_simpson(g, amp, edge, tol, q.min_depth, q.max_depth));
}

}  // namespace detail

// I(X; Y_t) for X uniform on {-sqrt(P), +sqrt(P)}: h(Y) - 1/2 log(2 pi e t).
inline double bpsk_exact_mi(double power, double t, const QuadratureSpec& q = {}) {
  if (!(power > 0.0) || !(t > 0.0)) throw InputError("bpsk_exact_mi: P and t must be positive");
  const double amp = std::sqrt(power);
  auto neg_plogp = [&](double y) {
    const double lp = detail::bpsk_log_density(y, amp, t);
    return -std::exp(lp) * lp;
  };
  const double h = detail::bpsk_even_integral(neg_plogp, amp, t, q);
  return std::max(0.0, h - 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * t));
}

// J(Y_t) for the same channel, with s(y) = (a tanh(a y / t) - y) / t.
inline double bpsk_exact_fisher(double power, double t, const QuadratureSpec& q = {}) {
  if (!(power > 0.0) || !(t > 0.0)) throw InputError("bpsk_exact_fisher: P and t must be positive");
  const double amp = std::sqrt(power);
  auto ps2 = [&](double y) {
    const double s = (amp * std::tanh(amp * y / t) - y) / t;
    return std::exp(detail::bpsk_log_density(y, amp, t)) * s * s;
  };
  return detail::bpsk_even_integral(ps2, amp, t, q);
}

// Leave-one-out kernel plug-in estimate
//   (1/N) sum_i [ -||y_i - w_i||^2 / 2t - log( 1/(N-1) sum_{j != i} exp(-||y_i - w_j||^2 / 2t) ) ]
// using the full O(N^2) double sum.
inline double kde_loo_mi(const Matrix& w, const Matrix& y, double t) {
  if (!(t > 0.0)) throw InputError("kde_loo_mi: t must be positive");
  if (w.rows() != y.rows() || w.cols() != y.cols()) throw InputError("kde_loo_mi: w and y must have the same shape");
  const Eigen::Index count = w.rows();
  if (count < 2) throw InputError("kde_loo_mi: need at least two samples");
  const double inv_2t = 1.0 / (2.0 * t);
  const double log_norm = std::log(static_cast<double>(count - 1));
  std::vector<double> terms(static_cast<std::size_t>(count));
  Eigen::ArrayXd expo(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    expo.setZero();
    for (Eigen::Index k = 0; k < w.cols(); ++k) expo += (w.col(k).array() - y(i, k)).square();
    expo *= -inv_2t;
    const double own = expo[i];
    expo[i] = -std::numeric_limits<double>::infinity();
    const double hi = expo.maxCoeff();
    // grouped so that a constant input cancels exactly
    terms[static_cast<std::size_t>(i)] = (own - hi) - (std::log((expo - hi).exp().sum()) - log_norm);
  }
  return pairwise_sum(terms) / static_cast<double>(count);
}

}  // namespace scoremi
