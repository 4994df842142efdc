#pragma once

#include <functional>
#include <memory>

#include "scoremi/nn.hpp"

namespace scoremi {

// A batched score model: y is N x n, the result is N x n. `t` is the noise
// variance the batch was drawn at; unconditional models ignore it.
using ScoreFn = std::function<Matrix(const Matrix& y, double t)>;

inline ScoreFn zero_score() {
  return [](const Matrix& y, double) { return Matrix::Zero(y.rows(), y.cols()).eval(); };
}

// Marginal score of N(0, (P + t) I): s(y) = -y / (P + t).
inline ScoreFn gaussian_score(double power) {
  return [power](const Matrix& y, double t) { return (-y / (power + t)).eval(); };
}

// Marginal score of N(0, C) with C = P A A^T + t I.
inline ScoreFn linear_gaussian_score(const Matrix& a, double power) {
  return [a, power](const Matrix& y, double t) {
    const Matrix cov = power * a * a.transpose() + t * Matrix::Identity(a.rows(), a.rows());
    // Rows of y times C^{-1} (C is symmetric).
    return (-cov.llt().solve(y.transpose()).transpose()).eval();
  };
}

// Wraps a trained network. Conditional networks receive t; per-t networks
// do not.
inline ScoreFn network_score(std::shared_ptr<const ScoreNetwork> net) {
  return [net](const Matrix& y, double t) {
    return net->conditional() ? net->forward_batch(y, t) : net->forward_batch(y);
  };
}

}  // namespace scoremi
