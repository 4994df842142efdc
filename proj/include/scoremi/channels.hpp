#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scoremi/error.hpp"
#include "scoremi/nn.hpp"
#include "scoremi/rng.hpp"

namespace scoremi {

// Batches are N x n matrices, one sample per row. Front-end matrices act on
// rows as x -> x A^T, which is the column convention A x written row-wise.

enum class PriorKind { gaussian_iso, bpsk };

struct Prior {
  PriorKind kind = PriorKind::gaussian_iso;
  double power = 1.0;
  int dim = 1;
};

enum class FrontEndKind { identity, linear, tanh_linear };

struct FrontEnd {
  FrontEndKind kind = FrontEndKind::identity;
  Matrix matrix;  // n x n; unused for identity
};

struct ChannelModel {
  Prior prior;
  FrontEnd frontend;

  int dim() const { return prior.dim; }

  void validate() const {
    if (prior.dim <= 0) throw ConfigError("channel: dimension must be positive");
    if (!(prior.power > 0.0)) throw ConfigError("channel: power must be positive");
    if (frontend.kind != FrontEndKind::identity &&
        (frontend.matrix.rows() != prior.dim || frontend.matrix.cols() != prior.dim))
      throw ConfigError("channel: front-end matrix must be " + std::to_string(prior.dim) + "x" +
                        std::to_string(prior.dim));
  }
};

struct SampleBatch {
  Matrix w;    // front-end outputs
  Matrix eps;  // standard normal draws
  Matrix y;    // w + sqrt(t) * eps
  double t = 0.0;
};

inline Matrix sample_prior(const Prior& prior, long count, Rng& rng) {
  if (count < 1) throw InputError("sample_prior: need at least one sample");
  Matrix x(count, prior.dim);
  const double amp = std::sqrt(prior.power);
  switch (prior.kind) {
    case PriorKind::gaussian_iso:
      for (long i = 0; i < count; ++i)
        for (int j = 0; j < prior.dim; ++j) x(i, j) = amp * rng.normal();
      break;
    case PriorKind::bpsk:
      for (long i = 0; i < count; ++i)
        for (int j = 0; j < prior.dim; ++j) x(i, j) = rng.bernoulli_half() ? amp : -amp;
      break;
    default:
      throw ConfigError("sample_prior: unknown prior kind");
  }
  return x;
}

inline Matrix apply_frontend(const FrontEnd& f, const Matrix& x) {
  if (f.kind == FrontEndKind::identity) return x;
  if (f.matrix.cols() != x.cols() || f.matrix.rows() != f.matrix.cols())
    throw InputError("apply_frontend: matrix is " + std::to_string(f.matrix.rows()) + "x" +
                     std::to_string(f.matrix.cols()) + " but samples have " + std::to_string(x.cols()) +
                     " columns");
  Matrix w = x * f.matrix.transpose();
  if (f.kind == FrontEndKind::tanh_linear) w = w.array().tanh().matrix();
  return w;
}

// Prior draws first, then the noise, from the same stream.
inline SampleBatch forward_channel(const ChannelModel& model, double t, long count, Rng& rng) {
  if (!(t > 0.0) || !std::isfinite(t)) throw InputError("forward_channel: t must be positive");
  SampleBatch b;
  b.t = t;
  b.w = apply_frontend(model.frontend, sample_prior(model.prior, count, rng));
  b.eps.resize(count, model.dim());
  for (long i = 0; i < count; ++i)
    for (int j = 0; j < model.dim(); ++j) b.eps(i, j) = rng.normal();
  b.y = b.w + std::sqrt(t) * b.eps;
  return b;
}

// Haar-style orthogonal matrix from the QR factorization of a Gaussian
// matrix, with signs chosen so that diag(R) >= 0.
inline Matrix random_orthogonal(int n, Rng& rng) {
  if (n < 1) throw InputError("random_orthogonal: n must be positive");
  Matrix g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  const Matrix& r = qr.matrixQR();
  for (int j = 0; j < n; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

inline double orthogonality_defect(const Matrix& a) {
  return (a * a.transpose() - Matrix::Identity(a.rows(), a.rows())).cwiseAbs().maxCoeff();
}

// Sum of unbiased per-coordinate sample variances.
inline double trace_cov_estimate(const Matrix& samples) {
  if (samples.rows() < 2) throw InputError("trace_cov_estimate: need at least two samples");
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const double ss = (samples.rowwise() - mean).squaredNorm();
  return ss / static_cast<double>(samples.rows() - 1);
}

// Plain-text matrices: one row per line, whitespace-separated values.
inline Matrix read_matrix_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read matrix file " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<double> row;
    double v;
    while (ls >> v) row.push_back(v);
    if (!ls.eof()) throw ConfigError("matrix file " + path + ": unparsable value");
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("matrix file " + path + " is empty");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw ConfigError("matrix file " + path + ": ragged rows");
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

inline void write_matrix_file(const Matrix& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write matrix file " + path);
  char buf[32];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      out << (j ? " " : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing matrix file " + path);
}

}  // namespace scoremi
