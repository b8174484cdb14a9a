#pragma once

// Per-series spatiotemporal embeddings: a momentum-averaged temporal part
// and a graph-convolutional spatial part, plus cosine-similarity selection
// of auxiliary series.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "stts/error.hpp"

namespace stts {

// Cosine similarity. Vectors with norm below 1e-12 are rejected.
inline double similarity(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  require(a.size() == b.size(), ErrorKind::dimension, "similarity: length mismatch");
  const double na = a.norm(), nb = b.norm();
  require(na >= 1e-12 && nb >= 1e-12, ErrorKind::numeric, "similarity: zero-norm embedding");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

// Target first, then the M-1 most similar series (descending similarity,
// ties by ascending index). Embeddings are the rows of `embeddings`.
inline std::vector<std::size_t> select_auxiliary(std::size_t target, const Matrix& embeddings,
                                                 std::size_t M) {
  const auto N = static_cast<std::size_t>(embeddings.rows());
  require(target < N, ErrorKind::invalid_argument, "select_auxiliary: target out of range");
  require(M >= 1 && M <= N, ErrorKind::invalid_argument, "select_auxiliary: need 1 <= M <= N");
  const Vector e_t = embeddings.row(static_cast<Eigen::Index>(target)).transpose();
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(N - 1);
  for (std::size_t j = 0; j < N; ++j) {
    if (j == target) continue;
    const Vector e_j = embeddings.row(static_cast<Eigen::Index>(j)).transpose();
    scored.emplace_back(similarity(e_t, e_j), j);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;
  });
  std::vector<std::size_t> out{target};
  for (std::size_t k = 0; k + 1 < M; ++k) out.push_back(scored[k].second);
  return out;
}

// Similarity-free selection: the target followed by the next M-1 indices
// cyclically.
inline std::vector<std::size_t> select_fixed(std::size_t target, std::size_t N, std::size_t M) {
  require(target < N && M >= 1 && M <= N, ErrorKind::invalid_argument, "select_fixed: need 1 <= M <= N");
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < M; ++k) out.push_back((target + k) % N);
  return out;
}

// D^{-1/2} (A + I) D^{-1/2}; every node has its self loop, so D > 0.
inline Matrix normalized_adjacency(const Matrix& adjacency) {
  require(adjacency.rows() == adjacency.cols(), ErrorKind::dimension, "adjacency must be square");
  Matrix a = adjacency;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    require(a(i, i) == 0.0, ErrorKind::invalid_argument, "adjacency must have a zero diagonal");
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      require(a(i, j) >= 0.0 && a(i, j) == adjacency(j, i), ErrorKind::invalid_argument,
              "adjacency must be symmetric and nonnegative");
    }
  }
  a += Matrix::Identity(a.rows(), a.cols());
  const Vector inv_sqrt = a.rowwise().sum().array().rsqrt().matrix();
  return inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
}

struct GcnParams {
  Matrix node_features;  // N × d2, learnable
  Matrix layer1;         // d2 × d2
  Matrix layer2;         // d2 × d2
};

// Two propagation layers over the normalized adjacency: N × d2.
inline Matrix compute_spatial(const Matrix& norm_adjacency, const GcnParams& p) {
  require(norm_adjacency.rows() == p.node_features.rows(), ErrorKind::dimension,
          "compute_spatial: node count mismatch");
  const Matrix h1 = (norm_adjacency * p.node_features * p.layer1).array().tanh().matrix();
  return (norm_adjacency * h1 * p.layer2).array().tanh().matrix();
}

// One-hidden-layer encoder f: rows of X (length P) -> rows of length d1.
struct WindowEncoder {
  Matrix w1;      // P × hidden
  RowVector b1;   // 1 × hidden
  Matrix w2;      // hidden × d1
  RowVector b2;   // 1 × d1

  Matrix encode(const Matrix& windows) const {
    Matrix h = windows * w1;
    h.rowwise() += b1;
    Matrix out = h.array().tanh().matrix() * w2;
    out.rowwise() += b2;
    return out.array().tanh().matrix();
  }

  Vector operator()(const Vector& window) const {
    return encode(window.transpose()).row(0).transpose();
  }
};

// Momentum state of the temporal embeddings, one row per series.
class MomentumEmbedding {
 public:
  MomentumEmbedding() = default;

  MomentumEmbedding(std::size_t n_series, std::size_t dim, double gamma, std::uint64_t seed,
                    double init_scale = 0.1)
      : gamma_(gamma) {
    require(gamma >= 0.0 && gamma <= 1.0, ErrorKind::invalid_argument, "gamma must lie in [0,1]");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, init_scale);
    state_.resize(static_cast<Eigen::Index>(n_series), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < state_.rows(); ++i) {
      for (Eigen::Index j = 0; j < state_.cols(); ++j) state_(i, j) = gauss(rng);
    }
  }

  MomentumEmbedding(Matrix state, double gamma) : state_(std::move(state)), gamma_(gamma) {
    require(gamma >= 0.0 && gamma <= 1.0, ErrorKind::invalid_argument, "gamma must lie in [0,1]");
  }

  double gamma() const { return gamma_; }
  const Matrix& state() const { return state_; }
  Matrix& state() { return state_; }
  std::size_t n_series() const { return static_cast<std::size_t>(state_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(state_.cols()); }

  // E <- gamma * E + (1 - gamma) * encoded for one series.
  void blend(std::size_t series, const Vector& encoded) {
    require(encoded.size() == state_.cols(), ErrorKind::dimension, "momentum update: width mismatch");
    require(encoded.allFinite(), ErrorKind::numeric, "momentum update: non-finite encoder output");
    auto row = state_.row(static_cast<Eigen::Index>(series));
    row = gamma_ * row + (1.0 - gamma_) * encoded.transpose();
  }

  // For each series in the batch, blend in the mean encoding of its windows.
  // Series absent from the batch are left alone.
  template <class Encoder>
  void update_temporal(const std::map<std::size_t, std::vector<Vector>>& batch, Encoder&& encoder) {
    for (const auto& [series, windows] : batch) {
      require(series < n_series(), ErrorKind::invalid_argument, "momentum update: series out of range");
      if (windows.empty()) continue;
      Vector mean = Vector::Zero(state_.cols());
      for (const Vector& w : windows) mean += encoder(w);
      blend(series, mean / static_cast<double>(windows.size()));
    }
  }

 private:
  Matrix state_;
  double gamma_ = 0.9;
};

}  // namespace stts
