#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>

#include "rainmrf/common.hpp"
#include "rainmrf/csv.hpp"
#include "rainmrf/data.hpp"
#include "rainmrf/model.hpp"

namespace rainmrf {

struct ClusteringResult {
  Labels labels;      // 1-based, dense
  Matrix centers;     // D x k, column j is the center of label j + 1
  double objective = 0.0;
  // Objective after every assignment step, one history per restart.
  std::vector<std::vector<double>> histories;
};

namespace detail {

inline double squared_distance(const Eigen::Ref<const Matrix>& points, Eigen::Index i,
                               const Matrix& centers, Eigen::Index j) {
  return (points.row(i).transpose() - centers.col(j)).squaredNorm();
}

// k-means++ seeding followed by Lloyd iterations.
inline ClusteringResult lloyd(const Eigen::Ref<const Matrix>& points, int k, std::mt19937_64& rng,
                              int max_iterations) {
  const auto n = points.rows();
  const auto dim = points.cols();
  Matrix centers(dim, k);
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Eigen::Index first = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
  centers.col(0) = points.row(first).transpose();
  for (int j = 1; j < k; ++j) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], squared_distance(points, i, centers, j - 1));
      total += d2[static_cast<std::size_t>(i)];
    }
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick < n - 1; ++pick) {
        r -= d2[static_cast<std::size_t>(pick)];
        if (r < 0.0) break;
      }
    } else {
      pick = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
    }
    centers.col(j) = points.row(pick).transpose();
  }

  ClusteringResult out;
  out.histories.emplace_back();
  auto& history = out.histories.back();
  Labels labels(static_cast<std::size_t>(n), 0);
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    double objective = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = squared_distance(points, i, centers, 0);
      for (int j = 1; j < k; ++j) {
        const double dj = squared_distance(points, i, centers, j);
        if (dj < best_d) {
          best_d = dj;
          best = j;
        }
      }
      if (labels[static_cast<std::size_t>(i)] != best + 1) changed = true;
      labels[static_cast<std::size_t>(i)] = best + 1;
      dist[static_cast<std::size_t>(i)] = best_d;
      objective += best_d;
    }
    history.push_back(objective);
    if (!changed && iter > 0) break;

    // Empty clusters are re-seeded at the point farthest from its center.
    std::vector<int> size(static_cast<std::size_t>(k), 0);
    for (int l : labels) ++size[static_cast<std::size_t>(l - 1)];
    for (int j = 0; j < k; ++j) {
      if (size[static_cast<std::size_t>(j)] > 0) continue;
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < n; ++i)
        if (size[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)] - 1)] > 1 &&
            (far < 0 || dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)]))
          far = i;
      if (far < 0) break;
      --size[static_cast<std::size_t>(labels[static_cast<std::size_t>(far)] - 1)];
      labels[static_cast<std::size_t>(far)] = j + 1;
      dist[static_cast<std::size_t>(far)] = 0.0;
      ++size[static_cast<std::size_t>(j)];
    }
    centers.setZero();
    for (Eigen::Index i = 0; i < n; ++i) centers.col(labels[static_cast<std::size_t>(i)] - 1) += points.row(i).transpose();
    for (int j = 0; j < k; ++j)
      if (size[static_cast<std::size_t>(j)] > 0) centers.col(j) /= size[static_cast<std::size_t>(j)];
  }
  out.labels = std::move(labels);
  out.centers = std::move(centers);
  out.objective = history.back();
  return out;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding; the best of `restarts` runs is kept.
// Points are the rows of `points`.
inline ClusteringResult kmeans(const Eigen::Ref<const Matrix>& points, int k, std::uint64_t seed,
                               int restarts = 10, int max_iterations = 500) {
  if (k < 1) throw ValidationError("k-means needs k >= 1");
  if (k > points.rows()) throw ValidationError("k-means needs k <= number of points");
  std::mt19937_64 rng(seed);
  ClusteringResult best;
  std::vector<std::vector<double>> histories;
  for (int r = 0; r < std::max(restarts, 1); ++r) {
    auto run = detail::lloyd(points, k, rng, max_iterations);
    histories.push_back(run.histories.front());
    if (r == 0 || run.objective < best.objective) best = std::move(run);
  }
  best.histories = std::move(histories);
  // Lloyd keeps every label populated; compaction only guards degenerate input.
  const auto old_of_new = compact_labels(best.labels);
  if (static_cast<Eigen::Index>(old_of_new.size()) - 1 != best.centers.cols()) {
    Matrix kept(best.centers.rows(), static_cast<Eigen::Index>(old_of_new.size()) - 1);
    for (std::size_t j = 1; j < old_of_new.size(); ++j) kept.col(static_cast<Eigen::Index>(j) - 1) = best.centers.col(old_of_new[j] - 1);
    best.centers = std::move(kept);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Spectral clustering

// I - D^{-1/2} W D^{-1/2}; isolated nodes get a zero scaling.
inline Matrix normalized_laplacian(const Matrix& similarity) {
  const auto n = similarity.rows();
  if (similarity.cols() != n) throw ValidationError("similarity matrix must be square");
  if (n > 0 && (similarity - similarity.transpose()).cwiseAbs().maxCoeff() >
                   1e-12 * std::max(1.0, similarity.cwiseAbs().maxCoeff()))
    throw ValidationError("similarity matrix must be symmetric");
  if ((similarity.array() < 0.0).any()) throw ValidationError("similarity must be non-negative");
  const Vector degree = similarity.rowwise().sum();
  Vector scale(n);
  for (Eigen::Index i = 0; i < n; ++i) scale(i) = degree(i) > 0.0 ? 1.0 / std::sqrt(degree(i)) : 0.0;
  Matrix lap = -(scale.asDiagonal() * similarity * scale.asDiagonal());
  lap.diagonal().array() += 1.0;
  return lap;
}

// Bottom-k eigenvectors of the symmetric normalized Laplacian, rows scaled to
// unit length, then k-means on the rows.
inline ClusteringResult spectral_cluster(const Matrix& similarity, int k, std::uint64_t seed) {
  if (k < 1 || k > similarity.rows()) throw ValidationError("spectral clustering needs 1 <= k <= N");
  const Matrix lap = normalized_laplacian(similarity);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(lap);
  if (eig.info() != Eigen::Success) throw NumericError("Laplacian eigendecomposition failed");
  Matrix embed = eig.eigenvectors().leftCols(k);
  for (Eigen::Index i = 0; i < embed.rows(); ++i) {
    const double norm = embed.row(i).norm();
    if (norm > 0.0) embed.row(i) /= norm;
  }
  return kmeans(embed, k, seed);
}

// Median of the pairwise distances over i < j; zero when fewer than two rows.
inline double median_pairwise_distance(const Matrix& points) {
  std::vector<double> d;
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    for (Eigen::Index j = i + 1; j < points.rows(); ++j) d.push_back((points.row(i) - points.row(j)).norm());
  if (d.empty()) return 0.0;
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  if (d.size() % 2 == 1) return *mid;
  return 0.5 * (*mid + *std::max_element(d.begin(), mid));
}

// exp(-||x_i - x_j|| / tau). tau <= 0 selects the median pairwise distance.
inline Matrix similarity_spect1(const Matrix& points, double tau = 0.0) {
  if (tau <= 0.0) tau = median_pairwise_distance(points);
  const auto n = points.rows();
  Matrix w(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double dist = (points.row(i) - points.row(j)).norm();
      w(i, j) = w(j, i) = tau > 0.0 ? std::exp(-dist / tau) : 1.0;
    }
  }
  return w;
}

// 1 - Hamming(z_i, z_j) / D over the rows of `states`.
inline Matrix similarity_spect2(const StateMatrix& states) {
  const auto n = states.rows();
  const auto dim = states.cols();
  Matrix w(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto diff = (states.row(i).array() != states.row(j).array()).count();
      w(i, j) = w(j, i) = 1.0 - static_cast<double>(diff) / static_cast<double>(dim);
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Empirical orthogonal functions and sparse regression on them

struct EofBasis {
  Matrix vectors;  // S x S, orthonormal columns
  Vector values;   // descending, non-negative
  Vector mean;     // mean daily rainfall vector
};

// Eigendecomposition of the sample covariance (denominator T - 1) of the
// columns of `drvs` (S x T).
inline EofBasis eof_decompose(const Matrix& drvs) {
  const auto S = drvs.rows();
  const auto T = drvs.cols();
  EofBasis b;
  b.mean = drvs.rowwise().mean();
  const Matrix centered = drvs.colwise() - b.mean;
  const Matrix cov = T > 1 ? Matrix(centered * centered.transpose() / static_cast<double>(T - 1))
                           : Matrix(Matrix::Zero(S, S));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("covariance eigendecomposition failed");
  b.vectors = eig.eigenvectors().rowwise().reverse();
  b.values = eig.eigenvalues().reverse().cwiseMax(0.0);
  return b;
}

inline double soft_threshold(double x, double threshold) {
  if (x > threshold) return x - threshold;
  if (x < -threshold) return x + threshold;
  return 0.0;
}

// Coefficients minimizing ||(x - mean) - sum_j a_j e_j||^2 + reg * sum_j |a_j|
// by cyclic coordinate descent; stops when no coefficient moves by 1e-8.
inline Vector lasso_fit(const Vector& target, const EofBasis& basis, double reg,
                        int max_passes = 1000) {
  if (reg < 0.0) throw ValidationError("LASSO regularization must be >= 0");
  const auto p = basis.vectors.cols();
  Vector coef = Vector::Zero(p);
  Vector residual = target - basis.mean;
  const Vector col_sq = basis.vectors.colwise().squaredNorm().transpose();
  for (int pass = 0; pass < max_passes; ++pass) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (col_sq(j) <= 0.0) continue;
      const double rho = basis.vectors.col(j).dot(residual) + coef(j) * col_sq(j);
      const double next = soft_threshold(rho, reg / 2.0) / col_sq(j);
      const double delta = next - coef(j);
      if (delta != 0.0) {
        residual -= delta * basis.vectors.col(j);
        coef(j) = next;
      }
      max_change = std::max(max_change, std::abs(delta));
    }
    if (max_change < 1e-8) break;
  }
  return coef;
}

// Largest violation of the LASSO optimality conditions for `coef`.
inline double lasso_kkt_residual(const Vector& target, const EofBasis& basis, double reg,
                                 const Vector& coef) {
  const Vector residual = target - basis.mean - basis.vectors * coef;
  const Vector grad = 2.0 * basis.vectors.transpose() * residual;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < coef.size(); ++j) {
    if (coef(j) != 0.0)
      worst = std::max(worst, std::abs(grad(j) - reg * (coef(j) > 0 ? 1.0 : -1.0)));
    else
      worst = std::max(worst, std::max(0.0, std::abs(grad(j)) - reg));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Patterns from a day clustering

// Cluster-mean rainfall vectors as CRPs, thresholded against the location-wise
// mean daily rainfall for CDPs.
inline PatternSet baseline_patterns(const RainfallDataset& d, const Labels& labels) {
  const auto S = d.num_locations();
  const int K = max_label(labels);
  PatternSet p;
  p.crp = Matrix::Zero(S, K);
  p.day_count.assign(static_cast<std::size_t>(K), 0);
  p.year_count.assign(static_cast<std::size_t>(K), 0);
  std::vector<std::vector<bool>> years(static_cast<std::size_t>(K),
                                       std::vector<bool>(static_cast<std::size_t>(d.num_years()), false));
  for (Eigen::Index t = 0; t < d.num_days(); ++t) {
    const int u = labels[static_cast<std::size_t>(t)] - 1;
    p.crp.col(u) += d.rain().col(t);
    ++p.day_count[static_cast<std::size_t>(u)];
    years[static_cast<std::size_t>(u)][static_cast<std::size_t>(d.year_index(t))] = true;
  }
  p.cdp.resize(S, K);
  for (int u = 0; u < K; ++u) {
    if (p.day_count[static_cast<std::size_t>(u)] > 0) p.crp.col(u) /= p.day_count[static_cast<std::size_t>(u)];
    p.year_count[static_cast<std::size_t>(u)] = static_cast<int>(std::count(
        years[static_cast<std::size_t>(u)].begin(), years[static_cast<std::size_t>(u)].end(), true));
    for (Eigen::Index s = 0; s < S; ++s)
      p.cdp(s, u) = p.crp(s, u) > d.location_mean()(s) ? kHigh : kLow;
  }
  p.volume = p.crp.colwise().sum().transpose();
  p.cts.resize(d.num_days(), 0);
  p.cds.resize(d.num_days(), 0);
  return p;
}

// Leading `count` EOFs as patterns: the eigenvector is the CRP and its
// positive entries are the high cells of the CDP.
inline PatternSet eof_patterns(const EofBasis& b, int count) {
  const auto S = b.vectors.rows();
  const auto K = std::min<Eigen::Index>(count, b.vectors.cols());
  PatternSet p;
  p.crp = b.vectors.leftCols(K);
  p.cdp.resize(S, K);
  for (Eigen::Index u = 0; u < K; ++u)
    for (Eigen::Index s = 0; s < S; ++s) p.cdp(s, u) = p.crp(s, u) > 0.0 ? kHigh : kLow;
  p.volume = p.crp.colwise().sum().transpose();
  p.day_count.assign(static_cast<std::size_t>(K), 0);
  p.year_count.assign(static_cast<std::size_t>(K), 0);
  return p;
}

inline void write_eof(const EofBasis& b, const Matrix& coefficients, const std::filesystem::path& dir) {
  {
    auto out = csv::open_for_write(dir / "eof_basis.csv");
    out << "mode,loc_id,value\n";
    for (Eigen::Index j = 0; j < b.vectors.cols(); ++j)
      for (Eigen::Index s = 0; s < b.vectors.rows(); ++s)
        out << j + 1 << ',' << s << ',' << csv::fmt(b.vectors(s, j)) << '\n';
  }
  {
    auto out = csv::open_for_write(dir / "eof_values.csv");
    out << "mode,eigenvalue\n";
    for (Eigen::Index j = 0; j < b.values.size(); ++j) out << j + 1 << ',' << csv::fmt(b.values(j)) << '\n';
  }
  {
    auto out = csv::open_for_write(dir / "eof_mean.csv");
    out << "loc_id,mean_mm\n";
    for (Eigen::Index s = 0; s < b.mean.size(); ++s) out << s << ',' << csv::fmt(b.mean(s)) << '\n';
  }
  auto out = csv::open_for_write(dir / "lasso_coefficients.csv");
  out << "day_index,mode,coefficient\n";
  for (Eigen::Index t = 0; t < coefficients.cols(); ++t)
    for (Eigen::Index j = 0; j < coefficients.rows(); ++j)
      if (coefficients(j, t) != 0.0) out << t << ',' << j + 1 << ',' << csv::fmt(coefficients(j, t)) << '\n';
}

}  // namespace rainmrf
