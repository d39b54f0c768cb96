#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rainmrf/common.hpp"
#include "rainmrf/csv.hpp"
#include "rainmrf/data.hpp"
#include "rainmrf/latent_state.hpp"

namespace rainmrf {

// User-set strengths (gamma .. sigma) and estimated parameters (alpha, beta, mu).
struct ModelParams {
  double gamma = 1.0;  // CRP concentration for day clusters
  double lambda = 1.0; // CRP concentration for location clusters
  double f = 2.0;      // temporal coherence
  double eta = 9.0;    // Z-U alignment
  double zeta = 0.2;   // Z-V alignment
  double sigma = 1.0;  // aggregate-rainfall standard deviation, shared by all day clusters

  Matrix alpha;  // S x 2 Gamma shape, column z - 1
  Matrix beta;   // S x 2 Gamma rate
  Vector mu;     // mean aggregate rainfall per day cluster, index u - 1

  void validate_user() const {
    if (!(gamma > 0)) throw ValidationError("gamma must be > 0");
    if (!(lambda > 0)) throw ValidationError("lambda must be > 0");
    if (!(f > 0)) throw ValidationError("f must be > 0");
    if (!(eta >= 0)) throw ValidationError("eta must be >= 0");
    if (!(zeta >= 0)) throw ValidationError("zeta must be >= 0");
    if (!(sigma > 0) || !std::isfinite(sigma)) throw ValidationError("sigma must be finite and > 0");
  }

  void validate(Eigen::Index num_locations) const {
    validate_user();
    if (alpha.rows() != num_locations || alpha.cols() != 2 || beta.rows() != num_locations ||
        beta.cols() != 2)
      throw ValidationError("Gamma parameter matrices must be S x 2");
    if (!(alpha.array() > 0).all() || !alpha.allFinite() || !(beta.array() > 0).all() ||
        !beta.allFinite())
      throw ValidationError("Gamma parameters must be finite and > 0");
  }

  double shape(Eigen::Index s, State z) const { return alpha(s, z - 1); }
  double rate(Eigen::Index s, State z) const { return beta(s, z - 1); }

  bool has_mu(int u) const { return u >= 1 && u <= mu.size(); }
};

// Canonical patterns of the day clusters (columns of crp/cdp, one per label)
// and of the location clusters (columns of cts/cds).
struct PatternSet {
  Matrix crp;       // S x K, mean rainfall vector of each day cluster
  StateMatrix cdp;  // S x K, element-wise mode of Z over the cluster's days
  Matrix cts;       // T x L
  StateMatrix cds;  // T x L
  std::vector<int> day_count;   // per day cluster
  std::vector<int> year_count;  // distinct years spanned per day cluster
  std::vector<int> location_count;
  Vector volume;    // per day cluster, sum over locations of crp

  int num_day_clusters() const { return static_cast<int>(cdp.cols()); }
  int num_location_clusters() const { return static_cast<int>(cds.cols()); }
  bool has_cdp(int u) const { return u >= 1 && u <= cdp.cols(); }
  bool has_cds(int v) const { return v >= 1 && v <= cds.cols(); }
  State cdp_state(Eigen::Index s, int u) const { return cdp(s, u - 1); }
  State cds_state(int v, Eigen::Index t) const { return cds(t, v - 1); }
};

// ---------------------------------------------------------------------------
// Log potentials. Indicator potentials contribute c when the states agree
// and nothing otherwise.

inline double log_potential_temporal(State z1, State z2, double f) {
  return z1 == z2 ? std::log(f) : 0.0;
}

// Negative correlations are clamped to zero.
inline double log_potential_spatial(State z1, State z2, double g) {
  return z1 == z2 ? std::max(g, 0.0) : 0.0;
}

inline double log_potential_scale_u(State z, int u, Eigen::Index s, const PatternSet& p, double eta) {
  if (!p.has_cdp(u)) return 0.0;
  return z == p.cdp_state(s, u) ? eta : 0.0;
}

inline double log_potential_scale_v(State z, int v, Eigen::Index t, const PatternSet& p, double zeta) {
  if (!p.has_cds(v)) return 0.0;
  return z == p.cds_state(v, t) ? zeta : 0.0;
}

// Normalized Gamma log density at max(x, kRainEpsilon).
inline double log_gamma_density(double x, double shape, double rate) {
  const double xc = std::max(x, kRainEpsilon);
  const double v = shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(xc) - rate * xc;
  if (!std::isfinite(v))
    throw NumericError("non-finite Gamma log density (shape " + csv::fmt(shape) + ", rate " +
                       csv::fmt(rate) + ", x " + csv::fmt(x) + ")");
  return v;
}

inline double log_potential_aggregate(int u, double y, const Vector& mu, double sigma) {
  if (u < 1 || u > mu.size()) return 0.0;
  const double d = y - mu(u - 1);
  return -d * d / (2.0 * sigma * sigma);
}

// ---------------------------------------------------------------------------
// CRP conditional weights

struct LabelWeight {
  int label;
  double log_weight;
};

// Modified CRP for day t: an existing cluster weighs (days in it) x (years it
// spans), both excluding day t; a fresh label weighs gamma. The fresh label is
// the last entry, numbered one past the largest label in use.
inline std::vector<LabelWeight> crp_log_weights_u(Eigen::Index t, std::span<const int> labels,
                                                  std::span<const int> year_index, double gamma) {
  int k = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (static_cast<Eigen::Index>(i) != t) k = std::max(k, labels[i]);
  std::vector<int> n(static_cast<std::size_t>(k) + 1, 0);
  std::vector<std::vector<int>> years(static_cast<std::size_t>(k) + 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (static_cast<Eigen::Index>(i) == t) continue;
    const auto u = static_cast<std::size_t>(labels[i]);
    ++n[u];
    years[u].push_back(year_index[i]);
  }
  std::vector<LabelWeight> out;
  for (int u = 1; u <= k; ++u) {
    auto& ys = years[static_cast<std::size_t>(u)];
    if (ys.empty()) continue;
    std::sort(ys.begin(), ys.end());
    const auto m = std::unique(ys.begin(), ys.end()) - ys.begin();
    out.push_back({u, std::log(static_cast<double>(n[static_cast<std::size_t>(u)]) * static_cast<double>(m))});
  }
  out.push_back({k + 1, std::log(gamma)});
  return out;
}

// Standard CRP for location s: existing cluster weighs its size (excluding s).
inline std::vector<LabelWeight> crp_log_weights_v(Eigen::Index s, std::span<const int> labels,
                                                  double lambda) {
  int k = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (static_cast<Eigen::Index>(i) != s) k = std::max(k, labels[i]);
  std::vector<int> n(static_cast<std::size_t>(k) + 1, 0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (static_cast<Eigen::Index>(i) != s) ++n[static_cast<std::size_t>(labels[i])];
  std::vector<LabelWeight> out;
  for (int v = 1; v <= k; ++v)
    if (n[static_cast<std::size_t>(v)] > 0)
      out.push_back({v, std::log(static_cast<double>(n[static_cast<std::size_t>(v)]))});
  out.push_back({k + 1, std::log(lambda)});
  return out;
}

// ---------------------------------------------------------------------------
// Pattern extraction

inline PatternSet extract_patterns(const RainfallDataset& d, const LatentState& state) {
  const auto S = d.num_locations();
  const auto T = d.num_days();
  const int K = state.num_day_clusters();
  const int L = state.num_location_clusters();
  PatternSet p;
  p.crp = Matrix::Zero(S, K);
  p.cdp.resize(S, K);
  p.day_count.assign(static_cast<std::size_t>(K), 0);
  p.year_count.assign(static_cast<std::size_t>(K), 0);
  Eigen::MatrixXi high = Eigen::MatrixXi::Zero(S, K);
  std::vector<std::vector<bool>> years(static_cast<std::size_t>(K),
                                       std::vector<bool>(static_cast<std::size_t>(d.num_years()), false));
  for (Eigen::Index t = 0; t < T; ++t) {
    const int u = state.u[static_cast<std::size_t>(t)] - 1;
    p.crp.col(u) += d.rain().col(t);
    for (Eigen::Index s = 0; s < S; ++s) high(s, u) += state.z(s, t) == kHigh;
    ++p.day_count[static_cast<std::size_t>(u)];
    years[static_cast<std::size_t>(u)][static_cast<std::size_t>(d.year_index(t))] = true;
  }
  for (int u = 0; u < K; ++u) {
    const int n = p.day_count[static_cast<std::size_t>(u)];
    if (n > 0) p.crp.col(u) /= n;
    for (Eigen::Index s = 0; s < S; ++s) p.cdp(s, u) = 2 * high(s, u) > n ? kHigh : kLow;
    p.year_count[static_cast<std::size_t>(u)] = static_cast<int>(
        std::count(years[static_cast<std::size_t>(u)].begin(), years[static_cast<std::size_t>(u)].end(), true));
  }
  p.volume = p.crp.colwise().sum().transpose();

  p.cts = Matrix::Zero(T, L);
  p.cds.resize(T, L);
  p.location_count.assign(static_cast<std::size_t>(L), 0);
  Eigen::MatrixXi high_t = Eigen::MatrixXi::Zero(T, L);
  for (Eigen::Index s = 0; s < S; ++s) {
    const int v = state.v[static_cast<std::size_t>(s)] - 1;
    p.cts.col(v) += d.rain().row(s).transpose();
    for (Eigen::Index t = 0; t < T; ++t) high_t(t, v) += state.z(s, t) == kHigh;
    ++p.location_count[static_cast<std::size_t>(v)];
  }
  for (int v = 0; v < L; ++v) {
    const int n = p.location_count[static_cast<std::size_t>(v)];
    if (n > 0) p.cts.col(v) /= n;
    for (Eigen::Index t = 0; t < T; ++t) p.cds(t, v) = 2 * high_t(t, v) > n ? kHigh : kLow;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Joint density

namespace detail {

// Sequential log prior mass of a partition under a CRP whose existing-cluster
// weight is given by `existing(label, i)` and whose fresh weight is `fresh`.
template <typename Existing>
double sequential_crp_log_mass(const Labels& labels, double fresh, Existing existing) {
  double total = 0.0;
  std::vector<bool> seen(static_cast<std::size_t>(max_label(labels)) + 1, false);
  std::vector<int> active;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (i > 0) {
      double norm = fresh;
      for (int a : active) norm += existing(a);
      const double w = seen[static_cast<std::size_t>(l)] ? existing(l) : fresh;
      total += std::log(w) - std::log(norm);
    }
    existing.add(l, i);
    if (!seen[static_cast<std::size_t>(l)]) {
      seen[static_cast<std::size_t>(l)] = true;
      active.push_back(l);
    }
  }
  return total;
}

struct DayCrpCounter {
  const std::vector<int>& year_index;
  std::vector<int> n;
  std::vector<std::vector<bool>> years;
  int num_years;
  DayCrpCounter(const std::vector<int>& yi, int k, int ny)
      : year_index(yi), n(static_cast<std::size_t>(k) + 1, 0),
        years(static_cast<std::size_t>(k) + 1, std::vector<bool>(static_cast<std::size_t>(ny), false)),
        num_years(ny) {}
  double operator()(int u) const {
    const auto& ys = years[static_cast<std::size_t>(u)];
    return static_cast<double>(n[static_cast<std::size_t>(u)]) *
           static_cast<double>(std::count(ys.begin(), ys.end(), true));
  }
  void add(int u, std::size_t i) {
    ++n[static_cast<std::size_t>(u)];
    years[static_cast<std::size_t>(u)][static_cast<std::size_t>(year_index[i])] = true;
  }
};

struct LocationCrpCounter {
  std::vector<int> n;
  explicit LocationCrpCounter(int k) : n(static_cast<std::size_t>(k) + 1, 0) {}
  double operator()(int v) const { return n[static_cast<std::size_t>(v)]; }
  void add(int v, std::size_t) { ++n[static_cast<std::size_t>(v)]; }
};

}  // namespace detail

inline double log_prior_u(const RainfallDataset& d, const Labels& u, double gamma) {
  return detail::sequential_crp_log_mass(
      u, gamma, detail::DayCrpCounter(d.year_indices(), max_label(u), d.num_years()));
}

inline double log_prior_v(const Labels& v, double lambda) {
  return detail::sequential_crp_log_mass(v, lambda, detail::LocationCrpCounter(max_label(v)));
}

// Log of the unnormalized joint density p(Z, U, V, X) with the given patterns
// and parameters held fixed. Every undirected Z-Z edge is counted once.
inline double joint_log_density(const RainfallDataset& d, const SpatialWeights& w,
                                const LatentState& state, const ModelParams& params,
                                const PatternSet& patterns) {
  const auto S = d.num_locations();
  const auto T = d.num_days();
  double total = log_prior_u(d, state.u, params.gamma) + log_prior_v(state.v, params.lambda);
  for (Eigen::Index t = 0; t < T; ++t) {
    const int u = state.u[static_cast<std::size_t>(t)];
    for (Eigen::Index s = 0; s < S; ++s) {
      const State z = state.z(s, t);
      if (t + 1 < T) total += log_potential_temporal(z, state.z(s, t + 1), params.f);
      const auto& nb = d.neighbors(s);
      for (std::size_t i = 0; i < nb.size(); ++i)
        if (nb[i] > s)
          total += log_potential_spatial(z, state.z(nb[i], t), w.g[static_cast<std::size_t>(s)][i]);
      total += log_potential_scale_v(z, state.v[static_cast<std::size_t>(s)], t, patterns, params.zeta);
      total += log_potential_scale_u(z, u, s, patterns, params.eta);
      total += log_gamma_density(d.rain(s, t), params.shape(s, z), params.rate(s, z));
    }
    total += log_potential_aggregate(u, d.aggregate(t), params.mu, params.sigma);
  }
  if (!std::isfinite(total)) throw NumericError("joint log density is not finite");
  return total;
}

// ---------------------------------------------------------------------------
// CSV export / import

inline void write_patterns(const PatternSet& p, const std::filesystem::path& dir) {
  {
    auto out = csv::open_for_write(dir / "patterns_spatial.csv");
    out << "cluster_id,loc_id,crp_value,cdp_state\n";
    for (Eigen::Index u = 0; u < p.cdp.cols(); ++u)
      for (Eigen::Index s = 0; s < p.cdp.rows(); ++s)
        out << u + 1 << ',' << s << ',' << csv::fmt(p.crp(s, u)) << ',' << static_cast<int>(p.cdp(s, u)) << '\n';
  }
  {
    auto out = csv::open_for_write(dir / "patterns_temporal.csv");
    out << "cluster_id,day_index,cts_value,cds_state\n";
    for (Eigen::Index v = 0; v < p.cds.cols(); ++v)
      for (Eigen::Index t = 0; t < p.cds.rows(); ++t)
        out << v + 1 << ',' << t << ',' << csv::fmt(p.cts(t, v)) << ',' << static_cast<int>(p.cds(t, v)) << '\n';
  }
  auto out = csv::open_for_write(dir / "patterns_summary.csv");
  out << "cluster_id,n_days,n_years,aggregate_mm\n";
  for (Eigen::Index u = 0; u < p.cdp.cols(); ++u)
    out << u + 1 << ',' << p.day_count[static_cast<std::size_t>(u)] << ','
        << p.year_count[static_cast<std::size_t>(u)] << ',' << csv::fmt(p.volume(u)) << '\n';
}

namespace detail {

inline void read_cluster_grid(const std::filesystem::path& file, std::vector<std::string> header,
                       Eigen::Index length, Matrix& values, StateMatrix& states) {
  csv::Reader r(file, std::move(header));
  std::vector<std::string> f;
  std::vector<std::tuple<int, int, double, int>> rows;
  int k = 0;
  while (r.next(f)) {
    const int c = r.get<int>(f, 0), i = r.get<int>(f, 1), st = r.get<int>(f, 3);
    if (c < 1) r.fail("cluster_id must be >= 1");
    if (i < 0 || i >= length) r.fail("index out of range");
    if (st != kHigh && st != kLow) r.fail("state must be 1 or 2");
    rows.emplace_back(c, i, r.get<double>(f, 2), st);
    k = std::max(k, c);
  }
  if (static_cast<long long>(rows.size()) != static_cast<long long>(k) * length)
    throw ValidationError(file.string() + ": incomplete pattern grid");
  values = Matrix::Zero(length, k);
  states = StateMatrix::Constant(length, k, 0);
  for (const auto& [c, i, x, st] : rows) {
    if (states(i, c - 1) != 0) throw ValidationError(file.string() + ": duplicate pattern entry");
    values(i, c - 1) = x;
    states(i, c - 1) = static_cast<State>(st);
  }
}

}  // namespace detail

inline PatternSet read_patterns(const std::filesystem::path& dir, Eigen::Index num_locations,
                                Eigen::Index num_days) {
  PatternSet p;
  detail::read_cluster_grid(dir / "patterns_spatial.csv",
                                         {"cluster_id", "loc_id", "crp_value", "cdp_state"},
                                         num_locations, p.crp, p.cdp);
  detail::read_cluster_grid(dir / "patterns_temporal.csv",
                                         {"cluster_id", "day_index", "cts_value", "cds_state"},
                                         num_days, p.cts, p.cds);
  csv::Reader r(dir / "patterns_summary.csv", {"cluster_id", "n_days", "n_years", "aggregate_mm"});
  std::vector<std::string> f;
  const auto K = p.cdp.cols();
  p.day_count.assign(static_cast<std::size_t>(K), 0);
  p.year_count.assign(static_cast<std::size_t>(K), 0);
  p.volume = Vector::Zero(K);
  while (r.next(f)) {
    const int c = r.get<int>(f, 0);
    if (c < 1 || c > K) r.fail("cluster_id out of range");
    p.day_count[static_cast<std::size_t>(c - 1)] = r.get<int>(f, 1);
    p.year_count[static_cast<std::size_t>(c - 1)] = r.get<int>(f, 2);
    p.volume(c - 1) = r.get<double>(f, 3);
  }
  p.location_count.assign(static_cast<std::size_t>(p.cds.cols()), 0);
  return p;
}

}  // namespace rainmrf
