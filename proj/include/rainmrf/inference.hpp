#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "rainmrf/baselines.hpp"
#include "rainmrf/common.hpp"
#include "rainmrf/csv.hpp"
#include "rainmrf/data.hpp"
#include "rainmrf/latent_state.hpp"
#include "rainmrf/model.hpp"

namespace rainmrf {

using Rng = std::mt19937_64;

enum class Schedule { kSequential, kCheckerboard };

struct SamplerConfig {
  int burnin = 200;
  int samples = 300;
  std::uint64_t seed = 1;
  Schedule schedule = Schedule::kSequential;
  int threads = 1;

  void validate() const {
    if (burnin < 0) throw ValidationError("burn-in sweeps must be >= 0");
    if (samples < 1) throw ValidationError("retained sweeps must be >= 1");
    if (threads < 1) throw ValidationError("thread count must be >= 1");
  }
};

struct PosteriorSummary {
  StateMatrix z_mode;
  Labels u_mode;
  Labels v_mode;
  int retained = 0;
  std::vector<double> trace;  // joint log density after every sweep

  LatentState mode_state() const { return {z_mode, u_mode, v_mode}; }
};

// ---------------------------------------------------------------------------
// Sampling helpers

// Draws an index with probability proportional to exp(log_weights[i]).
inline std::size_t draw_log_categorical(std::span<const double> log_weights, Rng& rng) {
  const double top = *std::max_element(log_weights.begin(), log_weights.end());
  double total = 0.0;
  for (double l : log_weights) total += std::exp(l - top);
  double r = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    r -= std::exp(log_weights[i] - top);
    if (r < 0.0) return i;
  }
  return log_weights.size() - 1;
}

inline State draw_state(const std::array<double, 2>& log_weights, Rng& rng) {
  const double p_high = 1.0 / (1.0 + std::exp(log_weights[1] - log_weights[0]));
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p_high ? kHigh : kLow;
}

// ---------------------------------------------------------------------------
// Single-site conditionals

// Unnormalized log conditional of Z(s,t) = 1 and Z(s,t) = 2.
inline std::array<double, 2> z_conditional(Eigen::Index s, Eigen::Index t, const LatentState& state,
                                           const ModelParams& params, const SpatialWeights& w,
                                           const PatternSet& patterns, const RainfallDataset& d) {
  std::array<double, 2> out{};
  for (State z : {kHigh, kLow}) {
    double l = 0.0;
    if (t > 0) l += log_potential_temporal(z, state.z(s, t - 1), params.f);
    if (t + 1 < d.num_days()) l += log_potential_temporal(z, state.z(s, t + 1), params.f);
    const auto& nb = d.neighbors(s);
    for (std::size_t i = 0; i < nb.size(); ++i)
      l += log_potential_spatial(z, state.z(nb[i], t), w.g[static_cast<std::size_t>(s)][i]);
    l += log_potential_scale_v(z, state.v[static_cast<std::size_t>(s)], t, patterns, params.zeta);
    l += log_potential_scale_u(z, state.u[static_cast<std::size_t>(t)], s, patterns, params.eta);
    l += log_gamma_density(d.rain(s, t), params.shape(s, z), params.rate(s, z));
    out[z - 1] = l;
  }
  return out;
}

inline State sample_z_cell(Eigen::Index s, Eigen::Index t, const LatentState& state,
                           const ModelParams& params, const SpatialWeights& w,
                           const PatternSet& patterns, const RainfallDataset& d, Rng& rng) {
  return draw_state(z_conditional(s, t, state, params, w, patterns, d), rng);
}

// Unnormalized log conditional of U(t) over every live label plus a fresh one.
inline std::vector<LabelWeight> u_conditional(Eigen::Index t, const LatentState& state,
                                              const ModelParams& params, const PatternSet& patterns,
                                              const RainfallDataset& d) {
  auto out = crp_log_weights_u(t, state.u, d.year_indices(), params.gamma);
  for (auto& [u, lw] : out) {
    if (patterns.has_cdp(u)) {
      const auto matches = (state.z.col(t).array() == patterns.cdp.col(u - 1).array()).count();
      lw += params.eta * static_cast<double>(matches);
    }
    lw += log_potential_aggregate(u, d.aggregate(t), params.mu, params.sigma);
  }
  return out;
}

inline int sample_u_day(Eigen::Index t, const LatentState& state, const ModelParams& params,
                        const PatternSet& patterns, const RainfallDataset& d, Rng& rng) {
  const auto weights = u_conditional(t, state, params, patterns, d);
  std::vector<double> lw;
  for (const auto& w : weights) lw.push_back(w.log_weight);
  return weights[draw_log_categorical(lw, rng)].label;
}

inline std::vector<LabelWeight> v_conditional(Eigen::Index s, const LatentState& state,
                                              const ModelParams& params, const PatternSet& patterns,
                                              const RainfallDataset& /*d*/) {
  auto out = crp_log_weights_v(s, state.v, params.lambda);
  for (auto& [v, lw] : out) {
    if (!patterns.has_cds(v)) continue;
    const auto matches =
        (state.z.row(s).transpose().array() == patterns.cds.col(v - 1).array()).count();
    lw += params.zeta * static_cast<double>(matches);
  }
  return out;
}

inline int sample_v_location(Eigen::Index s, const LatentState& state, const ModelParams& params,
                             const PatternSet& patterns, const RainfallDataset& d, Rng& rng) {
  const auto weights = v_conditional(s, state, params, patterns, d);
  std::vector<double> lw;
  for (const auto& w : weights) lw.push_back(w.log_weight);
  return weights[draw_log_categorical(lw, rng)].label;
}

// ---------------------------------------------------------------------------
// Parameter estimation

struct MlEstimates {
  Matrix alpha;  // S x 2
  Matrix beta;   // S x 2
  Vector mu;     // per day cluster
  Eigen::MatrixXi count;  // S x 2, observations behind each Gamma estimate
};

// Moment-matched Gamma parameters per (location, state) and mean aggregate
// rainfall per day cluster. Rainfall is clamped at kRainEpsilon, the sample
// variance (denominator n - 1, zero for one observation) floored at 0.01 and
// the mean at kRainEpsilon.
inline MlEstimates update_params_ml(const RainfallDataset& d, const LatentState& state) {
  const auto S = d.num_locations();
  const auto T = d.num_days();
  MlEstimates e;
  e.alpha.resize(S, 2);
  e.beta.resize(S, 2);
  e.count = Eigen::MatrixXi::Zero(S, 2);
  Matrix sum = Matrix::Zero(S, 2), sq = Matrix::Zero(S, 2);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index s = 0; s < S; ++s) {
      const int k = state.z(s, t) - 1;
      const double x = std::max(d.rain(s, t), kRainEpsilon);
      sum(s, k) += x;
      sq(s, k) += x * x;
      ++e.count(s, k);
    }
  for (Eigen::Index s = 0; s < S; ++s)
    for (int k = 0; k < 2; ++k) {
      const int n = e.count(s, k);
      double m = n > 0 ? sum(s, k) / n : 0.0;
      double v = n > 1 ? (sq(s, k) - n * m * m) / (n - 1) : 0.0;
      m = std::max(m, kRainEpsilon);
      v = std::max(v, 0.01);
      e.alpha(s, k) = m * m / v;
      e.beta(s, k) = m / v;
    }

  const int K = state.num_day_clusters();
  e.mu = Vector::Zero(K);
  std::vector<int> n(static_cast<std::size_t>(K), 0);
  for (Eigen::Index t = 0; t < T; ++t) {
    const int u = state.u[static_cast<std::size_t>(t)] - 1;
    e.mu(u) += d.aggregate(t);
    ++n[static_cast<std::size_t>(u)];
  }
  for (int u = 0; u < K; ++u)
    if (n[static_cast<std::size_t>(u)] > 0) e.mu(u) /= n[static_cast<std::size_t>(u)];
  return e;
}

// Applies fresh estimates; a (location, state) pair without observations
// keeps its previous Gamma parameters when it has them.
inline void apply_estimates(ModelParams& params, const MlEstimates& e) {
  const bool have_previous = params.alpha.rows() == e.alpha.rows() && params.alpha.cols() == 2 &&
                             params.beta.rows() == e.beta.rows() && params.beta.cols() == 2;
  if (!have_previous) {
    params.alpha = e.alpha;
    params.beta = e.beta;
  } else {
    for (Eigen::Index s = 0; s < e.alpha.rows(); ++s)
      for (int k = 0; k < 2; ++k)
        if (e.count(s, k) > 0) {
          params.alpha(s, k) = e.alpha(s, k);
          params.beta(s, k) = e.beta(s, k);
        }
  }
  params.mu = e.mu;
}

// Population standard deviation of Y(t), a scale-aware default for sigma.
inline double default_sigma(const RainfallDataset& d) {
  const auto& y = d.aggregate();
  const double m = y.mean();
  const double sd = std::sqrt((y.array() - m).square().mean());
  return sd > 0.0 ? sd : 1.0;
}

// ---------------------------------------------------------------------------
// Initialization

// Days grouped by k-means on their state vectors into ceil(sqrt(T)) clusters.
inline Labels kmeans_day_labels(const StateMatrix& z, std::uint64_t seed) {
  const int k = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(z.cols()))));
  const Matrix points = (z.array() == kHigh).cast<double>().matrix().transpose();
  return kmeans(points, std::min<int>(k, static_cast<int>(z.cols())), seed, 1).labels;
}

// Z from the pooled log-rainfall split, U from k-means on those states, V all ones.
inline LatentState initial_state(const RainfallDataset& d, std::uint64_t seed) {
  LatentState s{discretize_by_pooled_split(d), {}, Labels(static_cast<std::size_t>(d.num_locations()), 1)};
  s.u = kmeans_day_labels(s.z, seed);
  return s;
}

// Patterns and parameters held fixed while refitting new data.
struct FrozenModel {
  PatternSet patterns;
  ModelParams params;
  Labels v;  // location clusters of the training run
};

// ---------------------------------------------------------------------------
// The sampler

// Owns the chain state for one run. In frozen mode, patterns and parameters
// never change, V is held at the frozen labels and days choose among the
// frozen patterns plus one overflow label.
class GibbsSampler {
 public:
  GibbsSampler(const RainfallDataset& d, const SpatialWeights& w, ModelParams params,
               SamplerConfig config, LatentState init)
      : d_(d), w_(w), params_(std::move(params)), config_(config), state_(std::move(init)),
        rng_(config.seed) {
    config_.validate();
    params_.validate_user();
    state_.validate(d_.num_locations(), d_.num_days());
    precompute();
    patterns_ = extract_patterns(d_, state_);
    apply_estimates(params_, update_params_ml(d_, state_));
    rebuild_counts();
    stable_u_.resize(static_cast<std::size_t>(state_.num_day_clusters()) + 1);
    std::iota(stable_u_.begin(), stable_u_.end(), 0);
    next_stable_u_ = static_cast<int>(stable_u_.size());
    stable_v_.resize(static_cast<std::size_t>(state_.num_location_clusters()) + 1);
    std::iota(stable_v_.begin(), stable_v_.end(), 0);
    next_stable_v_ = static_cast<int>(stable_v_.size());
  }

  GibbsSampler(const RainfallDataset& d, const SpatialWeights& w, const FrozenModel& frozen,
               SamplerConfig config)
      : d_(d), w_(w), params_(frozen.params), config_(config), rng_(config.seed), frozen_(true) {
    config_.validate();
    if (static_cast<Eigen::Index>(frozen.v.size()) != d_.num_locations() ||
        frozen.patterns.cdp.rows() != d_.num_locations() ||
        frozen.params.alpha.rows() != d_.num_locations())
      throw ValidationError("frozen model and new data disagree on the number of locations");
    if (frozen.patterns.num_day_clusters() < 1) throw ValidationError("frozen model has no patterns");
    params_.validate(d_.num_locations());
    patterns_ = frozen.patterns;
    // Location-cluster series are tied to the training days; only usable when
    // the new record has the same length.
    if (patterns_.cds.rows() != d_.num_days()) {
      params_.zeta = 0.0;
      patterns_.cts.resize(d_.num_days(), 0);
      patterns_.cds.resize(d_.num_days(), 0);
    }
    const int K = patterns_.num_day_clusters();
    frozen_prior_.resize(static_cast<std::size_t>(K) + 2);
    for (int u = 1; u <= K; ++u) {
      const double nm = static_cast<double>(patterns_.day_count[static_cast<std::size_t>(u - 1)]) *
                        patterns_.year_count[static_cast<std::size_t>(u - 1)];
      frozen_prior_[static_cast<std::size_t>(u)] = std::log(std::max(nm, 1.0));
    }
    frozen_prior_[static_cast<std::size_t>(K) + 1] = std::log(params_.gamma);

    precompute();
    state_.z = discretize_by_pooled_split(d_);
    state_.v = frozen.v;
    state_.u.resize(static_cast<std::size_t>(d_.num_days()));
    for (Eigen::Index t = 0; t < d_.num_days(); ++t) {
      const auto lw = frozen_u_weights(t);
      state_.u[static_cast<std::size_t>(t)] =
          1 + static_cast<int>(std::max_element(lw.begin(), lw.end() - 1) - lw.begin());
    }
    stable_u_.resize(static_cast<std::size_t>(K) + 2);
    std::iota(stable_u_.begin(), stable_u_.end(), 0);
    stable_v_.resize(static_cast<std::size_t>(state_.num_location_clusters()) + 1);
    std::iota(stable_v_.begin(), stable_v_.end(), 0);
  }

  const LatentState& state() const { return state_; }
  const PatternSet& patterns() const { return patterns_; }
  const ModelParams& params() const { return params_; }

  // One sweep: every Z cell, every U, every V, then pattern and parameter refresh.
  void sweep() {
    if (config_.schedule == Schedule::kCheckerboard)
      sweep_z_checkerboard();
    else
      sweep_z_sequential();
    if (frozen_) {
      sweep_u_frozen();
      return;
    }
    sweep_u();
    sweep_u_block();
    compact_u();
    sweep_v();
    apply_estimates(params_, update_params_ml(d_, state_));
    patterns_ = extract_patterns(d_, state_);
    refresh_gamma_cache();
  }

  double log_density() const { return joint_log_density(d_, w_, state_, params_, patterns_); }

  // The cached single-site conditional the Z sweeps draw from.
  std::array<double, 2> cell_conditional(Eigen::Index s, Eigen::Index t) {
    if (log_norm_.rows() != d_.num_locations()) refresh_gamma_cache();
    return z_weights(s, t);
  }

  PosteriorSummary run() {
    PosteriorSummary out;
    const auto S = d_.num_locations(), T = d_.num_days();
    Eigen::MatrixXi high = Eigen::MatrixXi::Zero(S, T);
    std::vector<std::vector<int>> u_votes(static_cast<std::size_t>(T));
    std::vector<std::vector<int>> v_votes(static_cast<std::size_t>(S));
    auto vote = [](std::vector<int>& votes, int id) {
      if (static_cast<int>(votes.size()) <= id) votes.resize(static_cast<std::size_t>(id) + 1, 0);
      ++votes[static_cast<std::size_t>(id)];
    };
    for (int i = 0; i < config_.burnin + config_.samples; ++i) {
      sweep();
      const double lp = log_density();
      if (!std::isfinite(lp))
        throw NumericError("non-finite joint log density at sweep " + std::to_string(i));
      out.trace.push_back(lp);
      if (i < config_.burnin) continue;
      high.array() += (state_.z.array() == kHigh).cast<int>();
      for (Eigen::Index t = 0; t < T; ++t)
        vote(u_votes[static_cast<std::size_t>(t)],
             stable_u_[static_cast<std::size_t>(state_.u[static_cast<std::size_t>(t)])]);
      for (Eigen::Index s = 0; s < S; ++s)
        vote(v_votes[static_cast<std::size_t>(s)],
             stable_v_[static_cast<std::size_t>(state_.v[static_cast<std::size_t>(s)])]);
    }
    out.retained = config_.samples;
    out.z_mode.resize(S, T);
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index s = 0; s < S; ++s)
        out.z_mode(s, t) = 2 * high(s, t) > out.retained ? kHigh : kLow;
    auto argmax = [](const std::vector<int>& votes) {
      return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    };
    for (const auto& votes : u_votes) out.u_mode.push_back(argmax(votes));
    for (const auto& votes : v_votes) out.v_mode.push_back(argmax(votes));
    if (frozen_) {
      // Stable ids equal frozen labels; keep them so they index the frozen patterns.
    } else {
      compact_labels(out.u_mode);
      compact_labels(out.v_mode);
    }
    return out;
  }

 private:
  void precompute() {
    const auto S = d_.num_locations(), T = d_.num_days();
    log_rain_.resize(S, T);
    clamped_rain_.resize(S, T);
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index s = 0; s < S; ++s) {
        clamped_rain_(s, t) = std::max(d_.rain(s, t), kRainEpsilon);
        log_rain_(s, t) = std::log(clamped_rain_(s, t));
      }
    positive_g_.resize(w_.g.size());
    for (std::size_t s = 0; s < w_.g.size(); ++s) {
      positive_g_[s].resize(w_.g[s].size());
      for (std::size_t i = 0; i < w_.g[s].size(); ++i) positive_g_[s][i] = std::max(w_.g[s][i], 0.0);
    }
    // Checkerboard colors: lattice parity of the location, times day parity.
    for (auto& group : parity_groups_) group.clear();
    for (Eigen::Index s = 0; s < S; ++s) {
      const auto& c = d_.coords()[static_cast<std::size_t>(s)];
      parity_groups_[static_cast<std::size_t>((c.x & 1) * 2 + (c.y & 1))].push_back(static_cast<int>(s));
    }
  }

  void refresh_gamma_cache() {
    log_norm_.resize(d_.num_locations(), 2);
    for (Eigen::Index s = 0; s < d_.num_locations(); ++s)
      for (int k = 0; k < 2; ++k) {
        const double a = params_.alpha(s, k), b = params_.beta(s, k);
        log_norm_(s, k) = a * std::log(b) - std::lgamma(a);
        if (!std::isfinite(log_norm_(s, k)))
          throw NumericError("degenerate Gamma parameters at location " + std::to_string(s));
      }
  }

  // Same terms as z_conditional, using cached quantities.
  std::array<double, 2> z_weights(Eigen::Index s, Eigen::Index t) const {
    const auto T = d_.num_days();
    const double log_f = std::log(params_.f);
    const auto& nb = d_.neighbors(s);
    const auto& g = positive_g_[static_cast<std::size_t>(s)];
    const int u = state_.u[static_cast<std::size_t>(t)];
    const int v = state_.v[static_cast<std::size_t>(s)];
    std::array<double, 2> out{};
    for (int k = 0; k < 2; ++k) {
      const State z = static_cast<State>(k + 1);
      double l = 0.0;
      if (t > 0 && state_.z(s, t - 1) == z) l += log_f;
      if (t + 1 < T && state_.z(s, t + 1) == z) l += log_f;
      for (std::size_t i = 0; i < nb.size(); ++i)
        if (state_.z(nb[i], t) == z) l += g[i];
      if (patterns_.has_cds(v) && patterns_.cds_state(v, t) == z) l += params_.zeta;
      if (patterns_.has_cdp(u) && patterns_.cdp_state(s, u) == z) l += params_.eta;
      l += log_norm_(s, k) + (params_.alpha(s, k) - 1.0) * log_rain_(s, t) -
           params_.beta(s, k) * clamped_rain_(s, t);
      out[static_cast<std::size_t>(k)] = l;
    }
    return out;
  }

  void sweep_z_sequential() {
    if (log_norm_.rows() != d_.num_locations()) refresh_gamma_cache();
    for (Eigen::Index t = 0; t < d_.num_days(); ++t)
      for (Eigen::Index s = 0; s < d_.num_locations(); ++s)
        state_.z(s, t) = draw_state(z_weights(s, t), rng_);
  }

  // Eight colour classes; cells of one class share no temporal, spatial or
  // pattern edge, so each class is updated concurrently. Every day of a class
  // draws from its own stream, so results do not depend on the thread count.
  void sweep_z_checkerboard() {
    if (log_norm_.rows() != d_.num_locations()) refresh_gamma_cache();
    const auto T = d_.num_days();
    const std::uint64_t sweep_key = rng_();
    for (int day_parity = 0; day_parity < 2; ++day_parity)
      for (std::size_t g = 0; g < parity_groups_.size(); ++g) {
        std::vector<Eigen::Index> days;
        for (Eigen::Index t = day_parity; t < T; t += 2) days.push_back(t);
        auto work = [&](std::size_t begin, std::size_t end) {
          for (std::size_t i = begin; i < end; ++i) {
            const Eigen::Index t = days[i];
            Rng local(splitmix(sweep_key ^ splitmix((static_cast<std::uint64_t>(t) << 4) |
                                                    (g << 1) | static_cast<std::uint64_t>(day_parity))));
            for (int s : parity_groups_[g]) state_.z(s, t) = draw_state(z_weights(s, t), local);
          }
        };
        const std::size_t n = days.size();
        const auto threads = std::min<std::size_t>(static_cast<std::size_t>(config_.threads), std::max<std::size_t>(n, 1));
        if (threads <= 1) {
          work(0, n);
          continue;
        }
        std::vector<std::jthread> pool;
        for (std::size_t k = 0; k < threads; ++k)
          pool.emplace_back(work, k * n / threads, (k + 1) * n / threads);
      }
  }

  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  void rebuild_counts() {
    const int K = state_.num_day_clusters();
    u_days_.assign(static_cast<std::size_t>(K) + 1, 0);
    u_year_days_.assign(static_cast<std::size_t>(K) + 1,
                        std::vector<int>(static_cast<std::size_t>(d_.num_years()), 0));
    u_years_.assign(static_cast<std::size_t>(K) + 1, 0);
    for (Eigen::Index t = 0; t < d_.num_days(); ++t) add_day(t, state_.u[static_cast<std::size_t>(t)]);
    const int L = state_.num_location_clusters();
    v_size_.assign(static_cast<std::size_t>(L) + 1, 0);
    for (int v : state_.v) ++v_size_[static_cast<std::size_t>(v)];
  }

  void add_day(Eigen::Index t, int u) {
    const auto uu = static_cast<std::size_t>(u);
    ++u_days_[uu];
    if (u_year_days_[uu][static_cast<std::size_t>(d_.year_index(t))]++ == 0) ++u_years_[uu];
  }

  void remove_day(Eigen::Index t, int u) {
    const auto uu = static_cast<std::size_t>(u);
    --u_days_[uu];
    if (--u_year_days_[uu][static_cast<std::size_t>(d_.year_index(t))] == 0) --u_years_[uu];
  }

  void sweep_u() {
    const auto T = d_.num_days();
    std::vector<double> lw;
    std::vector<int> labels;
    for (Eigen::Index t = 0; t < T; ++t) {
      remove_day(t, state_.u[static_cast<std::size_t>(t)]);
      lw.clear();
      labels.clear();
      const int table = static_cast<int>(u_days_.size()) - 1;
      for (int u = 1; u <= table; ++u) {
        const auto uu = static_cast<std::size_t>(u);
        if (u_days_[uu] == 0) continue;
        double l = std::log(static_cast<double>(u_days_[uu]) * u_years_[uu]);
        if (patterns_.has_cdp(u))
          l += params_.eta *
               static_cast<double>((state_.z.col(t).array() == patterns_.cdp.col(u - 1).array()).count());
        l += log_potential_aggregate(u, d_.aggregate(t), params_.mu, params_.sigma);
        lw.push_back(l);
        labels.push_back(u);
      }
      lw.push_back(std::log(params_.gamma));
      labels.push_back(table + 1);
      int u = labels[draw_log_categorical(lw, rng_)];
      if (u == table + 1) {
        u_days_.push_back(0);
        u_years_.push_back(0);
        u_year_days_.emplace_back(static_cast<std::size_t>(d_.num_years()), 0);
        stable_u_.push_back(next_stable_u_++);
      }
      state_.u[static_cast<std::size_t>(t)] = u;
      add_day(t, u);
    }
  }

  // Patterns are indexed by the labels of the previous sweep, so this runs
  // only after every day move of the current one.
  void compact_u() {
    const auto old_of_new = compact_labels(state_.u);
    std::vector<int> stable(old_of_new.size());
    for (std::size_t i = 0; i < old_of_new.size(); ++i)
      stable[i] = stable_u_[static_cast<std::size_t>(old_of_new[i])];
    stable_u_ = std::move(stable);
    rebuild_counts();
  }

  // Within-day spatial term, each edge once.
  double day_spatial(const StateMatrix& z) const {
    double total = 0.0;
    for (Eigen::Index s = 0; s < d_.num_locations(); ++s) {
      const auto& nb = d_.neighbors(s);
      const auto& g = positive_g_[static_cast<std::size_t>(s)];
      for (std::size_t i = 0; i < nb.size(); ++i)
        if (nb[i] > s && z(s, 0) == z(nb[i], 0)) total += g[i];
    }
    return total;
  }

  // Joint Metropolis-Hastings move of U(t) and Z(., t). The label is proposed
  // from its conditional with Z(., t) summed out under independent cells, then
  // Z(., t) is drawn cell by cell given that label. The proposal matches the
  // target except for the within-day spatial couplings, which leaves those in
  // the acceptance ratio. Days alone in their cluster are left as they are.
  void sweep_u_block() {
    const auto S = d_.num_locations(), T = d_.num_days();
    const double log_f = std::log(params_.f);
    Matrix base(S, 2);
    Matrix lse(S, 3);  // no bonus, bonus on high, bonus on low
    StateMatrix proposal(S, 1), current(S, 1);
    std::vector<double> lw;
    std::vector<int> labels;
    auto logadd = [](double a, double b) {
      const double m = std::max(a, b);
      return m + std::log(std::exp(a - m) + std::exp(b - m));
    };
    for (Eigen::Index t = 0; t < T; ++t) {
      const int u0 = state_.u[static_cast<std::size_t>(t)];
      if (u_days_[static_cast<std::size_t>(u0)] < 2) continue;
      remove_day(t, u0);
      for (Eigen::Index s = 0; s < S; ++s) {
        const int v = state_.v[static_cast<std::size_t>(s)];
        for (int k = 0; k < 2; ++k) {
          const State z = static_cast<State>(k + 1);
          double l = log_norm_(s, k) + (params_.alpha(s, k) - 1.0) * log_rain_(s, t) -
                     params_.beta(s, k) * clamped_rain_(s, t);
          if (t > 0 && state_.z(s, t - 1) == z) l += log_f;
          if (t + 1 < T && state_.z(s, t + 1) == z) l += log_f;
          if (patterns_.has_cds(v) && patterns_.cds_state(v, t) == z) l += params_.zeta;
          base(s, k) = l;
        }
        lse(s, 0) = logadd(base(s, 0), base(s, 1));
        lse(s, 1) = logadd(base(s, 0) + params_.eta, base(s, 1));
        lse(s, 2) = logadd(base(s, 0), base(s, 1) + params_.eta);
      }
      lw.clear();
      labels.clear();
      for (int u = 1; u < static_cast<int>(u_days_.size()); ++u) {
        const auto uu = static_cast<std::size_t>(u);
        if (u_days_[uu] == 0) continue;
        double l = std::log(static_cast<double>(u_days_[uu]) * u_years_[uu]) +
                   log_potential_aggregate(u, d_.aggregate(t), params_.mu, params_.sigma);
        if (patterns_.has_cdp(u))
          for (Eigen::Index s = 0; s < S; ++s) l += lse(s, patterns_.cdp_state(s, u));
        else
          l += lse.col(0).sum();
        lw.push_back(l);
        labels.push_back(u);
      }
      const int u1 = labels[draw_log_categorical(lw, rng_)];
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (Eigen::Index s = 0; s < S; ++s) {
        double l1 = base(s, 0), l2 = base(s, 1);
        if (patterns_.has_cdp(u1)) (patterns_.cdp_state(s, u1) == kHigh ? l1 : l2) += params_.eta;
        proposal(s, 0) = unit(rng_) * (1.0 + std::exp(l2 - l1)) < 1.0 ? kHigh : kLow;
      }
      current = state_.z.col(t);
      const double log_accept = day_spatial(proposal) - day_spatial(current);
      if (log_accept >= 0.0 || unit(rng_) < std::exp(log_accept)) {
        state_.z.col(t) = proposal.col(0);
        state_.u[static_cast<std::size_t>(t)] = u1;
        add_day(t, u1);
      } else {
        add_day(t, u0);
      }
    }
  }

  void sweep_v() {
    const auto S = d_.num_locations();
    std::vector<double> lw;
    std::vector<int> labels;
    for (Eigen::Index s = 0; s < S; ++s) {
      --v_size_[static_cast<std::size_t>(state_.v[static_cast<std::size_t>(s)])];
      lw.clear();
      labels.clear();
      const int table = static_cast<int>(v_size_.size()) - 1;
      for (int v = 1; v <= table; ++v) {
        const int n = v_size_[static_cast<std::size_t>(v)];
        if (n == 0) continue;
        double l = std::log(static_cast<double>(n));
        if (patterns_.has_cds(v))
          l += params_.zeta * static_cast<double>(
                                  (state_.z.row(s).transpose().array() == patterns_.cds.col(v - 1).array()).count());
        lw.push_back(l);
        labels.push_back(v);
      }
      lw.push_back(std::log(params_.lambda));
      labels.push_back(table + 1);
      const int v = labels[draw_log_categorical(lw, rng_)];
      if (v == table + 1) {
        v_size_.push_back(0);
        stable_v_.push_back(next_stable_v_++);
      }
      state_.v[static_cast<std::size_t>(s)] = v;
      ++v_size_[static_cast<std::size_t>(v)];
    }
    const auto old_of_new = compact_labels(state_.v);
    std::vector<int> stable(old_of_new.size());
    for (std::size_t i = 0; i < old_of_new.size(); ++i)
      stable[i] = stable_v_[static_cast<std::size_t>(old_of_new[i])];
    stable_v_ = std::move(stable);
    v_size_.assign(stable_v_.size(), 0);
    for (int v : state_.v) ++v_size_[static_cast<std::size_t>(v)];
  }

  // Frozen prior plus alignment and aggregate terms; the last entry is the
  // overflow label, which carries neither.
  std::vector<double> frozen_u_weights(Eigen::Index t) const {
    const int K = patterns_.num_day_clusters();
    std::vector<double> lw(static_cast<std::size_t>(K) + 1);
    for (int u = 1; u <= K; ++u)
      lw[static_cast<std::size_t>(u - 1)] =
          frozen_prior_[static_cast<std::size_t>(u)] +
          params_.eta * static_cast<double>((state_.z.col(t).array() == patterns_.cdp.col(u - 1).array()).count()) +
          log_potential_aggregate(u, d_.aggregate(t), params_.mu, params_.sigma);
    lw[static_cast<std::size_t>(K)] = frozen_prior_[static_cast<std::size_t>(K) + 1];
    return lw;
  }

  void sweep_u_frozen() {
    for (Eigen::Index t = 0; t < d_.num_days(); ++t) {
      const auto lw = frozen_u_weights(t);
      state_.u[static_cast<std::size_t>(t)] = 1 + static_cast<int>(draw_log_categorical(lw, rng_));
    }
  }

  const RainfallDataset& d_;
  const SpatialWeights& w_;
  ModelParams params_;
  SamplerConfig config_;
  LatentState state_;
  PatternSet patterns_;
  Rng rng_;
  bool frozen_ = false;

  Matrix log_rain_, clamped_rain_, log_norm_;
  std::vector<std::vector<double>> positive_g_;
  std::array<std::vector<int>, 4> parity_groups_;

  std::vector<int> u_days_, u_years_;
  std::vector<std::vector<int>> u_year_days_;
  std::vector<int> v_size_;
  std::vector<int> stable_u_, stable_v_;
  int next_stable_u_ = 0, next_stable_v_ = 0;
  std::vector<double> frozen_prior_;
};

struct GibbsResult {
  PosteriorSummary summary;
  PatternSet patterns;  // extracted from the posterior mode
  ModelParams params;   // re-estimated on the posterior mode
};

inline GibbsResult run_gibbs(const RainfallDataset& d, const SpatialWeights& w,
                             const ModelParams& params, const SamplerConfig& config) {
  GibbsSampler sampler(d, w, params, config, initial_state(d, config.seed));
  GibbsResult out;
  out.summary = sampler.run();
  const LatentState mode = out.summary.mode_state();
  out.patterns = extract_patterns(d, mode);
  out.params = sampler.params();
  apply_estimates(out.params, update_params_ml(d, mode));
  return out;
}

// Gibbs over new data with the frozen patterns and parameters. Day labels
// 1..K refer to the frozen patterns and K + 1 is the overflow label.
inline PosteriorSummary refit_frozen(const RainfallDataset& d, const SpatialWeights& w,
                                     const FrozenModel& frozen, const SamplerConfig& config) {
  GibbsSampler sampler(d, w, frozen, config);
  return sampler.run();
}

// ---------------------------------------------------------------------------
// Export

inline void write_assignments(const PosteriorSummary& p, const std::filesystem::path& dir) {
  {
    auto out = csv::open_for_write(dir / "assign_u.csv");
    out << "day_index,u_mode\n";
    for (std::size_t t = 0; t < p.u_mode.size(); ++t) out << t << ',' << p.u_mode[t] << '\n';
  }
  {
    auto out = csv::open_for_write(dir / "assign_v.csv");
    out << "loc_id,v_mode\n";
    for (std::size_t s = 0; s < p.v_mode.size(); ++s) out << s << ',' << p.v_mode[s] << '\n';
  }
  {
    auto out = csv::open_for_write(dir / "assign_z.csv");
    out << "loc_id,day_index,z_mode\n";
    for (Eigen::Index s = 0; s < p.z_mode.rows(); ++s)
      for (Eigen::Index t = 0; t < p.z_mode.cols(); ++t)
        out << s << ',' << t << ',' << static_cast<int>(p.z_mode(s, t)) << '\n';
  }
  auto out = csv::open_for_write(dir / "trace.csv");
  out << "sweep,logp\n";
  for (std::size_t i = 0; i < p.trace.size(); ++i) out << i << ',' << csv::fmt(p.trace[i]) << '\n';
}

}  // namespace rainmrf
