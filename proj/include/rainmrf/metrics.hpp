#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rainmrf/common.hpp"
#include "rainmrf/csv.hpp"
#include "rainmrf/data.hpp"
#include "rainmrf/model.hpp"

namespace rainmrf {

// Labels whose member days span at least `min_years` distinct years.
inline std::vector<int> prominent_clusters(const Labels& u, const std::vector<int>& year_index,
                                           int min_years = 5) {
  std::map<int, std::vector<int>> years;
  for (std::size_t t = 0; t < u.size(); ++t) years[u[t]].push_back(year_index[t]);
  std::vector<int> out;
  for (auto& [label, ys] : years) {
    std::sort(ys.begin(), ys.end());
    if (std::unique(ys.begin(), ys.end()) - ys.begin() >= min_years) out.push_back(label);
  }
  return out;
}

// Per-day means of the distance between each day and its cluster's pattern.
// Days whose label has no pattern (the refit overflow label) are not scored.
struct DistanceReport {
  double mean_l2 = 0.0;       // ||X(t) - crp(U(t))||
  double mean_hamming = 0.0;  // #{s : Z(s,t) != cdp(s, U(t))}
  double mean_agg = 0.0;      // |Y(t) - volume(U(t))|
  int days_scored = 0;
};

inline DistanceReport distance_report(const RainfallDataset& d, const StateMatrix& z,
                                      const Labels& u, const PatternSet& p) {
  DistanceReport r;
  for (Eigen::Index t = 0; t < d.num_days(); ++t) {
    const int k = u[static_cast<std::size_t>(t)];
    if (!p.has_cdp(k)) continue;
    r.mean_l2 += (d.rain().col(t) - p.crp.col(k - 1)).norm();
    r.mean_hamming += static_cast<double>((z.col(t).array() != p.cdp.col(k - 1).array()).count());
    r.mean_agg += std::abs(d.aggregate(t) - p.volume(k - 1));
    ++r.days_scored;
  }
  if (r.days_scored > 0) {
    r.mean_l2 /= r.days_scored;
    r.mean_hamming /= r.days_scored;
    r.mean_agg /= r.days_scored;
  }
  return r;
}

struct Homogeneity {
  std::vector<double> std_by_cluster;  // index label - 1; population convention
  double pooled = 0.0;                 // mean over non-empty clusters
};

inline Homogeneity cluster_homogeneity(const Vector& y, const Labels& u) {
  const int K = max_label(u);
  std::vector<double> sum(static_cast<std::size_t>(K), 0.0), sq(static_cast<std::size_t>(K), 0.0);
  std::vector<int> n(static_cast<std::size_t>(K), 0);
  for (std::size_t t = 0; t < u.size(); ++t) {
    const auto k = static_cast<std::size_t>(u[t] - 1);
    sum[k] += y(static_cast<Eigen::Index>(t));
    ++n[k];
  }
  Homogeneity h;
  h.std_by_cluster.assign(static_cast<std::size_t>(K), 0.0);
  for (std::size_t t = 0; t < u.size(); ++t) {
    const auto k = static_cast<std::size_t>(u[t] - 1);
    const double dev = y(static_cast<Eigen::Index>(t)) - sum[k] / n[k];
    sq[k] += dev * dev;
  }
  int used = 0;
  for (std::size_t k = 0; k < static_cast<std::size_t>(K); ++k) {
    if (n[k] == 0) continue;
    h.std_by_cluster[k] = std::sqrt(sq[k] / n[k]);
    h.pooled += h.std_by_cluster[k];
    ++used;
  }
  if (used > 0) h.pooled /= used;
  return h;
}

struct Coherence {
  double cdp = 0.0;  // fraction of (pattern, directed edge) pairs whose states differ
  double crp = 0.0;  // mean of |crp(s') - crp(s)| / |crp(s)| over pairs with |crp(s)| >= kRainEpsilon
};

// Spatial roughness of the selected patterns (all when `clusters` is empty);
// zero for a constant pattern.
inline Coherence spatial_coherence(const PatternSet& p, const std::vector<std::vector<int>>& neighborhoods,
                                   const std::vector<int>& clusters = {}) {
  std::vector<int> use = clusters;
  if (use.empty())
    for (int u = 1; u <= p.num_day_clusters(); ++u) use.push_back(u);
  Coherence c;
  long long cdp_pairs = 0, crp_pairs = 0;
  for (int u : use) {
    for (std::size_t s = 0; s < neighborhoods.size(); ++s) {
      const auto ss = static_cast<Eigen::Index>(s);
      for (int sp : neighborhoods[s]) {
        c.cdp += p.cdp(sp, u - 1) != p.cdp(ss, u - 1);
        ++cdp_pairs;
        const double base = std::abs(p.crp(ss, u - 1));
        if (base < kRainEpsilon) continue;
        c.crp += std::abs(p.crp(sp, u - 1) - p.crp(ss, u - 1)) / base;
        ++crp_pairs;
      }
    }
  }
  if (cdp_pairs > 0) c.cdp /= static_cast<double>(cdp_pairs);
  if (crp_pairs > 0) c.crp /= static_cast<double>(crp_pairs);
  return c;
}

struct SpellStats {
  std::vector<int> spells;            // per label, index label - 1
  std::vector<double> per_year;       // spells divided by the number of years in the record
  std::vector<double> mean_length;    // days per spell
};

// A spell is a maximal run of one label inside a single year.
inline SpellStats spell_stats(const Labels& u, const std::vector<int>& year_index) {
  const int K = max_label(u);
  SpellStats st;
  st.spells.assign(static_cast<std::size_t>(K), 0);
  std::vector<int> days(static_cast<std::size_t>(K), 0);
  int years = 0;
  for (std::size_t t = 0; t < u.size(); ++t) {
    const auto k = static_cast<std::size_t>(u[t] - 1);
    ++days[k];
    const bool new_year = t == 0 || year_index[t] != year_index[t - 1];
    if (new_year) ++years;
    if (new_year || u[t] != u[t - 1]) ++st.spells[k];
  }
  st.per_year.assign(static_cast<std::size_t>(K), 0.0);
  st.mean_length.assign(static_cast<std::size_t>(K), 0.0);
  for (std::size_t k = 0; k < static_cast<std::size_t>(K); ++k) {
    if (st.spells[k] == 0) continue;
    st.per_year[k] = static_cast<double>(st.spells[k]) / years;
    st.mean_length[k] = static_cast<double>(days[k]) / st.spells[k];
  }
  return st;
}

// Fraction of locations in the high state, per pattern.
inline std::vector<double> wet_fraction(const PatternSet& p) {
  std::vector<double> out;
  for (Eigen::Index u = 0; u < p.cdp.cols(); ++u)
    out.push_back(static_cast<double>((p.cdp.col(u).array() == kHigh).count()) /
                  static_cast<double>(p.cdp.rows()));
  return out;
}

enum class AicKind { kGaussian, kHamming };

// 2K - 2 log P, with -log P taken as the mean l2 distance (Gaussian) or
// eta times the mean Hamming distance (Hamming).
inline double aic(int clusters, double mean_distance, AicKind kind, double eta = 1.0) {
  const double neg_log_p = kind == AicKind::kGaussian ? mean_distance : eta * mean_distance;
  return 2.0 * clusters + 2.0 * neg_log_p;
}

inline double adjusted_rand_index(const Labels& a, const Labels& b) {
  if (a.size() != b.size()) throw ValidationError("ARI needs label vectors of equal length");
  std::map<std::pair<int, int>, long long> joint;
  std::map<int, long long> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++joint[{a[i], b[i]}];
    ++ra[a[i]];
    ++rb[b[i]];
  }
  auto c2 = [](long long n) { return static_cast<double>(n) * static_cast<double>(n - 1) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [k, n] : joint) index += c2(n);
  for (const auto& [k, n] : ra) sa += c2(n);
  for (const auto& [k, n] : rb) sb += c2(n);
  const double total = c2(static_cast<long long>(a.size()));
  const double expected = total > 0 ? sa * sb / total : 0.0;
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------
// Report

struct ClusterMetrics {
  int label = 0;
  int n_days = 0;
  int n_years = 0;
  bool prominent = false;
  double mean_y = 0.0;
  double std_y = 0.0;
  double wet_fraction = 0.0;
  double volume = 0.0;
  int spells = 0;
  double spells_per_year = 0.0;
  double mean_spell_length = 0.0;
};

struct MetricsReport {
  std::string method;
  std::vector<ClusterMetrics> clusters;
  int num_clusters = 0;
  int num_prominent = 0;
  int pc_coverage = 0;
  double pc_mean_days = 0.0;
  DistanceReport distances;
  double std_y_pooled = 0.0;
  double std_y_prominent = 0.0;
  Coherence coherence;            // over prominent patterns (all, when none is prominent)
  double aic_gaussian = 0.0;
  double aic_hamming = 0.0;
};

struct EvaluateOptions {
  int min_years = 5;
  double eta = 9.0;  // weight of the Hamming likelihood in AIC
};

// Scores one day clustering: `z` is the method's discretized data (posterior
// Z for the field model, mean-thresholded data for the baselines).
inline MetricsReport evaluate(std::string method, const RainfallDataset& d, const StateMatrix& z,
                              const Labels& u, const PatternSet& p, const EvaluateOptions& opt = {}) {
  MetricsReport r;
  r.method = std::move(method);
  const int K = p.num_day_clusters();
  r.num_clusters = 0;
  std::vector<int> n(static_cast<std::size_t>(K), 0);
  std::vector<double> ysum(static_cast<std::size_t>(K), 0.0);
  Labels scored;
  std::vector<int> scored_years;
  for (std::size_t t = 0; t < u.size(); ++t) {
    if (!p.has_cdp(u[t])) continue;
    ++n[static_cast<std::size_t>(u[t] - 1)];
    ysum[static_cast<std::size_t>(u[t] - 1)] += d.aggregate(static_cast<Eigen::Index>(t));
    scored.push_back(u[t]);
    scored_years.push_back(d.year_index(static_cast<Eigen::Index>(t)));
  }
  const auto prominent = prominent_clusters(u, d.year_indices(), opt.min_years);
  const auto spells = spell_stats(u, d.year_indices());
  const auto wet = wet_fraction(p);
  Vector y_scored(static_cast<Eigen::Index>(scored.size()));
  for (std::size_t i = 0, j = 0; i < u.size(); ++i)
    if (p.has_cdp(u[i])) y_scored(static_cast<Eigen::Index>(j++)) = d.aggregate(static_cast<Eigen::Index>(i));
  const auto homog = scored.empty() ? Homogeneity{} : cluster_homogeneity(y_scored, scored);

  std::vector<std::vector<bool>> years(static_cast<std::size_t>(K),
                                       std::vector<bool>(static_cast<std::size_t>(d.num_years()), false));
  for (std::size_t i = 0; i < scored.size(); ++i)
    years[static_cast<std::size_t>(scored[i] - 1)][static_cast<std::size_t>(scored_years[i])] = true;

  double prominent_std = 0.0;
  for (int k = 1; k <= K; ++k) {
    const auto kk = static_cast<std::size_t>(k - 1);
    if (n[kk] == 0) continue;
    ClusterMetrics c;
    c.label = k;
    c.n_days = n[kk];
    c.n_years = static_cast<int>(std::count(years[kk].begin(), years[kk].end(), true));
    c.prominent = std::find(prominent.begin(), prominent.end(), k) != prominent.end();
    c.mean_y = ysum[kk] / n[kk];
    c.std_y = kk < homog.std_by_cluster.size() ? homog.std_by_cluster[kk] : 0.0;
    c.wet_fraction = wet[kk];
    c.volume = p.volume(k - 1);
    if (kk < spells.spells.size()) {
      c.spells = spells.spells[kk];
      c.spells_per_year = spells.per_year[kk];
      c.mean_spell_length = spells.mean_length[kk];
    }
    if (c.prominent) {
      ++r.num_prominent;
      r.pc_coverage += c.n_days;
      prominent_std += c.std_y;
    }
    r.clusters.push_back(c);
  }
  r.num_clusters = static_cast<int>(r.clusters.size());
  r.pc_mean_days = r.num_prominent > 0 ? static_cast<double>(r.pc_coverage) / r.num_prominent : 0.0;
  r.std_y_pooled = homog.pooled;
  r.std_y_prominent = r.num_prominent > 0 ? prominent_std / r.num_prominent : 0.0;
  r.distances = distance_report(d, z, u, p);
  std::vector<int> prominent_with_pattern;
  for (int k : prominent)
    if (p.has_cdp(k)) prominent_with_pattern.push_back(k);
  r.coherence = spatial_coherence(p, d.neighborhoods(), prominent_with_pattern);
  r.aic_gaussian = aic(r.num_clusters, r.distances.mean_l2, AicKind::kGaussian);
  r.aic_hamming = aic(r.num_clusters, r.distances.mean_hamming, AicKind::kHamming, opt.eta);
  return r;
}

inline std::vector<std::pair<std::string, double>> global_metrics(const MetricsReport& r) {
  return {{"num_clusters", r.num_clusters},
          {"num_prominent", r.num_prominent},
          {"pc_coverage", r.pc_coverage},
          {"pc_mean_days", r.pc_mean_days},
          {"mean_l2", r.distances.mean_l2},
          {"mean_hamming", r.distances.mean_hamming},
          {"mean_agg", r.distances.mean_agg},
          {"days_scored", r.distances.days_scored},
          {"std_y_pooled", r.std_y_pooled},
          {"std_y_prominent", r.std_y_prominent},
          {"spch_cdp", r.coherence.cdp},
          {"spch_crp", r.coherence.crp},
          {"aic_gaussian", r.aic_gaussian},
          {"aic_hamming", r.aic_hamming}};
}

inline std::vector<std::pair<std::string, double>> cluster_metrics(const ClusterMetrics& c) {
  return {{"n_days", c.n_days},
          {"n_years", c.n_years},
          {"prominent", c.prominent ? 1.0 : 0.0},
          {"mean_y", c.mean_y},
          {"std_y", c.std_y},
          {"wet_fraction", c.wet_fraction},
          {"aggregate_mm", c.volume},
          {"spells", c.spells},
          {"spells_per_year", c.spells_per_year},
          {"mean_spell_length", c.mean_spell_length}};
}

// Flat `metric,cluster_id,value` rows; cluster_id 0 marks run-level metrics.
inline void write_metrics(const MetricsReport& r, const std::filesystem::path& file) {
  auto out = csv::open_for_write(file);
  out << "metric,cluster_id,value\n";
  for (const auto& [name, value] : global_metrics(r)) out << name << ",0," << csv::fmt(value) << '\n';
  for (const auto& c : r.clusters)
    for (const auto& [name, value] : cluster_metrics(c))
      out << name << ',' << c.label << ',' << csv::fmt(value) << '\n';
}

struct MetricRow {
  std::string metric;
  int cluster = 0;
  double value = 0.0;
};

inline std::vector<MetricRow> read_metrics(const std::filesystem::path& file) {
  csv::Reader r(file, {"metric", "cluster_id", "value"});
  std::vector<std::string> f;
  std::vector<MetricRow> rows;
  while (r.next(f)) rows.push_back({f[0], r.get<int>(f, 1), r.get<double>(f, 2)});
  return rows;
}

// Human-readable summary laid out like the comparison tables.
inline std::string format_report(const MetricsReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "method " << r.method << "\n";
  os << "clusters " << r.num_clusters << "  prominent " << r.num_prominent << "  PC coverage "
     << r.pc_coverage << " (" << r.pc_mean_days << " days/PC)\n";
  os << "std(Y) pooled " << r.std_y_pooled << "  prominent " << r.std_y_prominent << "\n";
  os << "mean l2 " << r.distances.mean_l2 << "  mean Hamming " << r.distances.mean_hamming
     << "  mean Agg " << r.distances.mean_agg << "  (" << r.distances.days_scored << " days)\n";
  os << "spch CDP " << r.coherence.cdp << "  spch CRP " << r.coherence.crp << "\n";
  os << "AIC Gaussian " << r.aic_gaussian << "  AIC Hamming " << r.aic_hamming << "\n\n";
  os << std::setw(8) << "cluster" << std::setw(8) << "days" << std::setw(7) << "years" << std::setw(6)
     << "PC" << std::setw(12) << "mean Y" << std::setw(11) << "std Y" << std::setw(8) << "wet"
     << std::setw(8) << "spells" << std::setw(9) << "length" << "\n";
  for (const auto& c : r.clusters)
    os << std::setw(8) << c.label << std::setw(8) << c.n_days << std::setw(7) << c.n_years
       << std::setw(6) << (c.prominent ? "*" : "") << std::setw(12) << c.mean_y << std::setw(11)
       << c.std_y << std::setw(8) << c.wet_fraction << std::setw(8) << c.spells << std::setw(9)
       << c.mean_spell_length << "\n";
  return os.str();
}

}  // namespace rainmrf
