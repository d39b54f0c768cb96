#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rainmrf/common.hpp"
#include "rainmrf/csv.hpp"
#include "rainmrf/latent_state.hpp"

namespace rainmrf {

struct GridCoord {
  int x = 0;
  int y = 0;
  auto operator<=>(const GridCoord&) const = default;
};

// Gridded daily rainfall, S locations by T days. Immutable once built.
class RainfallDataset {
 public:
  RainfallDataset() = default;

  // Validates the inputs and builds the 8-connected lattice neighborhoods.
  static RainfallDataset create(Matrix rain, std::vector<GridCoord> coords,
                                std::vector<int> year_of_day) {
    RainfallDataset d;
    const auto S = rain.rows();
    const auto T = rain.cols();
    if (S < 1 || T < 1) throw ValidationError("dataset needs at least one location and one day");
    if (static_cast<Eigen::Index>(coords.size()) != S)
      throw ValidationError("coordinate count does not match location count");
    if (static_cast<Eigen::Index>(year_of_day.size()) != T)
      throw ValidationError("year label count does not match day count");
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index s = 0; s < S; ++s) {
        const double x = rain(s, t);
        if (!std::isfinite(x) || x < 0.0)
          throw ValidationError("negative or non-finite rainfall at location " + std::to_string(s) +
                                ", day " + std::to_string(t));
      }

    std::map<GridCoord, int> index;
    for (int s = 0; s < static_cast<int>(S); ++s) {
      const auto [it, inserted] = index.emplace(coords[static_cast<std::size_t>(s)], s);
      if (!inserted)
        throw ValidationError("duplicate grid coordinate (" + std::to_string(it->first.x) + "," +
                              std::to_string(it->first.y) + ") at locations " +
                              std::to_string(it->second) + " and " + std::to_string(s));
    }

    // Year labels must form contiguous runs.
    std::set<int> finished;
    d.year_index_.resize(static_cast<std::size_t>(T));
    int current = 0;
    for (Eigen::Index t = 0; t < T; ++t) {
      const int y = year_of_day[static_cast<std::size_t>(t)];
      if (t > 0 && y != year_of_day[static_cast<std::size_t>(t - 1)]) {
        finished.insert(year_of_day[static_cast<std::size_t>(t - 1)]);
        ++current;
      }
      if (finished.contains(y))
        throw ValidationError("days of year " + std::to_string(y) + " are not contiguous");
      d.year_index_[static_cast<std::size_t>(t)] = current;
    }
    d.num_years_ = current + 1;

    d.neighbors_.resize(static_cast<std::size_t>(S));
    for (int s = 0; s < static_cast<int>(S); ++s) {
      const GridCoord c = coords[static_cast<std::size_t>(s)];
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) {
          if (a == 0 && b == 0) continue;
          const auto it = index.find({c.x + a, c.y + b});
          if (it != index.end()) d.neighbors_[static_cast<std::size_t>(s)].push_back(it->second);
        }
    }

    d.aggregate_ = rain.colwise().sum().transpose();
    d.location_mean_ = rain.rowwise().mean();
    d.rain_ = std::move(rain);
    d.coords_ = std::move(coords);
    d.year_of_day_ = std::move(year_of_day);
    return d;
  }

  Eigen::Index num_locations() const { return rain_.rows(); }
  Eigen::Index num_days() const { return rain_.cols(); }

  const Matrix& rain() const { return rain_; }
  double rain(Eigen::Index s, Eigen::Index t) const { return rain_(s, t); }

  const std::vector<GridCoord>& coords() const { return coords_; }
  const std::vector<int>& year_of_day() const { return year_of_day_; }

  // Dense 0-based index of the year containing day t.
  int year_index(Eigen::Index t) const { return year_index_[static_cast<std::size_t>(t)]; }
  const std::vector<int>& year_indices() const { return year_index_; }
  int num_years() const { return num_years_; }

  const std::vector<int>& neighbors(Eigen::Index s) const {
    return neighbors_[static_cast<std::size_t>(s)];
  }
  const std::vector<std::vector<int>>& neighborhoods() const { return neighbors_; }

  // Y(t): rainfall summed over all locations.
  const Vector& aggregate() const { return aggregate_; }
  double aggregate(Eigen::Index t) const { return aggregate_(t); }

  const Vector& location_mean() const { return location_mean_; }

  // Columns [first, first + count) as a new dataset; neighborhoods are rebuilt.
  RainfallDataset slice_days(Eigen::Index first, Eigen::Index count) const {
    if (first < 0 || count < 1 || first + count > num_days())
      throw ValidationError("day slice out of range");
    std::vector<int> years(year_of_day_.begin() + first, year_of_day_.begin() + first + count);
    return create(rain_.middleCols(first, count), coords_, std::move(years));
  }

 private:
  Matrix rain_;
  std::vector<GridCoord> coords_;
  std::vector<int> year_of_day_;
  std::vector<int> year_index_;
  int num_years_ = 0;
  std::vector<std::vector<int>> neighbors_;
  Vector aggregate_;
  Vector location_mean_;
};

// Coherence weight g(s,s') for every neighbor pair, stored parallel to the
// dataset's neighborhood lists.
struct SpatialWeights {
  std::vector<std::vector<double>> g;

  // Weight of the pair (s, s'); zero when s' is not a neighbor of s.
  double weight(const RainfallDataset& d, int s, int s_prime) const {
    const auto& nb = d.neighbors(s);
    for (std::size_t i = 0; i < nb.size(); ++i)
      if (nb[i] == s_prime) return g[static_cast<std::size_t>(s)][i];
    return 0.0;
  }
};

inline double pearson(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const double ma = a.mean();
  const double mb = b.mean();
  const Vector da = a.array() - ma;
  const Vector db = b.array() - mb;
  const double va = da.squaredNorm();
  const double vb = db.squaredNorm();
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  const double r = da.dot(db) / std::sqrt(va * vb);
  return std::clamp(r, -1.0, 1.0);
}

// Pearson correlation of the two locations' rainfall series. Zero-variance
// series get weight 0.
inline SpatialWeights compute_spatial_weights(const RainfallDataset& d) {
  if (d.num_days() < 2) throw ValidationError("spatial weights need at least two days");
  SpatialWeights w;
  w.g.resize(static_cast<std::size_t>(d.num_locations()));
  for (Eigen::Index s = 0; s < d.num_locations(); ++s) {
    const auto& nb = d.neighbors(s);
    auto& out = w.g[static_cast<std::size_t>(s)];
    out.resize(nb.size());
    for (std::size_t i = 0; i < nb.size(); ++i) {
      if (nb[i] < s) {
        out[i] = w.weight(d, nb[i], static_cast<int>(s));
        continue;
      }
      out[i] = pearson(d.rain().row(s).transpose(), d.rain().row(nb[i]).transpose());
    }
  }
  return w;
}

// High (1) strictly above the location's mean daily rainfall, low (2) otherwise.
inline StateMatrix discretize_by_mean(const RainfallDataset& d) {
  StateMatrix z(d.num_locations(), d.num_days());
  for (Eigen::Index t = 0; t < d.num_days(); ++t)
    for (Eigen::Index s = 0; s < d.num_locations(); ++s)
      z(s, t) = d.rain(s, t) > d.location_mean()(s) ? kHigh : kLow;
  return z;
}

// Two-group split of log rainfall (clamped at kRainEpsilon) pooled over all
// cells: one-dimensional Lloyd iterations started from the extremes. Returns
// the cut in mm.
inline double pooled_log_split(const RainfallDataset& d) {
  const auto n = d.rain().size();
  std::vector<double> x(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    x[static_cast<std::size_t>(i)] = std::log(std::max(d.rain().data()[i], kRainEpsilon));
  double lo = *std::min_element(x.begin(), x.end());
  double hi = *std::max_element(x.begin(), x.end());
  double cut = hi;
  for (int iter = 0; iter < 200 && lo < hi; ++iter) {
    const double next = 0.5 * (lo + hi);
    if (next == cut) break;
    cut = next;
    double sum_lo = 0.0, sum_hi = 0.0;
    std::size_t n_lo = 0, n_hi = 0;
    for (double v : x) {
      if (v > cut) {
        sum_hi += v;
        ++n_hi;
      } else {
        sum_lo += v;
        ++n_lo;
      }
    }
    if (n_lo == 0 || n_hi == 0) break;
    lo = sum_lo / static_cast<double>(n_lo);
    hi = sum_hi / static_cast<double>(n_hi);
  }
  return std::exp(cut);
}

// High where rainfall exceeds the pooled split.
inline StateMatrix discretize_by_pooled_split(const RainfallDataset& d) {
  const double cut = pooled_log_split(d);
  return d.rain().unaryExpr([cut](double x) -> State { return std::max(x, kRainEpsilon) > cut ? kHigh : kLow; });
}

// ---------------------------------------------------------------------------
// Loading

inline RainfallDataset load_dataset(const std::filesystem::path& locations_file,
                                    const std::filesystem::path& rain_file) {
  std::vector<std::pair<int, GridCoord>> locs;
  {
    csv::Reader r(locations_file, {"loc_id", "grid_x", "grid_y"});
    std::vector<std::string> f;
    while (r.next(f)) {
      const int id = r.get<int>(f, 0);
      if (id < 0) r.fail("negative loc_id");
      locs.emplace_back(id, GridCoord{r.get<int>(f, 1), r.get<int>(f, 2)});
    }
  }
  const auto S = static_cast<int>(locs.size());
  if (S == 0) throw ValidationError(locations_file.string() + ": no locations");
  std::vector<GridCoord> coords(static_cast<std::size_t>(S));
  std::vector<bool> seen(static_cast<std::size_t>(S), false);
  for (const auto& [id, c] : locs) {
    if (id >= S || seen[static_cast<std::size_t>(id)])
      throw ValidationError(locations_file.string() + ": loc_id values must be dense and unique");
    seen[static_cast<std::size_t>(id)] = true;
    coords[static_cast<std::size_t>(id)] = c;
  }

  struct Row {
    int loc, day, year;
    double mm;
  };
  std::vector<Row> rows;
  int T = 0;
  {
    csv::Reader r(rain_file, {"loc_id", "day_index", "year", "rain_mm"});
    std::vector<std::string> f;
    while (r.next(f)) {
      Row row{r.get<int>(f, 0), r.get<int>(f, 1), r.get<int>(f, 2), r.get<double>(f, 3)};
      if (row.loc < 0 || row.loc >= S) r.fail("unknown loc_id " + std::to_string(row.loc));
      if (row.day < 0) r.fail("negative day_index");
      if (!std::isfinite(row.mm)) r.fail("non-finite rain_mm");
      if (row.mm < 0.0)
        throw ValidationError(rain_file.string() + ":" + std::to_string(r.line()) +
                              ": negative rainfall");
      T = std::max(T, row.day + 1);
      rows.push_back(row);
    }
  }
  if (static_cast<long long>(rows.size()) != static_cast<long long>(S) * T)
    throw ValidationError(rain_file.string() + ": expected one row per (loc_id, day_index), " +
                          std::to_string(static_cast<long long>(S) * T) + " rows, got " +
                          std::to_string(rows.size()));
  Matrix rain = Matrix::Constant(S, T, -1.0);
  std::vector<int> years(static_cast<std::size_t>(T), 0);
  std::vector<bool> year_set(static_cast<std::size_t>(T), false);
  for (const auto& row : rows) {
    if (rain(row.loc, row.day) >= 0.0)
      throw ValidationError(rain_file.string() + ": duplicate row for loc_id " +
                            std::to_string(row.loc) + ", day_index " + std::to_string(row.day));
    rain(row.loc, row.day) = row.mm;
    auto& y = years[static_cast<std::size_t>(row.day)];
    if (year_set[static_cast<std::size_t>(row.day)] && y != row.year)
      throw ValidationError(rain_file.string() + ": conflicting year labels for day_index " +
                            std::to_string(row.day));
    y = row.year;
    year_set[static_cast<std::size_t>(row.day)] = true;
  }
  return RainfallDataset::create(std::move(rain), std::move(coords), std::move(years));
}

inline void write_dataset(const RainfallDataset& d, const std::filesystem::path& locations_file,
                          const std::filesystem::path& rain_file) {
  {
    auto out = csv::open_for_write(locations_file);
    out << "loc_id,grid_x,grid_y\n";
    for (std::size_t s = 0; s < d.coords().size(); ++s)
      out << s << ',' << d.coords()[s].x << ',' << d.coords()[s].y << '\n';
  }
  auto out = csv::open_for_write(rain_file);
  out << "loc_id,day_index,year,rain_mm\n";
  for (Eigen::Index s = 0; s < d.num_locations(); ++s)
    for (Eigen::Index t = 0; t < d.num_days(); ++t)
      out << s << ',' << t << ',' << d.year_of_day()[static_cast<std::size_t>(t)] << ','
          << csv::fmt(d.rain(s, t)) << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic data with planted patterns

struct GammaParams {
  double shape = 1.0;
  double rate = 1.0;
};

struct SyntheticSpec {
  int num_locations = 64;
  int num_days = 400;
  int num_patterns = 4;  // planted spatial patterns K*
  int num_series = 1;    // planted location groups L*
  int num_years = 8;
  int first_year = 2000;
  double noise = 0.1;        // per-cell state flip probability
  double persistence = 0.6;  // probability a day repeats the previous day's pattern
  GammaParams wet{2.0, 0.2};
  GammaParams dry{1.0, 2.0};
  // Wet-state rainfall of location group v is scaled by 1 + group_scale * (v - 1).
  double group_scale = 0.5;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_locations < 1 || num_days < 1) throw ValidationError("synthetic S and T must be positive");
    if (num_patterns < 1 || num_series < 1) throw ValidationError("synthetic K* and L* must be >= 1");
    if (num_patterns > num_days) throw ValidationError("synthetic K* exceeds T");
    if (num_series > num_locations) throw ValidationError("synthetic L* exceeds S");
    if (num_years < 1 || num_years > num_days) throw ValidationError("synthetic year count out of range");
    if (!(noise >= 0.0 && noise < 0.5)) throw ValidationError("synthetic noise must lie in [0, 0.5)");
    if (!(persistence >= 0.0 && persistence < 1.0))
      throw ValidationError("synthetic persistence must lie in [0, 1)");
    if (!(wet.shape > 0 && wet.rate > 0 && dry.shape > 0 && dry.rate > 0))
      throw ValidationError("synthetic Gamma parameters must be positive");
  }
};

struct SyntheticData {
  RainfallDataset data;
  LatentState truth;
  StateMatrix planted;  // S x K*, column k is pattern k + 1
};

namespace detail {

// Union of one or two random discs on the lattice.
inline std::vector<State> random_blob_pattern(const std::vector<GridCoord>& coords, int width,
                                              int height, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux(0.0, width);
  std::uniform_real_distribution<double> uy(0.0, height);
  std::uniform_real_distribution<double> ur(0.2 * std::max(width, height),
                                            0.5 * std::max(width, height));
  const int discs = 1 + static_cast<int>(rng() % 2);
  std::vector<State> p(coords.size(), kLow);
  for (int k = 0; k < discs; ++k) {
    const double cx = ux(rng), cy = uy(rng), r = ur(rng);
    for (std::size_t s = 0; s < coords.size(); ++s) {
      const double dx = coords[s].x + 0.5 - cx, dy = coords[s].y + 0.5 - cy;
      if (dx * dx + dy * dy <= r * r) p[s] = kHigh;
    }
  }
  return p;
}

}  // namespace detail

// Deterministic given the SyntheticSpec, seed included.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const int S = spec.num_locations, T = spec.num_days, K = spec.num_patterns;
  const int width = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(S))));
  const int height = (S + width - 1) / width;
  std::vector<GridCoord> coords(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) coords[static_cast<std::size_t>(s)] = {s % width, s / width};

  // Planted patterns, pairwise separated by at least S/8 cells when possible.
  const int min_sep = std::max(1, S / 8);
  std::vector<std::vector<State>> patterns;
  for (int attempt = 0; static_cast<int>(patterns.size()) < K; ++attempt) {
    auto p = detail::random_blob_pattern(coords, width, height, rng);
    bool ok = true;
    for (const auto& q : patterns) {
      int diff = 0;
      for (int s = 0; s < S; ++s) diff += p[static_cast<std::size_t>(s)] != q[static_cast<std::size_t>(s)];
      if (diff < min_sep && attempt < 10000) ok = false;
    }
    if (ok) patterns.push_back(std::move(p));
  }
  StateMatrix planted(S, K);
  for (int k = 0; k < K; ++k)
    for (int s = 0; s < S; ++s) planted(s, k) = patterns[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)];

  LatentState truth;
  truth.u.resize(static_cast<std::size_t>(T));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick(1, K);
  for (int t = 0; t < T; ++t) {
    const bool stay = t > 0 && unit(rng) < spec.persistence;
    truth.u[static_cast<std::size_t>(t)] = stay ? truth.u[static_cast<std::size_t>(t - 1)] : pick(rng);
  }
  // Every planted pattern is used at least once.
  for (int k = 1; k <= K; ++k) {
    if (std::find(truth.u.begin(), truth.u.end(), k) == truth.u.end())
      truth.u[static_cast<std::size_t>((k - 1) * T / K)] = k;
  }
  if (!is_dense(truth.u)) {
    // A forced placement overwrote the only day of another pattern; spread them out.
    for (int k = 1; k <= K; ++k) truth.u[static_cast<std::size_t>((k - 1) * T / K)] = k;
  }

  truth.v.resize(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s)
    truth.v[static_cast<std::size_t>(s)] =
        1 + coords[static_cast<std::size_t>(s)].x * spec.num_series / width;
  compact_labels(truth.v);

  truth.z.resize(S, T);
  Matrix rain(S, T);
  std::gamma_distribution<double> wet(spec.wet.shape, 1.0 / spec.wet.rate);
  std::gamma_distribution<double> dry(spec.dry.shape, 1.0 / spec.dry.rate);
  for (int t = 0; t < T; ++t) {
    const int k = truth.u[static_cast<std::size_t>(t)] - 1;
    for (int s = 0; s < S; ++s) {
      State z = planted(s, k);
      if (unit(rng) < spec.noise) z = flip(z);
      truth.z(s, t) = z;
      const double scale = 1.0 + spec.group_scale * (truth.v[static_cast<std::size_t>(s)] - 1);
      rain(s, t) = z == kHigh ? scale * wet(rng) : dry(rng);
    }
  }

  std::vector<int> years(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t)
    years[static_cast<std::size_t>(t)] =
        spec.first_year + static_cast<int>(static_cast<long long>(t) * spec.num_years / T);

  return {RainfallDataset::create(std::move(rain), std::move(coords), std::move(years)),
          std::move(truth), std::move(planted)};
}

inline void write_ground_truth(const LatentState& truth, const std::filesystem::path& dir) {
  {
    auto out = csv::open_for_write(dir / "truth_u.csv");
    out << "day_index,u_true\n";
    for (std::size_t t = 0; t < truth.u.size(); ++t) out << t << ',' << truth.u[t] << '\n';
  }
  {
    auto out = csv::open_for_write(dir / "truth_v.csv");
    out << "loc_id,v_true\n";
    for (std::size_t s = 0; s < truth.v.size(); ++s) out << s << ',' << truth.v[s] << '\n';
  }
  auto out = csv::open_for_write(dir / "truth_z.csv");
  out << "loc_id,day_index,z_true\n";
  for (Eigen::Index s = 0; s < truth.z.rows(); ++s)
    for (Eigen::Index t = 0; t < truth.z.cols(); ++t)
      out << s << ',' << t << ',' << static_cast<int>(truth.z(s, t)) << '\n';
}

}  // namespace rainmrf
