#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "rainmrf/baselines.hpp"
#include "rainmrf/common.hpp"
#include "rainmrf/csv.hpp"
#include "rainmrf/data.hpp"
#include "rainmrf/inference.hpp"
#include "rainmrf/metrics.hpp"
#include "rainmrf/model.hpp"
#include "rainmrf/svg.hpp"

namespace rainmrf::cli {

using Json = nlohmann::json;
namespace fs = std::filesystem;

struct RunConfig {
  fs::path locations;
  fs::path rainfall;
  fs::path out = "out";
  fs::path frozen;  // run directory of a previous fit, for refit
  std::uint64_t seed = 1;
  int threads = 1;

  ModelParams model;
  std::optional<double> sigma;  // population std of Y when unset
  int burnin = 200;
  int samples = 300;
  Schedule schedule = Schedule::kSequential;

  int k = 10;
  double tau = 0.0;  // spect1 bandwidth; <= 0 selects the median distance
  double lambda_reg = 1.0;
  int restarts = 10;

  int min_years = 5;

  SyntheticSpec synth;

  SamplerConfig sampler() const {
    SamplerConfig c;
    c.burnin = burnin;
    c.samples = samples;
    c.seed = seed;
    c.schedule = schedule;
    c.threads = threads;
    return c;
  }

  void validate() const {
    model.validate_user();
    if (sigma && !(*sigma > 0.0)) throw ValidationError("sigma must be > 0");
    sampler().validate();
    if (k < 1) throw ValidationError("baseline k must be >= 1");
    if (lambda_reg < 0.0) throw ValidationError("lambda_reg must be >= 0");
    if (restarts < 1) throw ValidationError("restarts must be >= 1");
    if (min_years < 1) throw ValidationError("min_years must be >= 1");
  }
};

namespace detail {

inline void check_keys(const Json& j, const std::string& where, std::set<std::string> allowed) {
  if (!j.is_object()) throw ValidationError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.contains(key)) throw ValidationError("config: unknown key '" + where + "." + key + "'");
}

template <typename T>
void read(const Json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace detail

inline Json synth_to_json(const SyntheticSpec& s) {
  return {{"num_locations", s.num_locations}, {"num_days", s.num_days},
          {"num_patterns", s.num_patterns},   {"num_series", s.num_series},
          {"num_years", s.num_years},         {"first_year", s.first_year},
          {"noise", s.noise},                 {"persistence", s.persistence},
          {"wet_shape", s.wet.shape},         {"wet_rate", s.wet.rate},
          {"dry_shape", s.dry.shape},         {"dry_rate", s.dry.rate},
          {"group_scale", s.group_scale}};
}

inline RunConfig parse_config(const Json& j) {
  RunConfig c;
  try {
    detail::check_keys(j, "", {"data", "out", "seed", "threads", "model", "sampler", "baseline",
                               "metrics", "synth", "refit"});
    if (j.contains("data")) {
      const auto& d = j.at("data");
      detail::check_keys(d, "data", {"locations", "rainfall"});
      if (d.contains("locations")) c.locations = d.at("locations").get<std::string>();
      if (d.contains("rainfall")) c.rainfall = d.at("rainfall").get<std::string>();
    }
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    detail::read(j, "seed", c.seed);
    detail::read(j, "threads", c.threads);
    if (j.contains("model")) {
      const auto& m = j.at("model");
      detail::check_keys(m, "model", {"gamma", "lambda", "f", "eta", "zeta", "sigma"});
      detail::read(m, "gamma", c.model.gamma);
      detail::read(m, "lambda", c.model.lambda);
      detail::read(m, "f", c.model.f);
      detail::read(m, "eta", c.model.eta);
      detail::read(m, "zeta", c.model.zeta);
      if (m.contains("sigma") && !m.at("sigma").is_null()) c.sigma = m.at("sigma").get<double>();
    }
    if (j.contains("sampler")) {
      const auto& s = j.at("sampler");
      detail::check_keys(s, "sampler", {"burnin", "samples", "schedule"});
      detail::read(s, "burnin", c.burnin);
      detail::read(s, "samples", c.samples);
      if (s.contains("schedule")) {
        const auto name = s.at("schedule").get<std::string>();
        if (name == "sequential")
          c.schedule = Schedule::kSequential;
        else if (name == "checkerboard")
          c.schedule = Schedule::kCheckerboard;
        else
          throw ValidationError("config: schedule must be 'sequential' or 'checkerboard'");
      }
    }
    if (j.contains("baseline")) {
      const auto& b = j.at("baseline");
      detail::check_keys(b, "baseline", {"k", "tau", "lambda_reg", "restarts"});
      detail::read(b, "k", c.k);
      detail::read(b, "tau", c.tau);
      detail::read(b, "lambda_reg", c.lambda_reg);
      detail::read(b, "restarts", c.restarts);
    }
    if (j.contains("metrics")) {
      const auto& m = j.at("metrics");
      detail::check_keys(m, "metrics", {"min_years"});
      detail::read(m, "min_years", c.min_years);
    }
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      std::set<std::string> keys;
      const Json defaults = synth_to_json(c.synth);
      for (const auto& [key, value] : defaults.items()) keys.insert(key);
      detail::check_keys(s, "synth", keys);
      auto& o = c.synth;
      detail::read(s, "num_locations", o.num_locations);
      detail::read(s, "num_days", o.num_days);
      detail::read(s, "num_patterns", o.num_patterns);
      detail::read(s, "num_series", o.num_series);
      detail::read(s, "num_years", o.num_years);
      detail::read(s, "first_year", o.first_year);
      detail::read(s, "noise", o.noise);
      detail::read(s, "persistence", o.persistence);
      detail::read(s, "wet_shape", o.wet.shape);
      detail::read(s, "wet_rate", o.wet.rate);
      detail::read(s, "dry_shape", o.dry.shape);
      detail::read(s, "dry_rate", o.dry.rate);
      detail::read(s, "group_scale", o.group_scale);
    }
    if (j.contains("refit")) {
      const auto& r = j.at("refit");
      detail::check_keys(r, "refit", {"frozen"});
      if (r.contains("frozen")) c.frozen = r.at("frozen").get<std::string>();
    }
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

// Echo of the settings a run depends on. The output directory is left out so
// that identical runs written to different places produce identical files.
inline Json config_to_json(const RunConfig& c) {
  Json model = {{"gamma", c.model.gamma}, {"lambda", c.model.lambda}, {"f", c.model.f},
                {"eta", c.model.eta},     {"zeta", c.model.zeta}};
  model["sigma"] = c.sigma ? Json(*c.sigma) : Json(nullptr);
  return {{"data", {{"locations", c.locations.generic_string()}, {"rainfall", c.rainfall.generic_string()}}},
          {"seed", c.seed},
          {"threads", c.threads},
          {"model", model},
          {"sampler",
           {{"burnin", c.burnin},
            {"samples", c.samples},
            {"schedule", c.schedule == Schedule::kSequential ? "sequential" : "checkerboard"}}},
          {"baseline", {{"k", c.k}, {"tau", c.tau}, {"lambda_reg", c.lambda_reg}, {"restarts", c.restarts}}},
          {"metrics", {{"min_years", c.min_years}}},
          {"synth", synth_to_json(c.synth)},
          {"refit", {{"frozen", c.frozen.generic_string()}}}};
}

// ---------------------------------------------------------------------------
// Files shared by every run directory

inline void write_json(const fs::path& path, const Json& j) {
  auto out = csv::open_for_write(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}

inline Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline Json params_to_json(const ModelParams& p) {
  Json alpha = Json::array(), beta = Json::array(), mu = Json::array();
  for (Eigen::Index s = 0; s < p.alpha.rows(); ++s) {
    alpha.push_back({p.alpha(s, 0), p.alpha(s, 1)});
    beta.push_back({p.beta(s, 0), p.beta(s, 1)});
  }
  for (Eigen::Index u = 0; u < p.mu.size(); ++u) mu.push_back(p.mu(u));
  return {{"gamma", p.gamma}, {"lambda", p.lambda}, {"f", p.f},       {"eta", p.eta},
          {"zeta", p.zeta},   {"sigma", p.sigma},   {"alpha", alpha}, {"beta", beta},
          {"mu", mu}};
}

inline ModelParams params_from_json(const Json& j) {
  ModelParams p;
  try {
    p.gamma = j.at("gamma").get<double>();
    p.lambda = j.at("lambda").get<double>();
    p.f = j.at("f").get<double>();
    p.eta = j.at("eta").get<double>();
    p.zeta = j.at("zeta").get<double>();
    p.sigma = j.at("sigma").get<double>();
    const auto& alpha = j.at("alpha");
    const auto& beta = j.at("beta");
    if (alpha.size() != beta.size()) throw ValidationError("params: alpha and beta lengths differ");
    const auto S = static_cast<Eigen::Index>(alpha.size());
    p.alpha.resize(S, 2);
    p.beta.resize(S, 2);
    for (Eigen::Index s = 0; s < S; ++s)
      for (int k = 0; k < 2; ++k) {
        p.alpha(s, k) = alpha.at(static_cast<std::size_t>(s)).at(static_cast<std::size_t>(k)).get<double>();
        p.beta(s, k) = beta.at(static_cast<std::size_t>(s)).at(static_cast<std::size_t>(k)).get<double>();
      }
    const auto& mu = j.at("mu");
    p.mu.resize(static_cast<Eigen::Index>(mu.size()));
    for (std::size_t u = 0; u < mu.size(); ++u) p.mu(static_cast<Eigen::Index>(u)) = mu.at(u).get<double>();
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("params: ") + e.what());
  }
  return p;
}

inline void write_labels(const fs::path& path, const std::string& header, const Labels& labels) {
  auto out = csv::open_for_write(path);
  out << header << '\n';
  for (std::size_t i = 0; i < labels.size(); ++i) out << i << ',' << labels[i] << '\n';
}

inline Labels read_labels(const fs::path& path, std::vector<std::string> header) {
  csv::Reader r(path, std::move(header));
  std::vector<std::string> f;
  std::map<int, int> rows;
  while (r.next(f)) {
    const int i = r.get<int>(f, 0);
    const int l = r.get<int>(f, 1);
    if (i < 0 || l < 1) r.fail("index must be >= 0 and label >= 1");
    if (!rows.emplace(i, l).second) r.fail("duplicate index " + std::to_string(i));
  }
  Labels out;
  for (const auto& [i, l] : rows) {
    if (i != static_cast<int>(out.size())) throw ValidationError(path.string() + ": indices are not dense");
    out.push_back(l);
  }
  return out;
}

inline void write_locations(const RainfallDataset& d, const fs::path& path) {
  auto out = csv::open_for_write(path);
  out << "loc_id,grid_x,grid_y\n";
  for (std::size_t s = 0; s < d.coords().size(); ++s)
    out << s << ',' << d.coords()[s].x << ',' << d.coords()[s].y << '\n';
}

inline std::vector<GridCoord> read_locations(const fs::path& path) {
  csv::Reader r(path, {"loc_id", "grid_x", "grid_y"});
  std::vector<std::string> f;
  std::vector<GridCoord> out;
  while (r.next(f)) {
    if (r.get<int>(f, 0) != static_cast<int>(out.size())) r.fail("loc_id values must be dense and ordered");
    out.push_back({r.get<int>(f, 1), r.get<int>(f, 2)});
  }
  return out;
}

inline void write_metrics_files(const MetricsReport& r, const fs::path& dir) {
  write_metrics(r, dir / "metrics.csv");
  auto out = csv::open_for_write(dir / "metrics.txt");
  out << format_report(r);
}

inline Json run_info(const std::string& command, const std::string& method, const RunConfig& c,
                     const RainfallDataset& d, Eigen::Index pattern_days, int clusters) {
  return {{"command", command},
          {"method", method},
          {"num_locations", d.num_locations()},
          {"num_days", d.num_days()},
          {"pattern_days", pattern_days},
          {"num_clusters", clusters},
          {"config", config_to_json(c)}};
}

inline void prepare_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

inline RainfallDataset load_data(const RunConfig& c) {
  if (c.locations.empty() || c.rainfall.empty())
    throw ValidationError("data.locations and data.rainfall must be set");
  return load_dataset(c.locations, c.rainfall);
}

inline ModelParams user_params(const RunConfig& c, const RainfallDataset& d) {
  ModelParams p = c.model;
  p.sigma = c.sigma ? *c.sigma : default_sigma(d);
  return p;
}

// ---------------------------------------------------------------------------
// Commands. Each returns a short summary for the terminal.

inline std::string cmd_synth(const RunConfig& c) {
  c.validate();
  SyntheticSpec spec = c.synth;
  spec.seed = c.seed;
  const auto syn = generate_synthetic(spec);
  prepare_out(c.out);
  write_dataset(syn.data, c.out / "locations.csv", c.out / "rainfall.csv");
  write_ground_truth(syn.truth, c.out);
  {
    auto out = csv::open_for_write(c.out / "planted.csv");
    out << "pattern_id,loc_id,state\n";
    for (Eigen::Index k = 0; k < syn.planted.cols(); ++k)
      for (Eigen::Index s = 0; s < syn.planted.rows(); ++s)
        out << k + 1 << ',' << s << ',' << static_cast<int>(syn.planted(s, k)) << '\n';
  }
  Json info = run_info("synth", "synthetic", c, syn.data, syn.data.num_days(), spec.num_patterns);
  info["seed"] = spec.seed;
  write_json(c.out / "run_info.json", info);
  return "wrote synthetic data (S=" + std::to_string(spec.num_locations) + ", T=" +
         std::to_string(spec.num_days) + ", K*=" + std::to_string(spec.num_patterns) + ") to " +
         c.out.string();
}

inline std::string cmd_fit(const RunConfig& c) {
  c.validate();
  const auto d = load_data(c);
  const auto w = compute_spatial_weights(d);
  const auto result = run_gibbs(d, w, user_params(c, d), c.sampler());
  const auto report = evaluate("mrf", d, result.summary.z_mode, result.summary.u_mode, result.patterns,
                               {c.min_years, c.model.eta});
  prepare_out(c.out);
  write_assignments(result.summary, c.out);
  write_patterns(result.patterns, c.out);
  write_locations(d, c.out / "locations.csv");
  write_json(c.out / "params.json", params_to_json(result.params));
  write_metrics_files(report, c.out);
  write_json(c.out / "run_info.json",
             run_info("fit", "mrf", c, d, d.num_days(), result.patterns.num_day_clusters()));
  return "fit: " + std::to_string(report.num_clusters) + " clusters, " +
         std::to_string(report.num_prominent) + " prominent, mean Hamming " +
         svg::num(report.distances.mean_hamming, 3) + "; wrote " + c.out.string();
}

inline std::string cmd_baseline(const RunConfig& c, const std::string& method) {
  c.validate();
  const auto d = load_data(c);
  const StateMatrix z = discretize_by_mean(d);
  if (c.k > d.num_days()) throw ValidationError("baseline k exceeds the number of days");
  Labels labels;
  Json extra = Json::object();
  std::optional<std::pair<EofBasis, Matrix>> eof;
  if (method == "kmeans") {
    const auto res = kmeans(d.rain().transpose(), c.k, c.seed, c.restarts);
    labels = res.labels;
    extra["objective"] = res.objective;
  } else if (method == "spect1") {
    const Matrix drvs = d.rain().transpose();
    labels = spectral_cluster(similarity_spect1(drvs, c.tau), c.k, c.seed).labels;
    extra["tau"] = c.tau > 0.0 ? c.tau : median_pairwise_distance(drvs);
  } else if (method == "spect2") {
    labels = spectral_cluster(similarity_spect2(z.transpose()), c.k, c.seed).labels;
  } else if (method == "eof") {
    if (c.k > d.num_locations()) throw ValidationError("eof: k exceeds the number of locations");
    EofBasis basis = eof_decompose(d.rain());
    Matrix coef(basis.vectors.cols(), d.num_days());
    double kkt = 0.0, residual = 0.0, nonzero = 0.0;
    labels.resize(static_cast<std::size_t>(d.num_days()));
    for (Eigen::Index t = 0; t < d.num_days(); ++t) {
      const Vector x = d.rain().col(t);
      coef.col(t) = lasso_fit(x, basis, c.lambda_reg);
      kkt = std::max(kkt, lasso_kkt_residual(x, basis, c.lambda_reg, coef.col(t)));
      residual += (x - basis.mean - basis.vectors * coef.col(t)).norm();
      nonzero += static_cast<double>((coef.col(t).array() != 0.0).count());
      // Each day joins the leading mode with the largest coefficient magnitude.
      Eigen::Index best = 0;
      coef.col(t).head(c.k).cwiseAbs().maxCoeff(&best);
      labels[static_cast<std::size_t>(t)] = static_cast<int>(best) + 1;
    }
    compact_labels(labels);
    const Matrix gram = basis.vectors.transpose() * basis.vectors;
    extra["orthonormality_error"] = (gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
    extra["kkt_residual_max"] = kkt;
    extra["lasso_mean_residual_l2"] = residual / static_cast<double>(d.num_days());
    extra["lasso_mean_nonzero"] = nonzero / static_cast<double>(d.num_days());
    eof.emplace(std::move(basis), std::move(coef));
  } else {
    throw ValidationError("unknown baseline method '" + method + "' (kmeans, spect1, spect2, eof)");
  }
  const auto patterns = baseline_patterns(d, labels);
  const auto report = evaluate(method, d, z, labels, patterns, {c.min_years, c.model.eta});
  prepare_out(c.out);
  write_labels(c.out / "assign_u.csv", "day_index,u_mode", labels);
  write_patterns(patterns, c.out);
  write_locations(d, c.out / "locations.csv");
  write_metrics_files(report, c.out);
  if (eof) {
    write_eof(eof->first, eof->second, c.out);
    svg::write(c.out / "eof_modes.svg",
               svg::pattern_grid("Leading EOFs (positive cells high)", d.coords(),
                                 eof_patterns(eof->first, c.k), true));
  }
  Json info = run_info("baseline", method, c, d, 0, patterns.num_day_clusters());
  info["k"] = c.k;
  info["details"] = extra;
  write_json(c.out / "run_info.json", info);
  return method + ": " + std::to_string(report.num_clusters) + " clusters, " +
         std::to_string(report.num_prominent) + " prominent, mean l2 " +
         svg::num(report.distances.mean_l2, 3) + ", mean Hamming " +
         svg::num(report.distances.mean_hamming, 3) + "; wrote " + c.out.string();
}

struct RunDir {
  std::string name;
  Json info;
  std::vector<MetricRow> metrics;
  std::vector<GridCoord> coords;
  PatternSet patterns;
};

inline RunDir read_run(const fs::path& dir) {
  RunDir r;
  r.info = read_json(dir / "run_info.json");
  try {
    r.name = r.info.at("method").get<std::string>();
    r.metrics = read_metrics(dir / "metrics.csv");
    r.coords = read_locations(dir / "locations.csv");
    const auto S = r.info.at("num_locations").get<Eigen::Index>();
    if (static_cast<Eigen::Index>(r.coords.size()) != S)
      throw ValidationError(dir.string() + ": locations.csv disagrees with run_info.json");
    r.patterns = read_patterns(dir, S, r.info.at("pattern_days").get<Eigen::Index>());
  } catch (const Json::exception& e) {
    throw ValidationError(dir.string() + "/run_info.json: " + e.what());
  }
  return r;
}

inline std::string cmd_compare(const RunConfig& c, const std::vector<fs::path>& dirs) {
  if (dirs.empty()) throw ValidationError("compare needs at least one run directory");
  std::vector<RunDir> runs;
  for (const auto& dir : dirs) runs.push_back(read_run(dir));

  // Column names: the method, made unique.
  std::map<std::string, int> used;
  for (auto& r : runs) {
    const int n = ++used[r.name];
    if (n > 1) r.name += "_" + std::to_string(n);
  }

  auto global_names = [](const RunDir& r) {
    std::vector<std::string> names;
    for (const auto& m : r.metrics)
      if (m.cluster == 0) names.push_back(m.metric);
    return names;
  };
  const auto names = global_names(runs.front());
  const auto S = runs.front().coords.size();
  for (const auto& r : runs) {
    if (global_names(r) != names)
      throw ValidationError("schema mismatch: " + r.name + " reports different metrics than " +
                            runs.front().name);
    if (r.coords.size() != S) throw ValidationError("schema mismatch: runs have different locations");
  }

  auto value = [](const RunDir& r, const std::string& metric, int cluster) {
    for (const auto& m : r.metrics)
      if (m.metric == metric && m.cluster == cluster) return m.value;
    return std::nan("");
  };

  prepare_out(c.out);
  {
    auto out = csv::open_for_write(c.out / "comparison.csv");
    out << "metric";
    for (const auto& r : runs) out << ',' << r.name;
    out << '\n';
    for (const auto& name : names) {
      out << name;
      for (const auto& r : runs) out << ',' << csv::fmt(value(r, name, 0));
      out << '\n';
    }
  }
  std::ostringstream table;
  table << std::left << std::setw(18) << "metric";
  for (const auto& r : runs) table << std::right << std::setw(14) << r.name;
  table << '\n';
  for (const auto& name : names) {
    table << std::left << std::setw(18) << name;
    for (const auto& r : runs) table << std::right << std::setw(14) << svg::num(value(r, name, 0), 3);
    table << '\n';
  }
  {
    auto out = csv::open_for_write(c.out / "comparison.txt");
    out << table.str();
  }

  int max_k = 0;
  for (const auto& r : runs) max_k = std::max(max_k, r.patterns.num_day_clusters());
  std::vector<std::string> categories;
  for (int k = 1; k <= max_k; ++k) categories.push_back(std::to_string(k));
  auto per_cluster = [&](const std::string& metric) {
    std::vector<svg::Series> series;
    for (const auto& r : runs) {
      svg::Series s{r.name, {}};
      for (int k = 1; k <= max_k; ++k) s.values.push_back(value(r, metric, k));
      series.push_back(std::move(s));
    }
    return series;
  };
  svg::write(c.out / "mean_y.svg",
             svg::bar_chart("Mean aggregate rainfall per cluster", "mm/day", categories, per_cluster("mean_y")));
  svg::write(c.out / "wet_fraction.svg",
             svg::bar_chart("Fraction of locations wet in the CDP", "fraction", categories,
                            per_cluster("wet_fraction")));
  svg::write(c.out / "spell_length.svg",
             svg::bar_chart("Mean spell length per cluster", "days", categories,
                            per_cluster("mean_spell_length")));
  svg::write(c.out / "spells_per_year.svg",
             svg::bar_chart("Spells per year per cluster", "spells", categories,
                            per_cluster("spells_per_year")));
  for (const auto& r : runs) {
    std::string file = r.name;
    for (char& ch : file)
      if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
    svg::write(c.out / ("cdp_" + file + ".svg"),
               svg::pattern_grid("CDPs, " + r.name, r.coords, r.patterns, true));
    svg::write(c.out / ("crp_" + file + ".svg"),
               svg::pattern_grid("CRPs, " + r.name, r.coords, r.patterns, false));
  }
  return table.str();
}

inline std::string cmd_refit(const RunConfig& c) {
  c.validate();
  if (c.frozen.empty()) throw ValidationError("refit needs refit.frozen (a fit run directory)");
  const auto d = load_data(c);
  const Json frozen_info = read_json(c.frozen / "run_info.json");
  Eigen::Index frozen_S = 0, frozen_T = 0;
  try {
    frozen_S = frozen_info.at("num_locations").get<Eigen::Index>();
    frozen_T = frozen_info.at("pattern_days").get<Eigen::Index>();
  } catch (const Json::exception& e) {
    throw ValidationError(c.frozen.string() + "/run_info.json: " + e.what());
  }
  if (frozen_S != d.num_locations())
    throw ValidationError("frozen model has " + std::to_string(frozen_S) + " locations, new data has " +
                          std::to_string(d.num_locations()));
  FrozenModel frozen;
  frozen.patterns = read_patterns(c.frozen, frozen_S, frozen_T);
  frozen.params = params_from_json(read_json(c.frozen / "params.json"));
  frozen.v = read_labels(c.frozen / "assign_v.csv", {"loc_id", "v_mode"});

  const auto w = compute_spatial_weights(d);
  const auto summary = refit_frozen(d, w, frozen, c.sampler());
  const auto report = evaluate("mrf-refit", d, summary.z_mode, summary.u_mode, frozen.patterns,
                               {c.min_years, frozen.params.eta});
  const int K = frozen.patterns.num_day_clusters();
  const auto overflow = std::count(summary.u_mode.begin(), summary.u_mode.end(), K + 1);

  prepare_out(c.out);
  write_assignments(summary, c.out);
  write_patterns(frozen.patterns, c.out);
  write_locations(d, c.out / "locations.csv");
  write_json(c.out / "params.json", params_to_json(frozen.params));
  write_metrics_files(report, c.out);
  Json info = run_info("refit", "mrf-refit", c, d, frozen_T, K);
  info["overflow_days"] = overflow;
  write_json(c.out / "run_info.json", info);
  return "refit: mean Hamming " + svg::num(report.distances.mean_hamming, 3) + " over " +
         std::to_string(report.distances.days_scored) + " days, " + std::to_string(overflow) +
         " overflow days; wrote " + c.out.string();
}

}  // namespace rainmrf::cli
