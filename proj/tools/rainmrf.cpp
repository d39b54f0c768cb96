#include <cstdint>
#include <filesystem>
#include <iostream>
#include <new>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "rainmrf/commands.hpp"

namespace {

namespace fs = std::filesystem;
using rainmrf::cli::RunConfig;

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  int threads = 0;
  std::string locations;
  std::string rainfall;
  std::string frozen;
  int k = 0;
  std::string method;
  std::vector<std::string> runs;
};

void add_data_options(CLI::App* cmd, Flags& f) {
  cmd->add_option("--locations", f.locations, "locations CSV (loc_id,grid_x,grid_y)");
  cmd->add_option("--rainfall", f.rainfall, "rainfall CSV (loc_id,day_index,year,rain_mm)");
}

// Flags given on the command line win over the config file.
RunConfig resolve(const CLI::App& app, const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : rainmrf::cli::load_config(f.config);
  if (app.get_option("--seed")->count() > 0) c.seed = f.seed;
  if (app.get_option("--out")->count() > 0) c.out = f.out;
  if (app.get_option("--threads")->count() > 0) c.threads = f.threads;
  if (!f.locations.empty()) c.locations = f.locations;
  if (!f.rainfall.empty()) c.rainfall = f.rainfall;
  if (!f.frozen.empty()) c.frozen = f.frozen;
  if (f.k > 0) c.k = f.k;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Canonical rainfall patterns from gridded daily data"};
  app.require_subcommand(1);
  Flags f;
  app.add_option("--config", f.config, "JSON run configuration");
  app.add_option("--seed", f.seed, "random seed");
  app.add_option("--out", f.out, "output directory");
  app.add_option("--threads", f.threads, "worker threads for the checkerboard schedule")
      ->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with planted patterns");
  auto* fit = app.add_subcommand("fit", "fit the field model by Gibbs sampling");
  add_data_options(fit, f);
  auto* baseline = app.add_subcommand("baseline", "run a reference method");
  baseline->add_option("method", f.method, "kmeans, spect1, spect2 or eof")
      ->required()
      ->check(CLI::IsMember({"kmeans", "spect1", "spect2", "eof"}));
  baseline->add_option("--k", f.k, "number of clusters (EOF: leading modes)")->check(CLI::PositiveNumber);
  add_data_options(baseline, f);
  auto* compare = app.add_subcommand("compare", "tabulate and plot several runs");
  compare->add_option("runs", f.runs, "run directories")->required();
  auto* refit = app.add_subcommand("refit", "assign new data to the patterns of a previous fit");
  refit->add_option("--frozen", f.frozen, "run directory of the fit to reuse");
  add_data_options(refit, f);
  for (auto* sub : {synth, fit, baseline, compare, refit}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    const RunConfig c = resolve(app, f);
    std::string summary;
    if (synth->parsed())
      summary = rainmrf::cli::cmd_synth(c);
    else if (fit->parsed())
      summary = rainmrf::cli::cmd_fit(c);
    else if (baseline->parsed())
      summary = rainmrf::cli::cmd_baseline(c, f.method);
    else if (compare->parsed()) {
      std::vector<fs::path> dirs(f.runs.begin(), f.runs.end());
      summary = rainmrf::cli::cmd_compare(c, dirs);
    } else
      summary = rainmrf::cli::cmd_refit(c);
    std::cout << summary << (summary.empty() || summary.back() == '\n' ? "" : "\n");
    return 0;
  } catch (const rainmrf::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::bad_alloc&) {
    std::cerr << "error: out of memory\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
