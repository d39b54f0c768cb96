#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "rainmrf/data.hpp"

namespace testutil {

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rainmrf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// width x height lattice, row-major by x, one year.
inline std::vector<rainmrf::GridCoord> lattice(int width, int height) {
  std::vector<rainmrf::GridCoord> c;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) c.push_back({x, y});
  return c;
}

inline rainmrf::RainfallDataset grid_dataset(int width, int height, const rainmrf::Matrix& rain,
                                             std::vector<int> years = {}) {
  if (years.empty()) years.assign(static_cast<std::size_t>(rain.cols()), 2000);
  return rainmrf::RainfallDataset::create(rain, lattice(width, height), std::move(years));
}

inline rainmrf::Matrix random_rain(Eigen::Index S, Eigen::Index T, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.8, 5.0);
  std::bernoulli_distribution dry(0.3);
  rainmrf::Matrix m(S, T);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index s = 0; s < S; ++s) m(s, t) = dry(rng) ? 0.0 : g(rng);
  return m;
}

}  // namespace testutil
