#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "rainmrf/data.hpp"

using namespace rainmrf;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

// Oracle: neighbors by explicit offset enumeration with clipping.
int expected_neighbors(int x, int y, int width, int height) {
  int n = 0;
  for (int a = -1; a <= 1; ++a)
    for (int b = -1; b <= 1; ++b) {
      if (a == 0 && b == 0) continue;
      if (x + a >= 0 && x + a < width && y + b >= 0 && y + b < height) ++n;
    }
  return n;
}

// Oracle: textbook Pearson from raw sums.
double naive_pearson(const Matrix& m, Eigen::Index a, Eigen::Index b) {
  const double n = static_cast<double>(m.cols());
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (Eigen::Index t = 0; t < m.cols(); ++t) {
    sa += m(a, t);
    sb += m(b, t);
    saa += m(a, t) * m(a, t);
    sbb += m(b, t) * m(b, t);
    sab += m(a, t) * m(b, t);
  }
  return (n * sab - sa * sb) / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb));
}

}  // namespace

TEST(Dataset, ThreeByThreeNeighborhoodSizes) {
  const auto d = testutil::grid_dataset(3, 3, Matrix::Ones(9, 2));
  for (int s = 0; s < 9; ++s) {
    const auto c = d.coords()[static_cast<std::size_t>(s)];
    EXPECT_EQ(static_cast<int>(d.neighbors(s).size()), expected_neighbors(c.x, c.y, 3, 3));
  }
  EXPECT_EQ(d.neighbors(4).size(), 8u);
  EXPECT_EQ(d.neighbors(0).size(), 3u);
}

TEST(Dataset, SingleLocationSingleDay) {
  const auto d = RainfallDataset::create(Matrix::Zero(1, 1), {{5, 7}}, {2001});
  EXPECT_EQ(d.num_locations(), 1);
  EXPECT_EQ(d.num_days(), 1);
  EXPECT_TRUE(d.neighbors(0).empty());
}

TEST(Dataset, NeighborhoodSymmetryOnIrregularGrid) {
  std::mt19937_64 rng(3);
  std::vector<GridCoord> coords;
  for (int x = 0; x < 9; ++x)
    for (int y = 0; y < 7; ++y)
      if (rng() % 3 != 0) coords.push_back({x, y});
  const auto S = static_cast<Eigen::Index>(coords.size());
  const auto d = RainfallDataset::create(Matrix::Ones(S, 3), coords, {1, 1, 1});
  for (Eigen::Index s = 0; s < S; ++s) {
    EXPECT_LE(d.neighbors(s).size(), 8u);
    for (int n : d.neighbors(s)) {
      EXPECT_NE(n, s);
      const auto& back = d.neighbors(n);
      EXPECT_NE(std::find(back.begin(), back.end(), static_cast<int>(s)), back.end());
    }
  }
}

TEST(Dataset, RejectsDuplicateCoordinates) {
  EXPECT_THROW(RainfallDataset::create(Matrix::Ones(2, 1), {{0, 0}, {0, 0}}, {1}), ValidationError);
}

TEST(Dataset, RejectsNegativeRainfall) {
  Matrix m = Matrix::Ones(2, 2);
  m(1, 1) = -0.5;
  EXPECT_THROW(RainfallDataset::create(m, {{0, 0}, {1, 0}}, {1, 1}), ValidationError);
}

TEST(Dataset, RejectsNonContiguousYears) {
  EXPECT_THROW(RainfallDataset::create(Matrix::Ones(1, 3), {{0, 0}}, {2000, 2001, 2000}), ValidationError);
}

TEST(Dataset, AggregateAndYearIndex) {
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  const auto d = RainfallDataset::create(m, {{0, 0}, {1, 0}}, {1990, 1990, 1991});
  EXPECT_DOUBLE_EQ(d.aggregate(0), 5.0);
  EXPECT_DOUBLE_EQ(d.aggregate(2), 9.0);
  EXPECT_EQ(d.num_years(), 2);
  EXPECT_EQ(d.year_index(1), 0);
  EXPECT_EQ(d.year_index(2), 1);
}

TEST(Dataset, SliceDays) {
  std::mt19937_64 rng(1);
  const auto d = testutil::grid_dataset(2, 2, testutil::random_rain(4, 6, rng), {1, 1, 1, 2, 2, 2});
  const auto s = d.slice_days(2, 3);
  EXPECT_EQ(s.num_days(), 3);
  EXPECT_EQ(s.num_years(), 2);
  EXPECT_EQ(s.rain().col(0), d.rain().col(2));
  EXPECT_THROW(d.slice_days(4, 3), ValidationError);
}

TEST(Load, RoundTripsLosslessly) {
  const auto dir = testutil::temp_dir("roundtrip");
  std::mt19937_64 rng(7);
  Matrix m = testutil::random_rain(6, 5, rng);
  m(0, 0) = 0.1 + 0.2;  // not exactly representable in short decimal form
  const auto d = testutil::grid_dataset(3, 2, m, {2000, 2000, 2001, 2001, 2001});
  write_dataset(d, dir / "loc.csv", dir / "rain.csv");
  const auto back = load_dataset(dir / "loc.csv", dir / "rain.csv");
  EXPECT_EQ(back.rain(), d.rain());
  EXPECT_EQ(back.coords(), d.coords());
  EXPECT_EQ(back.year_of_day(), d.year_of_day());
}

TEST(Load, FullScaleDimensions) {
  const auto dir = testutil::temp_dir("full_scale");
  std::mt19937_64 rng(11);
  const int S = 357, T = 976;
  std::vector<GridCoord> coords;
  for (int s = 0; s < S; ++s) coords.push_back({s % 21, s / 21});
  std::vector<int> years;
  for (int t = 0; t < T; ++t) years.push_back(2000 + t / 122);
  const auto d = RainfallDataset::create(testutil::random_rain(S, T, rng), coords, years);
  write_dataset(d, dir / "loc.csv", dir / "rain.csv");
  const auto back = load_dataset(dir / "loc.csv", dir / "rain.csv");
  EXPECT_EQ(back.num_locations(), 357);
  EXPECT_EQ(back.num_days(), 976);
  EXPECT_EQ(back.num_years(), 8);
}

TEST(Load, MalformedRowReportsLine) {
  const auto dir = testutil::temp_dir("malformed");
  write_text(dir / "loc.csv", "loc_id,grid_x,grid_y\n0,0,0\n1,1,0\n");
  write_text(dir / "rain.csv", "loc_id,day_index,year,rain_mm\n0,0,2000,1.5\n1,0,2000,abc\n");
  try {
    load_dataset(dir / "loc.csv", dir / "rain.csv");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Load, DuplicateCoordinateIsValidationError) {
  const auto dir = testutil::temp_dir("dupcoord");
  write_text(dir / "loc.csv", "loc_id,grid_x,grid_y\n0,0,0\n1,0,0\n");
  write_text(dir / "rain.csv", "loc_id,day_index,year,rain_mm\n0,0,2000,1\n1,0,2000,1\n");
  EXPECT_THROW(load_dataset(dir / "loc.csv", dir / "rain.csv"), ValidationError);
}

TEST(Load, NegativeRainfallIsValidationError) {
  const auto dir = testutil::temp_dir("negrain");
  write_text(dir / "loc.csv", "loc_id,grid_x,grid_y\n0,0,0\n");
  write_text(dir / "rain.csv", "loc_id,day_index,year,rain_mm\n0,0,2000,-1\n");
  EXPECT_THROW(load_dataset(dir / "loc.csv", dir / "rain.csv"), ValidationError);
}

TEST(Load, MissingRowIsValidationError) {
  const auto dir = testutil::temp_dir("missingrow");
  write_text(dir / "loc.csv", "loc_id,grid_x,grid_y\n0,0,0\n1,1,0\n");
  write_text(dir / "rain.csv", "loc_id,day_index,year,rain_mm\n0,0,2000,1\n0,1,2000,1\n1,0,2000,1\n");
  EXPECT_THROW(load_dataset(dir / "loc.csv", dir / "rain.csv"), ValidationError);
}

TEST(Load, MissingFileIsIoError) {
  EXPECT_THROW(load_dataset("/nonexistent/loc.csv", "/nonexistent/rain.csv"), IoError);
}

TEST(Weights, PearsonHandCase) {
  Vector a(3), b(3);
  a << 1, 2, 3;
  b << 2, 2, 4;
  // Deviations (-1,0,1) and (-2/3,-2/3,4/3): r = 2 / sqrt(2 * 24/9).
  EXPECT_NEAR(pearson(a, b), 2.0 / std::sqrt(2.0 * 24.0 / 9.0), 1e-12);
  EXPECT_NEAR(pearson(a, b), 0.866, 1e-3);
}

TEST(Weights, PerfectAndZeroVariance) {
  Matrix m(3, 4);
  m << 1, 3, 2, 5,   //
      1, 3, 2, 5,    //
      0, 0, 0, 0;
  Matrix anti = m;
  anti.row(1) = -m.row(0).array() + 10.0;
  const auto d = testutil::grid_dataset(3, 1, m);
  const auto w = compute_spatial_weights(d);
  EXPECT_DOUBLE_EQ(w.weight(d, 0, 1), 1.0);
  EXPECT_DOUBLE_EQ(w.weight(d, 1, 2), 0.0);
  const auto da = testutil::grid_dataset(3, 1, anti);
  EXPECT_DOUBLE_EQ(compute_spatial_weights(da).weight(da, 0, 1), -1.0);
}

TEST(Weights, SymmetricAndBounded) {
  std::mt19937_64 rng(5);
  const auto d = testutil::grid_dataset(5, 4, testutil::random_rain(20, 30, rng));
  const auto w = compute_spatial_weights(d);
  for (int s = 0; s < 20; ++s)
    for (int n : d.neighbors(s)) {
      EXPECT_EQ(w.weight(d, s, n), w.weight(d, n, s));
      EXPECT_GE(w.weight(d, s, n), -1.0);
      EXPECT_LE(w.weight(d, s, n), 1.0);
      EXPECT_NEAR(w.weight(d, s, n), naive_pearson(d.rain(), s, n), 1e-10);
    }
}

TEST(Weights, NeedTwoDays) {
  EXPECT_THROW(compute_spatial_weights(testutil::grid_dataset(1, 1, Matrix::Ones(1, 1))), ValidationError);
}

TEST(Discretize, ExamplesByMean) {
  Matrix m(3, 3);
  m << 0, 0, 0,  //
      0, 10, 5,  //
      4, 4, 10;
  const auto z = discretize_by_mean(testutil::grid_dataset(3, 1, m));
  EXPECT_EQ(z(0, 0), kLow);
  EXPECT_EQ(z(0, 1), kLow);
  // (0, 10, 5): mean 5, the tie stays low.
  EXPECT_EQ(z(1, 0), kLow);
  EXPECT_EQ(z(1, 1), kHigh);
  EXPECT_EQ(z(1, 2), kLow);
  EXPECT_EQ(z(2, 0), kLow);
  EXPECT_EQ(z(2, 1), kLow);
  EXPECT_EQ(z(2, 2), kHigh);
}

TEST(Discretize, NonConstantSeriesHasAHighCell) {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 50; ++rep) {
    const auto d = testutil::grid_dataset(3, 3, testutil::random_rain(9, 7, rng));
    const auto z = discretize_by_mean(d);
    for (int s = 0; s < 9; ++s) {
      const bool constant = (d.rain().row(s).array() == d.rain()(s, 0)).all();
      if (!constant) {
        EXPECT_GT((z.row(s).array() == kHigh).count(), 0);
      }
    }
  }
}

TEST(Discretize, PooledSplitSeparatesTwoScales) {
  Matrix m(2, 6);
  m << 0.0, 0.2, 0.1, 30, 40, 25,  //
      0.3, 0.0, 50, 20, 0.1, 35;
  const auto d = testutil::grid_dataset(2, 1, m);
  const double cut = pooled_log_split(d);
  EXPECT_GT(cut, 0.3);
  EXPECT_LT(cut, 20.0);
  const auto z = discretize_by_pooled_split(d);
  for (Eigen::Index i = 0; i < m.size(); ++i) EXPECT_EQ(z.data()[i], m.data()[i] > 1.0 ? kHigh : kLow);
}

TEST(Synthetic, NoiseFreeSinglePattern) {
  SyntheticSpec spec;
  spec.num_locations = 25;
  spec.num_days = 40;
  spec.num_patterns = 1;
  spec.noise = 0.0;
  const auto syn = generate_synthetic(spec);
  for (Eigen::Index t = 0; t < 40; ++t) EXPECT_EQ(syn.truth.z.col(t), syn.planted.col(0));
  EXPECT_TRUE(std::all_of(syn.truth.u.begin(), syn.truth.u.end(), [](int u) { return u == 1; }));
}

TEST(Synthetic, Deterministic) {
  SyntheticSpec spec;
  spec.seed = 42;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  EXPECT_EQ(a.data.rain(), b.data.rain());
  EXPECT_EQ(a.truth, b.truth);
  spec.seed = 43;
  EXPECT_NE(generate_synthetic(spec).data.rain(), a.data.rain());
}

TEST(Synthetic, FlipRateMatchesNoise) {
  SyntheticSpec spec;
  spec.num_locations = 64;
  spec.num_days = 300;
  spec.num_patterns = 3;
  spec.noise = 0.1;
  spec.seed = 3;
  const auto syn = generate_synthetic(spec);
  long long flips = 0;
  for (Eigen::Index t = 0; t < 300; ++t)
    flips += (syn.truth.z.col(t).array() != syn.planted.col(syn.truth.u[static_cast<std::size_t>(t)] - 1).array()).count();
  EXPECT_NEAR(static_cast<double>(flips) / (64.0 * 300.0), 0.1, 0.02);
}

TEST(Synthetic, LabelsDenseAndTruthValid) {
  SyntheticSpec spec;
  spec.num_patterns = 5;
  spec.num_series = 3;
  const auto syn = generate_synthetic(spec);
  EXPECT_NO_THROW(syn.truth.validate(spec.num_locations, spec.num_days));
  EXPECT_EQ(syn.truth.num_day_clusters(), 5);
  EXPECT_EQ(syn.truth.num_location_clusters(), 3);
  EXPECT_EQ(syn.data.num_years(), spec.num_years);
}

TEST(Synthetic, RejectsBadSpec) {
  SyntheticSpec spec;
  spec.noise = 0.5;
  EXPECT_THROW(generate_synthetic(spec), ValidationError);
  spec.noise = 0.1;
  spec.num_patterns = 0;
  EXPECT_THROW(generate_synthetic(spec), ValidationError);
}

TEST(Discretize, TwoDaySeries) {
  Matrix m(1, 2);
  m << 0, 10;
  const auto z = discretize_by_mean(testutil::grid_dataset(1, 1, m));
  EXPECT_EQ(z(0, 0), kLow);
  EXPECT_EQ(z(0, 1), kHigh);
}
