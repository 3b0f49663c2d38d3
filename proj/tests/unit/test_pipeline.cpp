#include <doctest.h>

#include <set>

#include "jepa/pipeline.hpp"

using namespace jepa;

namespace {

RawImage noise_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  RawImage img;
  img.height = h;
  img.width = w;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(h) * w * 3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

PatchGrid blank_grid(int rows, int cols) {
  PatchGrid g;
  g.rows = rows;
  g.cols = cols;
  g.tokens = Mat::Zero(rows * cols, 1);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      g.positions.push_back({r, c});
      g.tokens(r * cols + c, 0) = r * cols + c;
    }
  return g;
}

std::set<Pos> as_set(const std::vector<Pos>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("config validation") {
  PipelineConfig c;
  CHECK_NOTHROW(c.validate());
  c.scale_lo = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.capacity_hi = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.min_side = 8;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.window_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("scale_image resolution rules") {
  const PipelineConfig cfg;
  CHECK(scaled_side(256, 0.5, cfg) == 128);
  CHECK(scaled_side(256, 0.1, cfg) == 64);
  CHECK(scaled_side(250, 1.0, cfg) == 240);

  const RawImage out = scale_image(noise_image(256, 256, 1), 0.5, cfg);
  CHECK(out.height == 128);
  CHECK(out.width == 128);
  CHECK(scale_image(noise_image(250, 250, 1), 1.0, cfg).height == 240);
  CHECK(scale_image(noise_image(256, 200, 1), 0.1, cfg).width == 64);
}

TEST_CASE("scale_image rejects images below one patch") {
  const PipelineConfig cfg;
  CHECK_THROWS_AS(scale_image(noise_image(10, 300, 1), 1.0, cfg), RejectedSample);
  CHECK_THROWS_AS(scale_image(noise_image(64, 64, 1), 0.05, cfg), ContractViolation);
}

TEST_CASE("patchify layout and value mapping") {
  const RawImage img = noise_image(64, 64, 2);
  const PatchGrid g = patchify(img, 16);
  CHECK(g.rows == 4);
  CHECK(g.cols == 4);
  CHECK(g.tokens.rows() == 16);
  CHECK(g.tokens.cols() == 768);
  for (int k = 0; k < 16; ++k) CHECK(g.positions[static_cast<std::size_t>(k)] == Pos{k / 4, k % 4});
  // Token 5 is the block at patch (1, 1); entry (py, px, c) = (2, 3, 1).
  CHECK(g.tokens(5, (2 * 16 + 3) * 3 + 1) == pixel_to_unit(img.at(16 + 2, 16 + 3, 1)));
  CHECK(pixel_to_unit(0) == -1.0);
  CHECK(pixel_to_unit(255) == 1.0);
  CHECK((g.tokens.array().abs() <= 1.0).all());
  CHECK_THROWS_AS(patchify(noise_image(64, 60, 2), 16), ContractViolation);
}

TEST_CASE("pixel normalization is invertible") {
  for (int v = 0; v < 256; ++v) {
    const double u = pixel_to_unit(static_cast<std::uint8_t>(v));
    CHECK(std::lround((u + 1.0) * 255.0 / 2.0) == v);
  }
}

TEST_CASE("unpatchify reassembles the image exactly") {
  const RawImage img = noise_image(48, 32, 3);
  CHECK(unpatchify(patchify(img, 16), 16).pixels == img.pixels);
}

TEST_CASE("window partition examples") {
  Rng rng(1);
  const PatchedSample a = partition_windows(blank_grid(4, 4), 0.25, 2, rng);
  CHECK(a.context.rows() == 4);
  CHECK(a.target.rows() == 12);
  const PatchedSample b = partition_windows(blank_grid(4, 4), 0.5, 2, rng);
  CHECK(b.context.rows() == 8);
  CHECK(b.target.rows() == 8);
}

TEST_CASE("5x5 grid with window 2 tiles into the nine hand-enumerated windows") {
  // Row-major windows; the last row and column are clipped.
  std::vector<std::set<Pos>> windows;
  for (auto [r0, r1] : {std::pair{0, 2}, {2, 4}, {4, 5}})
    for (auto [c0, c1] : {std::pair{0, 2}, {2, 4}, {4, 5}}) {
      std::set<Pos> w;
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) w.insert({r, c});
      windows.push_back(w);
    }
  std::size_t total = 0;
  for (const auto& w : windows) total += w.size();
  CHECK(windows.size() == 9);
  CHECK(total == 25);

  // c = 0.1 selects round(0.9) = 1 window; each draw must be exactly one of
  // the enumerated windows, and all nine must show up.
  std::set<std::size_t> hit;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    Rng rng(seed);
    const PatchedSample s = partition_windows(blank_grid(5, 5), 0.1, 2, rng);
    const auto ctx = as_set(s.context_pos);
    const auto it = std::find(windows.begin(), windows.end(), ctx);
    REQUIRE(it != windows.end());
    hit.insert(static_cast<std::size_t>(it - windows.begin()));
    CHECK(s.context.rows() + s.target.rows() == 25);
  }
  CHECK(hit.size() == 9);
}

TEST_CASE("partition is exact for every seed and grid") {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    Rng rng(seed);
    const int rows = 1 + static_cast<int>(rng.below(7)), cols = 2 + static_cast<int>(rng.below(7));
    const int window = 1 + static_cast<int>(rng.below(3));
    const double c = rng.uniform(0.05, 0.95);
    const PatchedSample s = partition_windows(blank_grid(rows, cols), c, window, rng);
    REQUIRE(s.context.rows() >= 1);
    REQUIRE(s.target.rows() >= 1);
    auto ctx = as_set(s.context_pos), tgt = as_set(s.target_pos);
    CHECK(ctx.size() == s.context_pos.size());
    CHECK(tgt.size() == s.target_pos.size());
    for (const auto& p : ctx) CHECK(!tgt.contains(p));
    CHECK(ctx.size() + tgt.size() == static_cast<std::size_t>(rows * cols));
    // Tokens travel with their positions.
    for (std::size_t k = 0; k < s.context_pos.size(); ++k) {
      const Pos p = s.context_pos[k];
      CHECK(s.context(static_cast<Index>(k), 0) == p.row * cols + p.col);
    }
  }
}

TEST_CASE("divisible grids get exactly round(total_windows * c) * window^2 context patches") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const double c = rng.uniform(0.25, 0.5);
    const PatchedSample s = partition_windows(blank_grid(8, 6), c, 2, rng);
    CHECK(s.context.rows() == context_window_count(12, c) * 4);
  }
}

TEST_CASE("fallback to per-patch partitioning below two windows") {
  Rng rng(9);
  const PatchedSample s = partition_windows(blank_grid(2, 2), 0.3, 2, rng);
  CHECK(s.context.rows() == 1);
  CHECK(s.target.rows() == 3);
  CHECK_THROWS_AS(partition_windows(blank_grid(1, 1), 0.3, 2, rng), RejectedSample);
}

TEST_CASE("each window is chosen with frequency c") {
  std::vector<int> counts(4, 0);
  const int n = 10000;
  for (int seed = 0; seed < n; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    const PatchedSample s = partition_windows(blank_grid(4, 4), 0.25, 2, rng);
    const Pos p = s.context_pos.front();
    counts[static_cast<std::size_t>((p.row / 2) * 2 + p.col / 2)]++;
  }
  for (int c : counts) CHECK(std::abs(static_cast<double>(c) / n - 0.25) <= 0.02);
}

TEST_CASE("sample_pipeline is deterministic given the seed") {
  const RawImage img = noise_image(128, 96, 4);
  const PipelineConfig cfg;
  Rng a(77), b(77);
  const PatchedSample x = sample_pipeline(img, cfg, a, 3), y = sample_pipeline(img, cfg, b, 3);
  CHECK(x.context == y.context);
  CHECK(x.target == y.target);
  CHECK(x.context_pos == y.context_pos);
  CHECK(x.id == 3);
}

TEST_CASE("full scale range pins the grid") {
  PipelineConfig cfg;
  cfg.scale_lo = cfg.scale_hi = 1.0;
  const RawImage img = noise_image(256, 256, 5);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const PatchedSample s = sample_pipeline(img, cfg, rng);
    CHECK(s.grid_rows == 16);
    CHECK(s.grid_cols == 16);
  }
}

TEST_CASE("context fraction averages the capacity midpoint") {
  // 16x16 grid of 4-pixel patches with window 2: 64 windows, so the context
  // fraction tracks c to within 1/128.
  PipelineConfig cfg;
  cfg.patch_size = 4;
  cfg.min_side = 4;
  cfg.scale_lo = cfg.scale_hi = 1.0;
  const RawImage img = noise_image(64, 64, 6);
  double sum = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    Rng rng(static_cast<std::uint64_t>(i));
    const PatchedSample s = sample_pipeline(img, cfg, rng);
    sum += static_cast<double>(s.context.rows()) / 256.0;
  }
  CHECK(std::abs(sum / n - 0.375) < 0.01);
}
