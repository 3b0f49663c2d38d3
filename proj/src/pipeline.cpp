#include "jepa/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace jepa {

void PipelineConfig::validate() const {
  if (patch_size < 1) throw ConfigError("pipeline.patch_size must be >= 1");
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi && scale_hi <= 1.0)) {
    throw ConfigError("pipeline scale range must satisfy 0 < lo <= hi <= 1");
  }
  if (!(capacity_lo > 0.0 && capacity_lo <= capacity_hi && capacity_hi < 1.0)) {
    throw ConfigError("pipeline capacity range must satisfy 0 < lo <= hi < 1");
  }
  if (min_side < patch_size) throw ConfigError("pipeline.min_side must be >= patch_size");
  if (window_size < 1) throw ConfigError("pipeline.window_size must be >= 1");
}

int scaled_side(int original, double s, const PipelineConfig& cfg) {
  const int p = cfg.patch_size;
  const int floor_side = std::max((cfg.min_side + p - 1) / p * p, p);
  double v = std::max(s * original, static_cast<double>(floor_side));
  v = std::min(v, static_cast<double>(original));
  return static_cast<int>(std::floor(v / p)) * p;
}

RawImage scale_image(const RawImage& img, double s, const PipelineConfig& cfg) {
  img.validate();
  if (!(s >= cfg.scale_lo && s <= cfg.scale_hi)) {
    throw ContractViolation("scale factor " + std::to_string(s) + " outside configured range");
  }
  const int h = scaled_side(img.height, s, cfg);
  const int w = scaled_side(img.width, s, cfg);
  if (h < cfg.patch_size || w < cfg.patch_size) {
    throw RejectedSample("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " is smaller than one patch after scaling");
  }
  return resize_bilinear(img, h, w);
}

PatchGrid patchify(const RawImage& img, int patch_size) {
  img.validate();
  const int p = patch_size;
  if (p < 1 || img.height % p != 0 || img.width % p != 0) {
    throw ContractViolation("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                            " is not divisible by patch size " + std::to_string(p));
  }
  PatchGrid grid;
  grid.rows = img.height / p;
  grid.cols = img.width / p;
  const int d_in = p * p * img.channels;
  grid.tokens.resize(static_cast<Index>(grid.rows) * grid.cols, d_in);
  grid.positions.reserve(static_cast<std::size_t>(grid.rows) * grid.cols);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const Index k = static_cast<Index>(r) * grid.cols + c;
      Index j = 0;
      for (int py = 0; py < p; ++py) {
        for (int px = 0; px < p; ++px) {
          for (int ch = 0; ch < img.channels; ++ch) {
            grid.tokens(k, j++) = pixel_to_unit(img.at(r * p + py, c * p + px, ch));
          }
        }
      }
      grid.positions.push_back({r, c});
    }
  }
  return grid;
}

RawImage unpatchify(const PatchGrid& grid, int patch_size, int channels) {
  const int p = patch_size;
  RawImage img(grid.rows * p, grid.cols * p, channels);
  for (Index k = 0; k < grid.tokens.rows(); ++k) {
    const Pos pos = grid.positions[static_cast<std::size_t>(k)];
    Index j = 0;
    for (int py = 0; py < p; ++py) {
      for (int px = 0; px < p; ++px) {
        for (int ch = 0; ch < channels; ++ch) {
          const double v = std::round((grid.tokens(k, j++) + 1.0) * 255.0 / 2.0);
          img.at(pos.row * p + py, pos.col * p + px, ch) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
      }
    }
  }
  return img;
}

int context_window_count(int total_windows, double c) {
  const long k = std::lround(total_windows * c);
  return static_cast<int>(std::clamp<long>(k, 1, total_windows - 1));
}

namespace {

PatchedSample split(const PatchGrid& grid, const std::vector<char>& is_context, SampleId id) {
  PatchedSample out;
  out.id = id;
  out.grid_rows = grid.rows;
  out.grid_cols = grid.cols;
  std::vector<Index> ctx, tgt;
  for (Index k = 0; k < grid.tokens.rows(); ++k) (is_context[static_cast<std::size_t>(k)] ? ctx : tgt).push_back(k);
  out.context = grid.tokens(ctx, Eigen::all);
  out.target = grid.tokens(tgt, Eigen::all);
  for (Index k : ctx) out.context_pos.push_back(grid.positions[static_cast<std::size_t>(k)]);
  for (Index k : tgt) out.target_pos.push_back(grid.positions[static_cast<std::size_t>(k)]);
  return out;
}

}  // namespace

PatchedSample partition_windows(const PatchGrid& grid, double c, int window, Rng& rng, SampleId id) {
  if (!(c > 0.0 && c < 1.0)) throw ContractViolation("context capacity must lie in (0, 1)");
  if (window < 1) throw ContractViolation("window size must be >= 1");
  const int total_patches = grid.rows * grid.cols;
  if (total_patches < 2) throw RejectedSample("a single-patch grid cannot be split into context and target");

  std::vector<char> is_context(static_cast<std::size_t>(total_patches), 0);
  const int win_rows = (grid.rows + window - 1) / window;
  const int win_cols = (grid.cols + window - 1) / window;
  const int total_windows = win_rows * win_cols;

  if (total_windows < 2) {
    const int n = context_window_count(total_patches, c);
    for (std::size_t k : rng.choose(static_cast<std::size_t>(total_patches), static_cast<std::size_t>(n))) {
      is_context[k] = 1;
    }
    return split(grid, is_context, id);
  }

  const int k = context_window_count(total_windows, c);
  for (std::size_t w : rng.choose(static_cast<std::size_t>(total_windows), static_cast<std::size_t>(k))) {
    const int wr = static_cast<int>(w) / win_cols;
    const int wc = static_cast<int>(w) % win_cols;
    for (int r = wr * window; r < std::min((wr + 1) * window, grid.rows); ++r) {
      for (int col = wc * window; col < std::min((wc + 1) * window, grid.cols); ++col) {
        is_context[static_cast<std::size_t>(r) * grid.cols + col] = 1;
      }
    }
  }
  return split(grid, is_context, id);
}

PatchedSample sample_pipeline(const RawImage& img, const PipelineConfig& cfg, Rng& rng, SampleId id) {
  const double s = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  const double c = rng.uniform(cfg.capacity_lo, cfg.capacity_hi);
  const RawImage scaled = scale_image(img, s, cfg);
  return partition_windows(patchify(scaled, cfg.patch_size), c, cfg.window_size, rng, id);
}

}  // namespace jepa
