#pragma once

#include <vector>

#include "jepa/image.hpp"
#include "jepa/rng.hpp"
#include "jepa/types.hpp"

namespace jepa {

struct PipelineConfig {
  int patch_size = 16;
  int min_side = 64;
  double scale_lo = 0.1;
  double scale_hi = 1.0;
  double capacity_lo = 0.25;
  double capacity_hi = 0.5;
  /// Masking unit, in patches per side.
  int window_size = 2;

  void validate() const;
};

/// Image cut into non-overlapping patches; token k sits at positions[k].
struct PatchGrid {
  int rows = 0;
  int cols = 0;
  Mat tokens;  // (rows*cols) x (P*P*C), values in [-1, 1]
  std::vector<Pos> positions;
};

/// One image split into a visible context set and a target set.
struct PatchedSample {
  SampleId id = 1;
  int grid_rows = 0;
  int grid_cols = 0;
  Mat context;
  std::vector<Pos> context_pos;
  Mat target;
  std::vector<Pos> target_pos;

  Index context_size() const { return context.rows(); }
  Index target_size() const { return target.rows(); }
};

/// Side length produced by scale_image for one axis. Returns 0 when the
/// axis cannot hold a single patch.
int scaled_side(int original, double s, const PipelineConfig& cfg);

/// Resolution scaling: clamp s*side up to min_side (rounded up to a multiple
/// of P) without exceeding the original side, then round down to a multiple
/// of P. Throws RejectedSample when a side would drop below P.
RawImage scale_image(const RawImage& img, double s, const PipelineConfig& cfg);

/// Pixel bytes v map to 2*v/255 - 1.
PatchGrid patchify(const RawImage& img, int patch_size);

/// Inverse of patchify (bytes recovered by rounding).
RawImage unpatchify(const PatchGrid& grid, int patch_size, int channels = 3);

inline double pixel_to_unit(std::uint8_t v) { return 2.0 * v / 255.0 - 1.0; }

/// Number of context windows for a grid of total_windows windows.
int context_window_count(int total_windows, double c);

/// Window-granular context/target split. Edge windows are clipped to the
/// grid. Grids with fewer than two windows fall back to per-patch selection.
PatchedSample partition_windows(const PatchGrid& grid, double c, int window, Rng& rng, SampleId id = 1);

/// Draws s and c (in that order) from rng, then scale -> patchify -> partition.
PatchedSample sample_pipeline(const RawImage& img, const PipelineConfig& cfg, Rng& rng, SampleId id = 1);

}  // namespace jepa
