#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "jepa/image.hpp"
#include "jepa/objective.hpp"
#include "jepa/pipeline.hpp"

namespace jepa {

struct LossRecord {
  SampleId sample_id = 0;
  std::size_t image_index = 0;
  std::uint64_t draw = 0;
  int grid_rows = 0;
  int grid_cols = 0;
  Pos position;
  double loss = 0.0;
};

/// Per-token prediction losses for num_draws fresh context/target partitions
/// of every image. Single-sample forward passes, no repetition or dropout,
/// no parameter updates. Draw d of image i uses RNG stream (seed, i, d).
std::vector<LossRecord> collect_losses(const ModelConfig& mcfg, const ModelState& model, const PipelineConfig& pcfg,
                                       const std::vector<RawImage>& images, int num_draws, std::uint64_t seed);

/// Per-position mean loss. Cells with count 0 are empty: their mean is NaN
/// and every score skips them.
struct LossMap {
  int rows = 0;
  int cols = 0;
  Mat sum;
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> count;

  LossMap() = default;
  LossMap(int rows, int cols);
  /// Dense map from per-cell values with count 1 everywhere.
  static LossMap from_values(const Mat& values);

  void add(Pos p, double loss);
  /// Commutative merge of two accumulators over the same grid.
  void merge(const LossMap& other);
  Mat mean() const;
  bool has_empty_cells() const;
};

/// Throws ContractViolation for records outside the grid.
LossMap build_loss_map(const std::vector<LossRecord>& records, int rows, int cols);

/// Bilinear resampling of a map's cell means onto another grid; the result
/// is dense with count 1 per cell. Throws if the source has empty cells.
LossMap resample_map(const LossMap& map, int rows, int cols);

/// Mean of per-image maps after resampling each onto a rows x cols grid.
LossMap mean_canonical_map(const std::vector<LossRecord>& records, int rows = 16, int cols = 16);

/// |mean(even cells) - mean(odd cells)| / population std over non-empty
/// cells, where parity is that of row+col. A map without spread scores 0.
double checkerboard_score(const LossMap& map);

struct TailStats {
  double quantile_ratio = 1.0;  // q99 / q50
  double excess_kurtosis = 0.0;
  bool degenerate = false;
};

/// Needs at least 1000 values. Quantiles use linear interpolation between
/// order statistics.
TailStats tail_stats(std::vector<double> losses);

double quantile_sorted(const std::vector<double>& sorted, double q);

inline constexpr double kRankMeEps = 1e-7;

/// Effective rank exp(H(p)) with p_k = sigma_k / sum(sigma). Components with
/// p_k below kRankMeEps count as zero. Throws ContractViolation for an
/// all-zero matrix.
double rankme(const Mat& features);

struct ProbeConfig {
  double lr = 1e-3;
  int epochs = 50;
  int batch = 256;
  double holdout = 0.2;
  bool standardize = true;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  int layer = 0;
  double accuracy = 0.0;
};

/// Softmax-regression probe trained with Adam on train rows, scored top-1 on
/// test rows.
double probe_accuracy(const Mat& train_x, const std::vector<int>& train_y, const Mat& test_x,
                      const std::vector<int>& test_y, int num_classes, const ProbeConfig& cfg);

/// One probe per layer on a seeded train/held-out split shared by all layers.
std::vector<ProbeResult> linear_probe(const std::vector<Mat>& layer_features, const std::vector<int>& labels,
                                      const ProbeConfig& cfg);
/// Index into results of the best layer.
std::size_t best_layer(const std::vector<ProbeResult>& results);

/// Encoder hidden states (layers+1 entries, no post-processing) for a whole
/// image at its current resolution.
std::vector<Mat> encode_hidden(const EncoderParams& enc, const ModelConfig& mcfg, const RawImage& image);

/// Square center crop, resize to resolution, encode, mean-pool every hidden
/// state. Returns layers+1 matrices of shape images x d.
std::vector<Mat> mean_pooled_features(const EncoderParams& enc, const ModelConfig& mcfg,
                                      const std::vector<RawImage>& images, int resolution);

struct Visualization {
  RawImage image;
  bool degenerate = false;
};

/// Gaussian blur (sigma = 1 cell) over the feature grid, top-3 principal
/// components (sign fixed so the largest-magnitude loading is positive),
/// min-max rescaling per component, components as (hue, saturation, value),
/// bilinear upscale to out_h x out_w. Hue spans 0.8 of the colour wheel so
/// the two extremes stay distinguishable.
Visualization pca_visualize(const Mat& features, int grid_rows, int grid_cols, int out_h, int out_w);

/// Colour-mapped heatmap (black-red-yellow-white) with cell_px pixels per
/// cell; empty cells are drawn gray.
RawImage render_heatmap(const LossMap& map, int cell_px);

}  // namespace jepa
