#include "jepa/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace jepa {

std::vector<LossRecord> collect_losses(const ModelConfig& mcfg, const ModelState& model, const PipelineConfig& pcfg,
                                       const std::vector<RawImage>& images, int num_draws, std::uint64_t seed) {
  std::vector<LossRecord> records;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (int d = 0; d < num_draws; ++d) {
      Rng rng(seed, {tag(Stream::kLossDraw), i, static_cast<std::uint64_t>(d)});
      PatchedSample s = sample_pipeline(images[i], pcfg, rng, 1);
      const int rows = s.grid_rows;
      const int cols = s.grid_cols;
      PackerConfig one{1, static_cast<int>(s.context_size()), static_cast<int>(s.target_size())};
      std::vector<PatchedSample> q;
      q.push_back(std::move(s));
      const PackedBatch batch = pack(std::move(q), one).batch;
      Rng unused(seed);
      const auto plan = plan_predictor_rows(batch, 1, 0.0, unused);
      const LossOutput out = jepa_loss(mcfg, model, batch, plan);
      for (Index k = 0; k < out.token_losses.size(); ++k) {
        records.push_back({1, i, static_cast<std::uint64_t>(d), rows, cols, out.token_pos[static_cast<std::size_t>(k)],
                           out.token_losses(k)});
      }
    }
  }
  return records;
}

LossMap::LossMap(int r, int c) : rows(r), cols(c), sum(Mat::Zero(r, c)), count(decltype(count)::Zero(r, c)) {}

LossMap LossMap::from_values(const Mat& values) {
  LossMap m(static_cast<int>(values.rows()), static_cast<int>(values.cols()));
  m.sum = values;
  m.count.setOnes();
  return m;
}

void LossMap::add(Pos p, double loss) {
  if (p.row < 0 || p.row >= rows || p.col < 0 || p.col >= cols) {
    throw ContractViolation("loss record position outside the map grid");
  }
  sum(p.row, p.col) += loss;
  count(p.row, p.col) += 1;
}

void LossMap::merge(const LossMap& other) {
  if (other.rows != rows || other.cols != cols) throw ContractViolation("cannot merge loss maps of different grids");
  sum += other.sum;
  count += other.count;
}

Mat LossMap::mean() const {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      m(r, c) = count(r, c) > 0 ? sum(r, c) / static_cast<double>(count(r, c)) : std::numeric_limits<double>::quiet_NaN();
    }
  }
  return m;
}

bool LossMap::has_empty_cells() const { return (count.array() == 0).any(); }

LossMap build_loss_map(const std::vector<LossRecord>& records, int rows, int cols) {
  LossMap map(rows, cols);
  for (const auto& r : records) map.add(r.position, r.loss);
  return map;
}

LossMap resample_map(const LossMap& map, int rows, int cols) {
  if (map.has_empty_cells()) throw ContractViolation("cannot resample a loss map with empty cells");
  const Mat src = map.mean();
  Mat out(rows, cols);
  auto tap = [](int i, int in, int out_n) {
    double s = (i + 0.5) * in / out_n - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(s));
    return std::tuple{lo, std::min(lo + 1, in - 1), s - lo};
  };
  for (int r = 0; r < rows; ++r) {
    const auto [r0, r1, fr] = tap(r, map.rows, rows);
    for (int c = 0; c < cols; ++c) {
      const auto [c0, c1, fc] = tap(c, map.cols, cols);
      const double top = src(r0, c0) * (1 - fc) + src(r0, c1) * fc;
      const double bot = src(r1, c0) * (1 - fc) + src(r1, c1) * fc;
      out(r, c) = top * (1 - fr) + bot * fr;
    }
  }
  return LossMap::from_values(out);
}

LossMap mean_canonical_map(const std::vector<LossRecord>& records, int rows, int cols) {
  std::map<std::size_t, std::vector<LossRecord>> by_image;
  for (const auto& r : records) by_image[r.image_index].push_back(r);
  LossMap total(rows, cols);
  for (const auto& [img, recs] : by_image) {
    // images may have been drawn at several resolutions; keep the grid shape
    // of each draw separate before resampling
    std::map<std::pair<int, int>, std::vector<LossRecord>> by_grid;
    for (const auto& r : recs) by_grid[{r.grid_rows, r.grid_cols}].push_back(r);
    for (const auto& [grid, rs] : by_grid) {
      const LossMap m = build_loss_map(rs, grid.first, grid.second);
      if (m.has_empty_cells()) continue;
      total.merge(resample_map(m, rows, cols));
    }
  }
  return total;
}

double checkerboard_score(const LossMap& map) {
  const Mat m = map.mean();
  double even = 0, odd = 0, all = 0;
  std::int64_t ne = 0, no = 0;
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      if (map.count(r, c) == 0) continue;
      ((r + c) % 2 == 0 ? even : odd) += m(r, c);
      ++((r + c) % 2 == 0 ? ne : no);
      all += m(r, c);
    }
  }
  if (ne == 0 || no == 0) throw ContractViolation("checkerboard score needs non-empty cells of both parities");
  const double mu = all / static_cast<double>(ne + no);
  double var = 0;
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      if (map.count(r, c) > 0) var += (m(r, c) - mu) * (m(r, c) - mu);
    }
  }
  const double sd = std::sqrt(var / static_cast<double>(ne + no));
  if (!(sd > 0.0)) return 0.0;
  return std::abs(even / static_cast<double>(ne) - odd / static_cast<double>(no)) / sd;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw ContractViolation("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

TailStats tail_stats(std::vector<double> losses) {
  if (losses.size() < 1000) throw ContractViolation("tail_stats needs at least 1000 values");
  std::sort(losses.begin(), losses.end());
  TailStats t;
  if (losses.front() == losses.back()) {
    t.degenerate = true;
    return t;
  }
  const double q50 = quantile_sorted(losses, 0.5);
  const double q99 = quantile_sorted(losses, 0.99);
  const auto n = static_cast<double>(losses.size());
  const double mean = std::accumulate(losses.begin(), losses.end(), 0.0) / n;
  double m2 = 0, m4 = 0;
  for (double v : losses) {
    const double d2 = (v - mean) * (v - mean);
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= n;
  m4 /= n;
  t.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  if (q50 > 0.0) {
    t.quantile_ratio = q99 / q50;
  } else {
    t.degenerate = true;
  }
  return t;
}

double rankme(const Mat& features) {
  if (features.size() == 0 || features.isZero(0.0)) throw ContractViolation("rankme of an all-zero feature matrix");
  const Eigen::MatrixXd dense = features;
  const Eigen::BDCSVD<Eigen::MatrixXd> svd(dense);
  const Vec sigma = svd.singularValues();
  const double total = sigma.sum();
  double entropy = 0.0;
  for (Index k = 0; k < sigma.size(); ++k) {
    const double p = sigma(k) / total;
    if (p >= kRankMeEps) entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

namespace {

struct Standardizer {
  Vec mean;
  Vec inv_std;
  Standardizer(const Mat& x, bool enabled) {
    const auto n = static_cast<double>(x.rows());
    mean = enabled ? Vec(x.colwise().mean().transpose()) : Vec::Zero(x.cols());
    inv_std = Vec::Ones(x.cols());
    if (!enabled) return;
    for (Index j = 0; j < x.cols(); ++j) {
      const double var = (x.col(j).array() - mean(j)).square().sum() / n;
      inv_std(j) = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
    }
  }
  Mat apply(const Mat& x) const { return (x.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array(); }
};

}  // namespace

double probe_accuracy(const Mat& train_x, const std::vector<int>& train_y, const Mat& test_x,
                      const std::vector<int>& test_y, int num_classes, const ProbeConfig& cfg) {
  if (train_x.rows() != static_cast<Index>(train_y.size()) || test_x.rows() != static_cast<Index>(test_y.size())) {
    throw ContractViolation("probe feature and label counts differ");
  }
  if (train_x.cols() != test_x.cols()) throw ContractViolation("probe train/test feature widths differ");
  if (num_classes < 2) throw ContractViolation("probe needs at least two classes");
  for (int y : train_y) {
    if (y < 0 || y >= num_classes) throw ContractViolation("probe label out of range");
  }
  const Standardizer std_(train_x, cfg.standardize);
  const Mat xtr = std_.apply(train_x);
  const Mat xte = std_.apply(test_x);
  const Index d = xtr.cols();
  Mat w = Mat::Zero(d, num_classes);
  Vec b = Vec::Zero(num_classes);
  Mat mw = Mat::Zero(d, num_classes), vw = Mat::Zero(d, num_classes);
  Vec mb = Vec::Zero(num_classes), vb = Vec::Zero(num_classes);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::int64_t t = 0;

  Rng rng(cfg.seed, {tag(Stream::kProbe), 1});
  std::vector<Index> order(static_cast<std::size_t>(xtr.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  const auto batch = static_cast<std::size_t>(std::max(cfg.batch, 1));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::vector<Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch)));
      const Mat xb = xtr(idx, Eigen::all);
      Mat logits = xb * w;
      logits.rowwise() += b.transpose();
      for (Index i = 0; i < logits.rows(); ++i) {
        logits.row(i).array() -= logits.row(i).maxCoeff();
        logits.row(i) = logits.row(i).array().exp();
        logits.row(i) /= logits.row(i).sum();
        logits(i, train_y[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]) -= 1.0;
      }
      logits /= static_cast<double>(idx.size());
      const Mat gw = xb.transpose() * logits;
      const Vec gb = logits.colwise().sum().transpose();
      ++t;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
      mw = b1 * mw + (1 - b1) * gw;
      vw = b2 * vw + (1 - b2) * gw.cwiseProduct(gw);
      mb = b1 * mb + (1 - b1) * gb;
      vb = b2 * vb + (1 - b2) * gb.cwiseProduct(gb);
      w.array() -= cfg.lr * (mw.array() / c1) / ((vw.array() / c2).sqrt() + eps);
      b.array() -= cfg.lr * (mb.array() / c1) / ((vb.array() / c2).sqrt() + eps);
    }
  }
  if (test_y.empty()) return 0.0;
  Mat logits = xte * w;
  logits.rowwise() += b.transpose();
  std::size_t correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    correct += arg == test_y[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(correct) / static_cast<double>(test_y.size());
}

std::vector<ProbeResult> linear_probe(const std::vector<Mat>& layer_features, const std::vector<int>& labels,
                                      const ProbeConfig& cfg) {
  if (!(cfg.holdout > 0.0 && cfg.holdout < 1.0)) throw ContractViolation("probe holdout must lie in (0, 1)");
  std::vector<Index> order(labels.size());
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(cfg.seed, {tag(Stream::kProbe), 0});
  rng.shuffle(std::span(order));
  const auto n_test = static_cast<std::size_t>(std::lround(cfg.holdout * static_cast<double>(labels.size())));
  const std::vector<Index> test_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  const std::vector<Index> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::vector<int> ytr, yte;
  for (Index i : train_idx) ytr.push_back(labels[static_cast<std::size_t>(i)]);
  for (Index i : test_idx) yte.push_back(labels[static_cast<std::size_t>(i)]);
  const int classes = *std::max_element(labels.begin(), labels.end()) + 1;

  std::vector<ProbeResult> results;
  for (std::size_t l = 0; l < layer_features.size(); ++l) {
    const Mat& f = layer_features[l];
    if (f.rows() != static_cast<Index>(labels.size())) {
      throw ContractViolation("layer " + std::to_string(l) + " has " + std::to_string(f.rows()) + " rows for " +
                              std::to_string(labels.size()) + " labels");
    }
    results.push_back({static_cast<int>(l),
                       probe_accuracy(f(train_idx, Eigen::all), ytr, f(test_idx, Eigen::all), yte, classes, cfg)});
  }
  return results;
}

std::size_t best_layer(const std::vector<ProbeResult>& results) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < results.size(); ++i) {
    if (results[i].accuracy > results[best].accuracy) best = i;
  }
  return best;
}

std::vector<Mat> encode_hidden(const EncoderParams& enc, const ModelConfig& mcfg, const RawImage& image) {
  const PatchGrid grid = patchify(image, mcfg.patch_size);
  const std::vector<SampleId> ids(grid.positions.size(), 1);
  std::vector<Mat> hidden;
  encoder_forward(enc, mcfg, grid.tokens, grid.positions, build_mask(ids), nullptr, &hidden);
  return hidden;
}

std::vector<Mat> mean_pooled_features(const EncoderParams& enc, const ModelConfig& mcfg,
                                      const std::vector<RawImage>& images, int resolution) {
  std::vector<Mat> out(static_cast<std::size_t>(mcfg.layers + 1),
                       Mat::Zero(static_cast<Index>(images.size()), mcfg.hidden_dim));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const RawImage img = resize_bilinear(center_crop_square(images[i]), resolution, resolution);
    const auto hidden = encode_hidden(enc, mcfg, img);
    for (std::size_t l = 0; l < hidden.size(); ++l) out[l].row(static_cast<Index>(i)) = hidden[l].colwise().mean();
  }
  return out;
}

namespace {

Mat gaussian_blur_grid(const Mat& features, int rows, int cols, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double ks = 0;
  for (int i = -radius; i <= radius; ++i) ks += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= ks;
  auto idx = [cols](int r, int c) { return static_cast<Index>(r) * cols + c; };
  Mat tmp = Mat::Zero(features.rows(), features.cols());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      for (int o = -radius; o <= radius; ++o) {
        const int cc = std::clamp(c + o, 0, cols - 1);
        tmp.row(idx(r, c)) += k[static_cast<std::size_t>(o + radius)] * features.row(idx(r, cc));
      }
    }
  }
  Mat out = Mat::Zero(features.rows(), features.cols());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      for (int o = -radius; o <= radius; ++o) {
        const int rr = std::clamp(r + o, 0, rows - 1);
        out.row(idx(r, c)) += k[static_cast<std::size_t>(o + radius)] * tmp.row(idx(rr, c));
      }
    }
  }
  return out;
}

constexpr double kHueSpan = 0.8;

}  // namespace

Visualization pca_visualize(const Mat& features, int grid_rows, int grid_cols, int out_h, int out_w) {
  if (grid_rows < 2 || grid_cols < 2) throw ContractViolation("pca_visualize needs at least a 2x2 grid");
  if (features.rows() != static_cast<Index>(grid_rows) * grid_cols) {
    throw ContractViolation("feature rows do not match the grid");
  }
  const Mat blurred = gaussian_blur_grid(features, grid_rows, grid_cols, 1.0);
  const Mat centered = blurred.rowwise() - blurred.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(centered.rows());

  Visualization vis;
  const double total_var = cov.trace();
  if (!(total_var > 1e-20)) {
    vis.degenerate = true;
    vis.image = RawImage(out_h, out_w, 3);
    std::fill(vis.image.pixels.begin(), vis.image.pixels.end(), std::uint8_t{128});
    return vis;
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Index d = cov.rows();
  Mat comps = Mat::Zero(centered.rows(), 3);
  for (Index k = 0; k < std::min<Index>(3, d); ++k) {
    Vec v = eig.eigenvectors().col(d - 1 - k);
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    comps.col(k) = centered * v;
  }
  RawImage small(grid_rows, grid_cols, 3);
  std::array<double, 3> lo{}, span{};
  for (Index k = 0; k < 3; ++k) {
    lo[static_cast<std::size_t>(k)] = comps.col(k).minCoeff();
    span[static_cast<std::size_t>(k)] = comps.col(k).maxCoeff() - lo[static_cast<std::size_t>(k)];
  }
  for (int r = 0; r < grid_rows; ++r) {
    for (int c = 0; c < grid_cols; ++c) {
      std::array<double, 3> hsv{};
      for (std::size_t k = 0; k < 3; ++k) {
        const double v = comps(static_cast<Index>(r) * grid_cols + c, static_cast<Index>(k));
        hsv[k] = span[k] > 1e-12 ? (v - lo[k]) / span[k] : 0.5;
      }
      const auto rgb = hsv_to_rgb(kHueSpan * hsv[0], hsv[1], hsv[2]);
      for (int ch = 0; ch < 3; ++ch) {
        small.at(r, c, ch) = static_cast<std::uint8_t>(std::clamp(std::round(255.0 * rgb[static_cast<std::size_t>(ch)]), 0.0, 255.0));
      }
    }
  }
  vis.image = resize_bilinear(small, out_h, out_w);
  return vis;
}

RawImage render_heatmap(const LossMap& map, int cell_px) {
  const Mat m = map.mean();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Index i = 0; i < m.size(); ++i) {
    if (std::isfinite(m.data()[i])) {
      lo = std::min(lo, m.data()[i]);
      hi = std::max(hi, m.data()[i]);
    }
  }
  RawImage img(map.rows * cell_px, map.cols * cell_px, 3);
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      std::array<double, 3> rgb{0.5, 0.5, 0.5};
      if (std::isfinite(m(r, c))) {
        const double t = hi > lo ? (m(r, c) - lo) / (hi - lo) : 0.0;
        rgb = {std::clamp(3 * t, 0.0, 1.0), std::clamp(3 * t - 1, 0.0, 1.0), std::clamp(3 * t - 2, 0.0, 1.0)};
      }
      for (int y = 0; y < cell_px; ++y) {
        for (int x = 0; x < cell_px; ++x) {
          for (int ch = 0; ch < 3; ++ch) {
            img.at(r * cell_px + y, c * cell_px + x, ch) =
                static_cast<std::uint8_t>(std::round(255.0 * rgb[static_cast<std::size_t>(ch)]));
          }
        }
      }
    }
  }
  return img;
}

}  // namespace jepa
