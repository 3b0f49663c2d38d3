#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "jepa/model.hpp"
#include "jepa/objective.hpp"
#include "jepa/packer.hpp"
#include "jepa/pipeline.hpp"
#include "jepa/rng.hpp"

namespace jepa::testing {

/// d=8, 2 layers, 2 heads, 2x2 RGB patches.
inline ModelConfig tiny_config(PostprocMode mode = PostprocMode::kLayerNorm) {
  ModelConfig c;
  c.hidden_dim = 8;
  c.layers = 2;
  c.heads = 2;
  c.patch_size = 2;
  c.channels = 3;
  c.mlp_ratio = 2.0;
  c.predictor_dim = 8;
  c.predictor_layers = 2;
  c.rope_base = 100.0;
  c.postproc = mode;
  return c;
}

/// A grid_rows x grid_cols sample with n random context cells and the rest
/// as targets. Token entries are uniform in [-1, 1].
inline PatchedSample random_sample(SampleId id, int grid_rows, int grid_cols, int n, Index token_dim, Rng& rng) {
  const int total = grid_rows * grid_cols;
  std::vector<int> cells(static_cast<std::size_t>(total));
  std::iota(cells.begin(), cells.end(), 0);
  rng.shuffle(std::span<int>(cells));
  std::sort(cells.begin(), cells.begin() + n);
  std::sort(cells.begin() + n, cells.end());
  PatchedSample s;
  s.id = id;
  s.grid_rows = grid_rows;
  s.grid_cols = grid_cols;
  s.context = Mat(n, token_dim);
  s.target = Mat(total - n, token_dim);
  for (int k = 0; k < total; ++k) {
    const int cell = cells[static_cast<std::size_t>(k)];
    const Pos p{cell / grid_cols, cell % grid_cols};
    Mat& dst = k < n ? s.context : s.target;
    const Index row = k < n ? k : k - n;
    for (Index j = 0; j < token_dim; ++j) dst(row, j) = rng.uniform(-1.0, 1.0);
    (k < n ? s.context_pos : s.target_pos).push_back(p);
  }
  return s;
}

/// Token-less sample with the given stream lengths.
inline PatchedSample sized_sample(SampleId id, int n, int m) {
  PatchedSample s;
  s.id = id;
  s.grid_rows = 1;
  s.grid_cols = n + m;
  s.context = Mat(n, 0);
  s.target = Mat(m, 0);
  for (int k = 0; k < n; ++k) s.context_pos.push_back({0, k});
  for (int k = 0; k < m; ++k) s.target_pos.push_back({0, n + k});
  return s;
}

/// Three samples on 3x3 and 2x3 grids packed into two rows.
inline PackedBatch three_sample_batch(const ModelConfig& cfg, Rng& rng) {
  const Index d_in = cfg.token_dim();
  std::vector<PatchedSample> q;
  q.push_back(random_sample(1, 3, 3, 3, d_in, rng));
  q.push_back(random_sample(2, 2, 3, 2, d_in, rng));
  q.push_back(random_sample(3, 2, 2, 2, d_in, rng));
  PackerConfig pc{2, 6, 8};
  PackResult r = pack(std::move(q), pc, d_in);
  if (!r.carryover.empty() || r.batch.placements.size() != 3) throw Error("fixture batch did not fit");
  return r.batch;
}

/// Moves every parameter slightly away from its initial value so gains,
/// biases and the post-processing scale are not at special points.
inline void jitter(ModelState& m, double scale, Rng& rng) {
  for (auto& t : tensors(m.student))
    for (double& v : t.span()) v += scale * rng.normal();
  for (auto& t : tensors(m.predictor))
    for (double& v : t.span()) v += scale * rng.normal();
  for (auto& t : tensors(m.teacher))
    for (double& v : t.span()) v += scale * rng.normal();
}

struct GroupError {
  std::string group;
  double max_rel = 0.0;
  std::size_t count = 0;
};

/// Parameter group of a tensor name, e.g. "student.attn" or "predictor.mask".
inline std::string param_group(const std::string& owner, const std::string& name) {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {".wq", "attn"},   {".wk", "attn"},     {".wv", "attn"},       {"_gain", "qk_norm"}, {".proj", "attn"},
      {".fc1", "mlp"},   {".fc2", "mlp"},     {".norm", "block_ln"}, {"post.scale", "dyntanh_a"},
      {"post.", "post_ln"}, {"patch.", "patch_proj"}, {"mask_token", "mask_token"}, {"out_norm", "out_ln"},
      {"in.", "in_proj"}, {"out.", "out_proj"}};
  for (const auto& [k, g] : keys) {
    if (name.find(k) != std::string::npos) return owner + "." + g;
  }
  return owner + "." + name;
}

/// Central finite differences of jepa_loss against the analytic gradient for
/// every student and predictor parameter. Relative error is
/// |a - n| / max(|a|, |n|, floor).
inline std::vector<GroupError> gradient_check(const ModelConfig& cfg, ModelState model, const PackedBatch& batch,
                                              const std::vector<PlanRow>& plan, double h = 1e-5,
                                              double floor = 1e-6) {
  ModelGrads grads = zero_grads(model);
  jepa_loss(cfg, model, batch, plan, &grads);
  std::map<std::string, GroupError> groups;
  auto check = [&](auto& params, auto& grad_params, const std::string& owner) {
    auto views = tensors(params);
    auto gviews = tensors(grad_params);
    for (std::size_t t = 0; t < views.size(); ++t) {
      const std::string g = param_group(owner, views[t].name);
      auto& ge = groups[g];
      ge.group = g;
      for (Index j = 0; j < views[t].size(); ++j) {
        double& x = views[t].data[j];
        const double x0 = x;
        x = x0 + h;
        const double lp = jepa_loss(cfg, model, batch, plan).loss;
        x = x0 - h;
        const double lm = jepa_loss(cfg, model, batch, plan).loss;
        x = x0;
        const double num = (lp - lm) / (2.0 * h);
        const double ana = gviews[t].data[j];
        const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), floor});
        ge.max_rel = std::max(ge.max_rel, rel);
        ++ge.count;
      }
    }
  };
  check(model.student, grads.student, "student");
  check(model.predictor, grads.predictor, "predictor");
  std::vector<GroupError> out;
  for (auto& [k, v] : groups) out.push_back(v);
  return out;
}

/// Fresh scratch directory under JEPA_TEST_TMP (or the system temp dir).
inline std::filesystem::path scratch_dir(const std::string& name) {
  const char* env = std::getenv("JEPA_TEST_TMP");
  const std::filesystem::path root =
      env != nullptr && *env != '\0' ? std::filesystem::path(env) : std::filesystem::temp_directory_path() / "jepa_tests";
  const std::filesystem::path dir = root / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Average ranks (ties share the mean rank).
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace jepa::testing
