#include "jepa/objective.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

namespace jepa {

ModelState init_model(const ModelConfig& cfg, Rng& rng) {
  ModelState m;
  m.student = init_encoder(cfg, rng);
  m.teacher = m.student;
  m.predictor = init_predictor(cfg, rng);
  return m;
}

ModelGrads zero_grads(const ModelState& m) { return {zeros_like(m.student), zeros_like(m.predictor)}; }

std::vector<Index> keep_indices(std::span<const SampleId> ids, double p_drop, Rng& rng) {
  if (!(p_drop >= 0.0 && p_drop < 1.0)) throw ContractViolation("p_drop must lie in [0, 1)");
  std::map<SampleId, std::vector<Index>> groups;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] != kPaddingId) groups[ids[i]].push_back(static_cast<Index>(i));
  }
  std::vector<Index> kept;
  for (auto& [id, slots] : groups) {
    const auto k = slots.size();
    // ceil((1-p)*k) >= 1 for any k >= 1 and p < 1
    const auto keep = static_cast<std::size_t>(std::ceil((1.0 - p_drop) * static_cast<double>(k) - 1e-9));
    if (keep >= k) {
      kept.insert(kept.end(), slots.begin(), slots.end());
      continue;
    }
    for (std::size_t j : rng.choose(k, std::max<std::size_t>(keep, 1))) kept.push_back(slots[j]);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

FeatureBatch token_dropout(const FeatureBatch& features, double p_drop, Rng& rng) {
  const auto keep = keep_indices(features.ids, p_drop, rng);
  FeatureBatch out;
  out.tokens = features.tokens(keep, Eigen::all);
  for (Index i : keep) {
    out.ids.push_back(features.ids[static_cast<std::size_t>(i)]);
    out.positions.push_back(features.positions[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::vector<PlanRow> plan_predictor_rows(const PackedBatch& batch, int repetition, double p_drop, Rng& rng) {
  if (repetition < 1) throw ContractViolation("repetition must be >= 1");
  std::vector<PlanRow> plan;
  for (int copy = 0; copy < repetition; ++copy) {
    for (int row = 0; row < batch.rows; ++row) {
      const auto ctx_ids = batch.ctx_row_ids(row);
      if (std::all_of(ctx_ids.begin(), ctx_ids.end(), [](SampleId id) { return id == kPaddingId; })) continue;
      PlanRow pr;
      pr.row = row;
      pr.copy = copy;
      const Index c0 = static_cast<Index>(row) * batch.ctx_capacity;
      const Index t0 = static_cast<Index>(row) * batch.tgt_capacity;
      for (Index i : keep_indices(ctx_ids, p_drop, rng)) pr.ctx_slots.push_back(c0 + i);
      for (Index i : keep_indices(batch.tgt_row_ids(row), p_drop, rng)) pr.tgt_slots.push_back(t0 + i);
      plan.push_back(std::move(pr));
    }
  }
  return plan;
}

namespace {

/// Encoder-side results for one packed row.
struct RowFeatures {
  std::vector<Index> ctx_slots;  // real slots, in slot order
  std::vector<Index> tgt_slots;
  std::unordered_map<Index, Index> ctx_local;  // flat slot -> row in student output
  std::unordered_map<Index, Index> tgt_local;
  EncoderCache student_cache;
  PostprocCache student_post;
  Mat student_out;  // post-processed S_x
  Mat teacher_out;  // post-processed S_y
};

template <class T>
std::vector<T> gather(const std::vector<T>& v, const std::vector<Index>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (Index i : idx) out.push_back(v[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

LossOutput jepa_loss(const ModelConfig& cfg, const ModelState& model, const PackedBatch& batch,
                     const std::vector<PlanRow>& plan, ModelGrads* grads) {
  std::map<int, RowFeatures> rows;
  for (const auto& pr : plan) {
    if (rows.contains(pr.row)) continue;
    RowFeatures& rf = rows[pr.row];
    const Index c0 = static_cast<Index>(pr.row) * batch.ctx_capacity;
    const Index t0 = static_cast<Index>(pr.row) * batch.tgt_capacity;
    for (Index i = 0; i < batch.ctx_capacity; ++i) {
      if (batch.ctx_ids[static_cast<std::size_t>(c0 + i)] != kPaddingId) rf.ctx_slots.push_back(c0 + i);
    }
    for (Index i = 0; i < batch.tgt_capacity; ++i) {
      if (batch.tgt_ids[static_cast<std::size_t>(t0 + i)] != kPaddingId) rf.tgt_slots.push_back(t0 + i);
    }
    for (std::size_t i = 0; i < rf.ctx_slots.size(); ++i) rf.ctx_local[rf.ctx_slots[i]] = static_cast<Index>(i);
    for (std::size_t i = 0; i < rf.tgt_slots.size(); ++i) rf.tgt_local[rf.tgt_slots[i]] = static_cast<Index>(i);

    // student on the context stream
    const Mat ctx_tokens = batch.ctx_tokens(rf.ctx_slots, Eigen::all);
    const auto ctx_pos = gather(batch.ctx_pos, rf.ctx_slots);
    const auto ctx_ids = gather(batch.ctx_ids, rf.ctx_slots);
    const Mat raw_x = encoder_forward(model.student, cfg, ctx_tokens, ctx_pos, build_mask(ctx_ids),
                                      grads ? &rf.student_cache : nullptr);
    rf.student_out = postprocess(raw_x, model.student.post, cfg.norm_eps, grads ? &rf.student_post : nullptr);

    // teacher on context || target, keep the target slice
    const Index nc = static_cast<Index>(rf.ctx_slots.size());
    const Index nt = static_cast<Index>(rf.tgt_slots.size());
    Mat all_tokens(nc + nt, batch.token_dim());
    all_tokens.topRows(nc) = ctx_tokens;
    all_tokens.bottomRows(nt) = batch.tgt_tokens(rf.tgt_slots, Eigen::all);
    auto all_pos = ctx_pos;
    auto all_ids = ctx_ids;
    const auto tgt_pos = gather(batch.tgt_pos, rf.tgt_slots);
    const auto tgt_ids = gather(batch.tgt_ids, rf.tgt_slots);
    all_pos.insert(all_pos.end(), tgt_pos.begin(), tgt_pos.end());
    all_ids.insert(all_ids.end(), tgt_ids.begin(), tgt_ids.end());
    const Mat raw_all = encoder_forward(model.teacher, cfg, all_tokens, all_pos, build_mask(all_ids));
    rf.teacher_out = postprocess(Mat(raw_all.bottomRows(nt)), model.teacher.post, cfg.norm_eps);
  }

  Index total = 0;
  for (const auto& pr : plan) total += static_cast<Index>(pr.tgt_slots.size());

  LossOutput out;
  out.token_losses.resize(total);
  out.token_slots.reserve(static_cast<std::size_t>(total));
  std::map<int, Mat> dstudent;  // per row, gradient w.r.t. post-processed S_x
  if (grads) {
    for (auto& [row, rf] : rows) dstudent[row] = Mat::Zero(rf.student_out.rows(), rf.student_out.cols());
  }

  Index cursor = 0;
  double sum = 0.0;
  for (const auto& pr : plan) {
    if (pr.tgt_slots.empty()) continue;
    RowFeatures& rf = rows.at(pr.row);
    std::vector<Index> ctx_rows, tgt_rows;
    for (Index s : pr.ctx_slots) ctx_rows.push_back(rf.ctx_local.at(s));
    for (Index s : pr.tgt_slots) tgt_rows.push_back(rf.tgt_local.at(s));
    const Mat ctx_feat = rf.student_out(ctx_rows, Eigen::all);
    const Mat target = rf.teacher_out(tgt_rows, Eigen::all);
    const auto ctx_pos = gather(batch.ctx_pos, pr.ctx_slots);
    const auto ctx_ids = gather(batch.ctx_ids, pr.ctx_slots);
    const auto tgt_pos = gather(batch.tgt_pos, pr.tgt_slots);
    const auto tgt_ids = gather(batch.tgt_ids, pr.tgt_slots);

    PredictorCache pc;
    const Mat pred = predictor_forward(model.predictor, cfg, ctx_feat, ctx_pos, ctx_ids, tgt_pos, tgt_ids,
                                       grads ? &pc : nullptr);
    const SmoothL1 sl = smooth_l1(pred, target);
    out.token_losses.segment(cursor, sl.token_losses.size()) = sl.token_losses;
    cursor += sl.token_losses.size();
    sum += sl.token_losses.sum();
    out.token_slots.insert(out.token_slots.end(), pr.tgt_slots.begin(), pr.tgt_slots.end());
    out.token_ids.insert(out.token_ids.end(), tgt_ids.begin(), tgt_ids.end());
    out.token_pos.insert(out.token_pos.end(), tgt_pos.begin(), tgt_pos.end());

    if (grads) {
      const Mat dpred = smooth_l1_grad(pred, target, 1.0 / static_cast<double>(total));
      const Mat dctx = predictor_backward(model.predictor, cfg, pc, dpred, grads->predictor);
      Mat& ds = dstudent.at(pr.row);
      for (std::size_t i = 0; i < ctx_rows.size(); ++i) ds.row(ctx_rows[i]) += dctx.row(static_cast<Index>(i));
    }
  }
  out.loss = total > 0 ? sum / static_cast<double>(total) : 0.0;

  if (grads) {
    for (auto& [row, rf] : rows) {
      const Mat draw = postprocess_backward(dstudent.at(row), model.student.post, rf.student_post, grads->student.post);
      encoder_backward(model.student, cfg, rf.student_cache, draw, grads->student);
    }
  }
  return out;
}

}  // namespace jepa
