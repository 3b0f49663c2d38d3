#pragma once

#include <vector>

#include "jepa/model.hpp"
#include "jepa/packer.hpp"
#include "jepa/rng.hpp"

namespace jepa {

/// Student, teacher and predictor parameters.
struct ModelState {
  EncoderParams student;
  EncoderParams teacher;
  PredictorParams predictor;
};

ModelState init_model(const ModelConfig& cfg, Rng& rng);

/// Gradients for the trainable half of ModelState.
struct ModelGrads {
  EncoderParams student;
  PredictorParams predictor;
};

ModelGrads zero_grads(const ModelState& m);

/// Indices of kept tokens per sample: ceil((1 - p_drop) * k) of the k slots
/// carrying each sample id, drawn uniformly without replacement. The result
/// is sorted. Padding slots are never kept.
std::vector<Index> keep_indices(std::span<const SampleId> ids, double p_drop, Rng& rng);

/// Token dropout on a feature batch (rows selected by keep_indices).
FeatureBatch token_dropout(const FeatureBatch& features, double p_drop, Rng& rng);

/// One predictor sequence: a batch row after repetition and token dropout.
/// Indices are flat slot indices into the packed batch.
struct PlanRow {
  int row = 0;
  int copy = 0;
  std::vector<Index> ctx_slots;
  std::vector<Index> tgt_slots;
};

/// Batch repetition (r copies of every non-empty row, copy-major order)
/// followed by independent token dropout on both streams of every copy.
/// Dropped targets leave both the prediction request and the teacher target.
std::vector<PlanRow> plan_predictor_rows(const PackedBatch& batch, int repetition, double p_drop, Rng& rng);

struct LossOutput {
  double loss = 0.0;
  /// One entry per surviving target token, in plan order.
  Vec token_losses;
  std::vector<Index> token_slots;
  std::vector<SampleId> token_ids;
  std::vector<Pos> token_pos;
};

/// The full objective: student on context, teacher on context||target with
/// the target slice taken, post-processing of both, predictor over each plan
/// row, smooth-L1 averaged over all surviving target tokens. Teacher outputs
/// are constants. If grads is given, the student and predictor gradients are
/// accumulated into it.
LossOutput jepa_loss(const ModelConfig& cfg, const ModelState& model, const PackedBatch& batch,
                     const std::vector<PlanRow>& plan, ModelGrads* grads = nullptr);

}  // namespace jepa
