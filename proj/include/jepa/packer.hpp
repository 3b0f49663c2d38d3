#pragma once

#include <deque>
#include <utility>
#include <vector>

#include "jepa/pipeline.hpp"
#include "jepa/types.hpp"

namespace jepa {

struct PackerConfig {
  int rows = 32;           // B
  int ctx_capacity = 64;   // N
  int tgt_capacity = 192;  // M

  void validate() const;
};

/// Where one sample landed inside a PackedBatch.
struct Placement {
  SampleId id = kPaddingId;
  int row = 0;
  int ctx_offset = 0;
  int ctx_count = 0;
  int tgt_offset = 0;
  int tgt_count = 0;
};

/// Twin fixed-shape buffers. Slot s of row b lives at flat index b*N + s
/// (context) or b*M + s (target). Padding slots carry id 0, zero tokens and
/// position (0, 0).
struct PackedBatch {
  int rows = 0;
  int ctx_capacity = 0;
  int tgt_capacity = 0;
  Mat ctx_tokens;  // (B*N) x d_in
  Mat tgt_tokens;  // (B*M) x d_in
  std::vector<SampleId> ctx_ids;
  std::vector<SampleId> tgt_ids;
  std::vector<Pos> ctx_pos;
  std::vector<Pos> tgt_pos;
  std::vector<Placement> placements;

  Index token_dim() const { return ctx_tokens.cols(); }
  bool empty() const { return placements.empty(); }

  std::span<const SampleId> ctx_row_ids(int row) const {
    return std::span(ctx_ids).subspan(static_cast<std::size_t>(row) * ctx_capacity, ctx_capacity);
  }
  std::span<const SampleId> tgt_row_ids(int row) const {
    return std::span(tgt_ids).subspan(static_cast<std::size_t>(row) * tgt_capacity, tgt_capacity);
  }
};

/// Row-major boolean matrix; allowed(i, j) means slot i may attend to slot j.
using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct AttentionMask {
  BoolMat allowed;
  Index size() const { return allowed.rows(); }
};

struct PackResult {
  PackedBatch batch;
  std::vector<PatchedSample> carryover;
};

/// First-fit dual-stream packing. Samples are visited in queue order; each
/// goes to the lowest row with room for both its context and its target
/// tokens. Samples that fit nowhere are returned in order as carryover.
/// token_dim is only consulted when the queue is empty.
/// Throws OversizeError if any sample exceeds a row capacity.
PackResult pack(std::vector<PatchedSample> queue, const PackerConfig& cfg, Index token_dim = 0);

/// allowed(i, j) iff ids[i] == ids[j] != 0.
AttentionMask build_mask(std::span<const SampleId> ids);

/// Fraction of non-padding slots in the (context, target) streams.
std::pair<double, double> occupancy(const PackedBatch& batch);

/// Streaming front-end. Each pushed sample goes first-fit into the open
/// batch; once a pending sample fits no row the batch is ready. emit() packs
/// the pending queue and re-queues the samples that did not fit, in order.
class OnlinePacker {
 public:
  explicit OnlinePacker(PackerConfig cfg);

  /// Throws OversizeError for samples that cannot fit an empty row.
  void push(PatchedSample sample);
  bool ready() const { return blocked_; }
  PackedBatch emit();

  const std::deque<PatchedSample>& pending() const { return pending_; }
  const PackerConfig& config() const { return cfg_; }

 private:
  /// First-fit into the open rows; false (and blocked) if no row has room.
  bool place(const PatchedSample& s);
  void reset_rows();

  PackerConfig cfg_;
  std::deque<PatchedSample> pending_;
  std::vector<int> ctx_fill_;
  std::vector<int> tgt_fill_;
  bool blocked_ = false;
  Index token_dim_ = 0;
};

}  // namespace jepa
