#include "jepa/packer.hpp"

#include <string>

namespace jepa {

void PackerConfig::validate() const {
  if (rows < 1) throw ConfigError("packer.rows must be >= 1");
  if (ctx_capacity < 1) throw ConfigError("packer.ctx_capacity must be >= 1");
  if (tgt_capacity < 1) throw ConfigError("packer.tgt_capacity must be >= 1");
}

namespace {

void check_size(const PatchedSample& s, const PackerConfig& cfg) {
  if (s.context_size() > cfg.ctx_capacity || s.target_size() > cfg.tgt_capacity) {
    throw OversizeError(s.id, "sample " + std::to_string(s.id) + " (" + std::to_string(s.context_size()) + " context, " +
                                  std::to_string(s.target_size()) + " target tokens) exceeds row capacity " +
                                  std::to_string(cfg.ctx_capacity) + "/" + std::to_string(cfg.tgt_capacity));
  }
}

}  // namespace

PackResult pack(std::vector<PatchedSample> queue, const PackerConfig& cfg, Index token_dim) {
  cfg.validate();
  for (const auto& s : queue) {
    check_size(s, cfg);
    if (s.id == kPaddingId) throw ContractViolation("sample id 0 is reserved for padding");
  }
  if (!queue.empty()) token_dim = queue.front().context.cols();

  PackResult out;
  PackedBatch& b = out.batch;
  b.rows = cfg.rows;
  b.ctx_capacity = cfg.ctx_capacity;
  b.tgt_capacity = cfg.tgt_capacity;
  const std::size_t ctx_slots = static_cast<std::size_t>(cfg.rows) * cfg.ctx_capacity;
  const std::size_t tgt_slots = static_cast<std::size_t>(cfg.rows) * cfg.tgt_capacity;
  b.ctx_tokens = Mat::Zero(static_cast<Index>(ctx_slots), token_dim);
  b.tgt_tokens = Mat::Zero(static_cast<Index>(tgt_slots), token_dim);
  b.ctx_ids.assign(ctx_slots, kPaddingId);
  b.tgt_ids.assign(tgt_slots, kPaddingId);
  b.ctx_pos.assign(ctx_slots, Pos{});
  b.tgt_pos.assign(tgt_slots, Pos{});

  std::vector<int> ctx_fill(static_cast<std::size_t>(cfg.rows), 0);
  std::vector<int> tgt_fill(static_cast<std::size_t>(cfg.rows), 0);

  for (auto& s : queue) {
    const int n = static_cast<int>(s.context_size());
    const int m = static_cast<int>(s.target_size());
    int row = -1;
    for (int r = 0; r < cfg.rows; ++r) {
      if (cfg.ctx_capacity - ctx_fill[r] >= n && cfg.tgt_capacity - tgt_fill[r] >= m) {
        row = r;
        break;
      }
    }
    if (row < 0) {
      out.carryover.push_back(std::move(s));
      continue;
    }
    if (s.context.cols() != token_dim || s.target.cols() != token_dim) {
      throw ContractViolation("sample " + std::to_string(s.id) + " has mismatched token dimension");
    }
    const Index c0 = static_cast<Index>(row) * cfg.ctx_capacity + ctx_fill[row];
    const Index t0 = static_cast<Index>(row) * cfg.tgt_capacity + tgt_fill[row];
    b.ctx_tokens.middleRows(c0, n) = s.context;
    b.tgt_tokens.middleRows(t0, m) = s.target;
    for (int i = 0; i < n; ++i) {
      b.ctx_ids[static_cast<std::size_t>(c0 + i)] = s.id;
      b.ctx_pos[static_cast<std::size_t>(c0 + i)] = s.context_pos[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < m; ++i) {
      b.tgt_ids[static_cast<std::size_t>(t0 + i)] = s.id;
      b.tgt_pos[static_cast<std::size_t>(t0 + i)] = s.target_pos[static_cast<std::size_t>(i)];
    }
    b.placements.push_back({s.id, row, ctx_fill[row], n, tgt_fill[row], m});
    ctx_fill[row] += n;
    tgt_fill[row] += m;
  }
  return out;
}

AttentionMask build_mask(std::span<const SampleId> ids) {
  const auto n = static_cast<Index>(ids.size());
  AttentionMask mask;
  mask.allowed.resize(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      mask.allowed(i, j) = ids[static_cast<std::size_t>(i)] != kPaddingId &&
                           ids[static_cast<std::size_t>(i)] == ids[static_cast<std::size_t>(j)];
    }
  }
  return mask;
}

std::pair<double, double> occupancy(const PackedBatch& batch) {
  auto frac = [](const std::vector<SampleId>& ids) {
    if (ids.empty()) return 0.0;
    std::size_t used = 0;
    for (SampleId id : ids) used += id != kPaddingId;
    return static_cast<double>(used) / static_cast<double>(ids.size());
  };
  return {frac(batch.ctx_ids), frac(batch.tgt_ids)};
}

OnlinePacker::OnlinePacker(PackerConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  reset_rows();
}

void OnlinePacker::reset_rows() {
  ctx_fill_.assign(static_cast<std::size_t>(cfg_.rows), 0);
  tgt_fill_.assign(static_cast<std::size_t>(cfg_.rows), 0);
  blocked_ = false;
}

bool OnlinePacker::place(const PatchedSample& s) {
  const auto n = static_cast<int>(s.context_size());
  const auto m = static_cast<int>(s.target_size());
  for (std::size_t r = 0; r < ctx_fill_.size(); ++r) {
    if (cfg_.ctx_capacity - ctx_fill_[r] >= n && cfg_.tgt_capacity - tgt_fill_[r] >= m) {
      ctx_fill_[r] += n;
      tgt_fill_[r] += m;
      return true;
    }
  }
  blocked_ = true;
  return false;
}

void OnlinePacker::push(PatchedSample sample) {
  check_size(sample, cfg_);
  token_dim_ = sample.context.cols();
  if (!blocked_) place(sample);
  pending_.push_back(std::move(sample));
}

PackedBatch OnlinePacker::emit() {
  std::vector<PatchedSample> queue(std::make_move_iterator(pending_.begin()), std::make_move_iterator(pending_.end()));
  pending_.clear();
  PackResult res = pack(std::move(queue), cfg_, token_dim_);
  reset_rows();
  for (auto& s : res.carryover) {
    if (!blocked_) place(s);
    pending_.push_back(std::move(s));
  }
  return std::move(res.batch);
}

}  // namespace jepa
