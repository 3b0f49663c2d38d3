#pragma once

#include <cstdint>
#include <filesystem>
#include <deque>
#include <functional>
#include <future>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "jepa/dataset.hpp"
#include "jepa/objective.hpp"
#include "jepa/packer.hpp"
#include "jepa/pipeline.hpp"

namespace jepa {

/// Linear warmup from lr0 to peak, constant afterwards.
struct LrSchedule {
  double lr0 = 1e-4;
  double peak = 5e-4;
  std::int64_t warmup = 10'000;
};

/// Piecewise-linear teacher momentum: start -> mid over `warmup` steps,
/// mid -> end over the following `ramp` steps, then constant.
struct EmaSchedule {
  double start = 0.95;
  double mid = 0.999;
  double end = 0.9995;
  std::int64_t warmup = 1'000;
  std::int64_t ramp = 300'000;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

struct TrainConfig {
  int repetition = 4;
  double drop_rate = 0.75;
  LrSchedule lr;
  EmaSchedule ema;
  AdamWConfig adamw;
  std::uint64_t seed = 0;
  std::int64_t steps = 1000;
  int workers = 0;

  void validate() const;
};

double lr_at(std::int64_t step, const LrSchedule& s = {});
double ema_beta_at(std::int64_t step, const EmaSchedule& s = {});

/// teacher <- beta * teacher + (1 - beta) * student, for every tensor
/// including the post-processing parameters.
void ema_update(EncoderParams& teacher, const EncoderParams& student, double beta);

struct AdamState {
  EncoderParams m_student;
  EncoderParams v_student;
  PredictorParams m_predictor;
  PredictorParams v_predictor;
};

/// Position of the data stream; all values fit exactly in a double.
struct DataCursor {
  std::uint64_t shard_draws = 0;   // shards drawn so far
  std::uint64_t offset = 0;        // next member within the current shard
  std::uint64_t next_sample = 0;   // index of the next sample to generate
};

/// A pipeline sample identified by its stream index and source image.
struct SampleRef {
  std::uint64_t sample_index = 0;
  std::uint64_t image_index = 0;
  SampleId id() const { return static_cast<SampleId>(sample_index + 1); }
};

struct TrainState {
  ModelState model;
  AdamState adam;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  DataCursor cursor;
  std::vector<SampleRef> pending;  // carryover queue, filled when saving
};

TrainState init_train_state(const ModelConfig& mcfg, const TrainConfig& tcfg);

struct StepMetrics {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double beta = 0.0;
  double occupancy_ctx = 0.0;
  double occupancy_tgt = 0.0;
  double grad_norm = 0.0;
  Index tokens = 0;
};

/// One optimization step on a packed batch. The state is left untouched if
/// the loss or a gradient is not finite (NumericFault).
StepMetrics train_step(TrainState& state, const PackedBatch& batch, const ModelConfig& mcfg, const TrainConfig& tcfg);

/// I.i.d. uniform shard draws (with replacement).
std::vector<std::size_t> shuffle_shards(const ShardIndex& index, std::size_t draws, Rng& rng);

void checkpoint_save(const TrainState& state, const std::filesystem::path& path);
/// Shapes are checked against a freshly initialized state for the given
/// configs. Throws FormatError (and returns nothing) on any mismatch.
TrainState checkpoint_load(const std::filesystem::path& path, const ModelConfig& mcfg, const TrainConfig& tcfg);

/// Deterministic sample stream: shards drawn with replacement, members of a
/// shard visited in a seeded random order, and sample i generated from its
/// own RNG stream so any sample can be recreated from its SampleRef.
class DataStream {
 public:
  DataStream(const Dataset& ds, PipelineConfig cfg, std::uint64_t seed, DataCursor cursor = {});

  SampleRef next_ref();
  /// Throws RejectedSample for images that cannot be patchified.
  PatchedSample make_sample(const SampleRef& ref) const;

  const DataCursor& cursor() const { return cursor_; }

 private:
  void load_shard(std::uint64_t draw);

  const Dataset* ds_;
  PipelineConfig cfg_;
  std::uint64_t seed_;
  ShardIndex shards_;
  DataCursor cursor_;
  std::vector<std::size_t> order_;
};

/// pipeline -> packer -> train_step loop over an in-memory dataset.
class Trainer {
 public:
  Trainer(ModelConfig mcfg, PipelineConfig pcfg, PackerConfig kcfg, TrainConfig tcfg, const Dataset& ds);

  /// Replaces the state (model, optimizer, data cursor and carryover).
  void restore(TrainState state);

  PackedBatch next_batch();
  StepMetrics step();

  void save(const std::filesystem::path& path);
  const TrainState& state() const { return state_; }
  TrainState& state() { return state_; }
  const ModelConfig& model_config() const { return mcfg_; }

  /// Called with a message whenever a sample is skipped.
  std::function<void(const std::string&)> on_skip;

 private:
  struct Prefetched {
    SampleRef ref;
    DataCursor before;
    std::future<PatchedSample> job;
  };

  void fill_packer();

  ModelConfig mcfg_;
  PipelineConfig pcfg_;
  PackerConfig kcfg_;
  TrainConfig tcfg_;
  const Dataset* ds_;
  TrainState state_;
  DataStream stream_;
  OnlinePacker packer_;
  std::deque<Prefetched> prefetch_;
  std::unordered_map<SampleId, SampleRef> pending_refs_;
};

}  // namespace jepa
