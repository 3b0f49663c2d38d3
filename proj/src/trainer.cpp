#include "jepa/trainer.hpp"

#include <cmath>
#include <future>
#include <string>

#include "jepa/tensor_file.hpp"

namespace jepa {

void TrainConfig::validate() const {
  if (repetition < 1) throw ConfigError("train.repetition must be >= 1");
  if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw ConfigError("train.drop_rate must lie in [0, 1)");
  if (lr.warmup < 1) throw ConfigError("train.lr.warmup must be >= 1");
  if (lr.lr0 < 0.0 || lr.peak < 0.0) throw ConfigError("learning rates must be non-negative");
  if (ema.warmup < 1 || ema.ramp < 1) throw ConfigError("train.ema warmup and ramp must be >= 1");
  for (double b : {ema.start, ema.mid, ema.end}) {
    if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("train.ema momenta must lie in [0, 1]");
  }
  if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0 && adamw.beta2 >= 0.0 && adamw.beta2 < 1.0)) {
    throw ConfigError("train.adamw betas must lie in [0, 1)");
  }
  if (adamw.weight_decay < 0.0 || adamw.eps <= 0.0) throw ConfigError("invalid train.adamw settings");
  if (steps < 0) throw ConfigError("train.steps must be >= 0");
  if (workers < 0) throw ConfigError("train.workers must be >= 0");
}

namespace {

double lerp(double a, double b, double t) { return (1.0 - t) * a + t * b; }

}  // namespace

double lr_at(std::int64_t step, const LrSchedule& s) {
  if (step >= s.warmup) return s.peak;
  return lerp(s.lr0, s.peak, static_cast<double>(step) / static_cast<double>(s.warmup));
}

double ema_beta_at(std::int64_t step, const EmaSchedule& s) {
  if (step <= s.warmup) return lerp(s.start, s.mid, static_cast<double>(step) / static_cast<double>(s.warmup));
  const std::int64_t k = step - s.warmup;
  if (k <= s.ramp) return lerp(s.mid, s.end, static_cast<double>(k) / static_cast<double>(s.ramp));
  return s.end;
}

void ema_update(EncoderParams& teacher, const EncoderParams& student, double beta) {
  auto t = tensors(teacher);
  auto s = tensors(const_cast<EncoderParams&>(student));
  if (t.size() != s.size()) throw ContractViolation("teacher and student have different tensor lists");
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i].rows != s[i].rows || t[i].cols != s[i].cols) {
      throw ContractViolation("teacher/student shape mismatch at " + t[i].name);
    }
    for (Index j = 0; j < t[i].size(); ++j) t[i].data[j] = beta * t[i].data[j] + (1.0 - beta) * s[i].data[j];
  }
}

TrainState init_train_state(const ModelConfig& mcfg, const TrainConfig& tcfg) {
  mcfg.validate();
  tcfg.validate();
  TrainState st;
  st.seed = tcfg.seed;
  Rng rng(tcfg.seed, {tag(Stream::kInit)});
  st.model = init_model(mcfg, rng);
  st.adam.m_student = zeros_like(st.model.student);
  st.adam.v_student = zeros_like(st.model.student);
  st.adam.m_predictor = zeros_like(st.model.predictor);
  st.adam.v_predictor = zeros_like(st.model.predictor);
  return st;
}

namespace {

void adamw(std::vector<TensorView> params, std::vector<TensorView> grads, std::vector<TensorView> m,
           std::vector<TensorView> v, const AdamWConfig& cfg, double lr, std::int64_t t) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double wd = params[i].decay == Decay::kYes ? cfg.weight_decay : 0.0;
    for (Index j = 0; j < params[i].size(); ++j) {
      const double g = grads[i].data[j];
      double& mj = m[i].data[j];
      double& vj = v[i].data[j];
      mj = cfg.beta1 * mj + (1.0 - cfg.beta1) * g;
      vj = cfg.beta2 * vj + (1.0 - cfg.beta2) * g * g;
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
      params[i].data[j] -= lr * (update + wd * params[i].data[j]);
    }
  }
}

double squared_norm(const std::vector<TensorView>& ts) {
  double s = 0.0;
  for (const auto& t : ts) {
    for (double v : t.span()) s += v * v;
  }
  return s;
}

}  // namespace

StepMetrics train_step(TrainState& state, const PackedBatch& batch, const ModelConfig& mcfg, const TrainConfig& tcfg) {
  StepMetrics metrics;
  metrics.step = state.step;
  std::tie(metrics.occupancy_ctx, metrics.occupancy_tgt) = occupancy(batch);
  metrics.lr = lr_at(state.step, tcfg.lr);
  metrics.beta = ema_beta_at(state.step, tcfg.ema);

  Rng drop_rng(state.seed, {tag(Stream::kDropout), static_cast<std::uint64_t>(state.step)});
  const auto plan = plan_predictor_rows(batch, tcfg.repetition, tcfg.drop_rate, drop_rng);
  ModelGrads grads = zero_grads(state.model);
  const LossOutput out = jepa_loss(mcfg, state.model, batch, plan, &grads);
  metrics.loss = out.loss;
  metrics.tokens = out.token_losses.size();
  if (!std::isfinite(out.loss)) {
    throw NumericFault(-1, "non-finite loss at step " + std::to_string(state.step));
  }
  metrics.grad_norm = std::sqrt(squared_norm(tensors(grads.student)) + squared_norm(tensors(grads.predictor)));
  if (!std::isfinite(metrics.grad_norm)) {
    throw NumericFault(-1, "non-finite gradient at step " + std::to_string(state.step));
  }

  const std::int64_t t = state.step + 1;
  adamw(tensors(state.model.student), tensors(grads.student), tensors(state.adam.m_student),
        tensors(state.adam.v_student), tcfg.adamw, metrics.lr, t);
  adamw(tensors(state.model.predictor), tensors(grads.predictor), tensors(state.adam.m_predictor),
        tensors(state.adam.v_predictor), tcfg.adamw, metrics.lr, t);
  ema_update(state.model.teacher, state.model.student, metrics.beta);
  ++state.step;
  return metrics;
}

std::vector<std::size_t> shuffle_shards(const ShardIndex& index, std::size_t draws, Rng& rng) {
  if (index.empty()) throw ContractViolation("shard index is empty");
  std::vector<std::size_t> out(draws);
  for (auto& s : out) s = rng.below(index.size());
  return out;
}

namespace {

void put_tensors(TensorFile& f, const std::string& prefix, std::vector<TensorView> ts) {
  for (const auto& t : ts) {
    f.add(prefix + t.name, {static_cast<std::uint64_t>(t.rows), static_cast<std::uint64_t>(t.cols)},
          std::vector<double>(t.span().begin(), t.span().end()));
  }
}

void get_tensors(const TensorFile& f, const std::string& prefix, std::vector<TensorView> ts, std::size_t& consumed) {
  for (const auto& t : ts) {
    const auto& e = f.at(prefix + t.name);
    if (e.dims.size() != 2 || e.dims[0] != static_cast<std::uint64_t>(t.rows) ||
        e.dims[1] != static_cast<std::uint64_t>(t.cols)) {
      throw FormatError("checkpoint tensor '" + e.name + "' has a different shape than the configured model");
    }
    std::copy(e.data.begin(), e.data.end(), t.data);
    ++consumed;
  }
}

}  // namespace

void checkpoint_save(const TrainState& st_in, const std::filesystem::path& path) {
  auto& st = const_cast<TrainState&>(st_in);
  TensorFile f;
  put_tensors(f, "student/", tensors(st.model.student));
  put_tensors(f, "teacher/", tensors(st.model.teacher));
  put_tensors(f, "predictor/", tensors(st.model.predictor));
  put_tensors(f, "adam.m/student/", tensors(st.adam.m_student));
  put_tensors(f, "adam.v/student/", tensors(st.adam.v_student));
  put_tensors(f, "adam.m/predictor/", tensors(st.adam.m_predictor));
  put_tensors(f, "adam.v/predictor/", tensors(st.adam.v_predictor));
  f.add("state/step", {1}, {static_cast<double>(st.step)});
  f.add("state/seed", {2}, {static_cast<double>(st.seed >> 32), static_cast<double>(st.seed & 0xFFFFFFFFULL)});
  f.add("state/cursor", {3},
        {static_cast<double>(st.cursor.shard_draws), static_cast<double>(st.cursor.offset),
         static_cast<double>(st.cursor.next_sample)});
  std::vector<double> pending;
  for (const auto& r : st.pending) {
    pending.push_back(static_cast<double>(r.sample_index));
    pending.push_back(static_cast<double>(r.image_index));
  }
  f.add("state/pending", {static_cast<std::uint64_t>(st.pending.size()), 2}, std::move(pending));
  f.save(path);
}

TrainState checkpoint_load(const std::filesystem::path& path, const ModelConfig& mcfg, const TrainConfig& tcfg) {
  const TensorFile f = TensorFile::load(path);
  TrainState st = init_train_state(mcfg, tcfg);
  std::size_t consumed = 0;
  get_tensors(f, "student/", tensors(st.model.student), consumed);
  get_tensors(f, "teacher/", tensors(st.model.teacher), consumed);
  get_tensors(f, "predictor/", tensors(st.model.predictor), consumed);
  get_tensors(f, "adam.m/student/", tensors(st.adam.m_student), consumed);
  get_tensors(f, "adam.v/student/", tensors(st.adam.v_student), consumed);
  get_tensors(f, "adam.m/predictor/", tensors(st.adam.m_predictor), consumed);
  get_tensors(f, "adam.v/predictor/", tensors(st.adam.v_predictor), consumed);

  const auto& step = f.at("state/step");
  const auto& seed = f.at("state/seed");
  const auto& cursor = f.at("state/cursor");
  const auto& pending = f.at("state/pending");
  if (step.data.size() != 1 || seed.data.size() != 2 || cursor.data.size() != 3 || pending.dims.size() != 2 ||
      pending.dims[1] != 2) {
    throw FormatError("checkpoint state entries are malformed");
  }
  st.step = static_cast<std::int64_t>(step.data[0]);
  st.seed = (static_cast<std::uint64_t>(seed.data[0]) << 32) | static_cast<std::uint64_t>(seed.data[1]);
  st.cursor = {static_cast<std::uint64_t>(cursor.data[0]), static_cast<std::uint64_t>(cursor.data[1]),
               static_cast<std::uint64_t>(cursor.data[2])};
  for (std::size_t i = 0; i + 1 < pending.data.size(); i += 2) {
    st.pending.push_back({static_cast<std::uint64_t>(pending.data[i]), static_cast<std::uint64_t>(pending.data[i + 1])});
  }
  consumed += 4;
  if (consumed != f.entries().size()) throw FormatError("checkpoint contains tensors the configured model does not have");
  return st;
}

DataStream::DataStream(const Dataset& ds, PipelineConfig cfg, std::uint64_t seed, DataCursor cursor)
    : ds_(&ds), cfg_(cfg), seed_(seed), shards_(build_shard_index(ds)), cursor_(cursor) {
  if (ds.size() == 0) throw ConfigError("dataset is empty");
  if (cursor_.shard_draws > 0) load_shard(cursor_.shard_draws - 1);
}

void DataStream::load_shard(std::uint64_t draw) {
  Rng pick(seed_, {tag(Stream::kShardDraw), draw});
  const auto& shard = shards_[pick.below(shards_.size())];
  order_ = shard.members;
  Rng order(seed_, {tag(Stream::kShardOrder), draw});
  order.shuffle(std::span(order_));
}

SampleRef DataStream::next_ref() {
  if (cursor_.shard_draws == 0 || cursor_.offset >= order_.size()) {
    load_shard(cursor_.shard_draws);
    ++cursor_.shard_draws;
    cursor_.offset = 0;
  }
  return {cursor_.next_sample++, order_[cursor_.offset++]};
}

PatchedSample DataStream::make_sample(const SampleRef& ref) const {
  Rng rng(seed_, {tag(Stream::kSample), ref.sample_index});
  return sample_pipeline(ds_->images[ref.image_index], cfg_, rng, ref.id());
}

Trainer::Trainer(ModelConfig mcfg, PipelineConfig pcfg, PackerConfig kcfg, TrainConfig tcfg, const Dataset& ds)
    : mcfg_(mcfg),
      pcfg_(pcfg),
      kcfg_(kcfg),
      tcfg_(tcfg),
      ds_(&ds),
      state_(init_train_state(mcfg, tcfg)),
      stream_(ds, pcfg, tcfg.seed),
      packer_(kcfg) {
  pcfg_.validate();
  if (pcfg_.patch_size != mcfg_.patch_size) throw ConfigError("pipeline.patch_size must equal model.patch_size");
}

void Trainer::restore(TrainState state) {
  prefetch_.clear();
  state_ = std::move(state);
  stream_ = DataStream(*ds_, pcfg_, state_.seed, state_.cursor);
  packer_ = OnlinePacker(kcfg_);
  pending_refs_.clear();
  for (const auto& ref : state_.pending) {
    packer_.push(stream_.make_sample(ref));
    pending_refs_[ref.id()] = ref;
  }
}

void Trainer::fill_packer() {
  int skipped_in_a_row = 0;
  const std::size_t chunk = static_cast<std::size_t>(std::max(tcfg_.workers, 1));
  const auto policy = tcfg_.workers > 0 ? std::launch::async : std::launch::deferred;
  while (!packer_.ready()) {
    if (prefetch_.empty()) {
      for (std::size_t i = 0; i < chunk; ++i) {
        Prefetched p;
        p.before = stream_.cursor();
        p.ref = stream_.next_ref();
        p.job = std::async(policy, [this, ref = p.ref] { return stream_.make_sample(ref); });
        prefetch_.push_back(std::move(p));
      }
    }
    Prefetched p = std::move(prefetch_.front());
    prefetch_.pop_front();
    try {
      packer_.push(p.job.get());
      pending_refs_[p.ref.id()] = p.ref;
      skipped_in_a_row = 0;
    } catch (const Error& e) {
      if (!dynamic_cast<const RejectedSample*>(&e) && !dynamic_cast<const OversizeError*>(&e)) throw;
      if (on_skip) on_skip("skipping sample " + std::to_string(p.ref.id()) + ": " + e.what());
      if (++skipped_in_a_row > 10'000) throw Error("every recent sample was rejected; check pipeline/packer sizes");
    }
  }
}

PackedBatch Trainer::next_batch() {
  fill_packer();
  PackedBatch batch = packer_.emit();
  for (const auto& p : batch.placements) pending_refs_.erase(p.id);
  return batch;
}

StepMetrics Trainer::step() {
  const PackedBatch batch = next_batch();
  return train_step(state_, batch, mcfg_, tcfg_);
}

void Trainer::save(const std::filesystem::path& path) {
  // Samples generated ahead of the packer are regenerated after a restore.
  state_.cursor = prefetch_.empty() ? stream_.cursor() : prefetch_.front().before;
  state_.pending.clear();
  for (const auto& s : packer_.pending()) state_.pending.push_back(pending_refs_.at(s.id));
  checkpoint_save(state_, path);
}

}  // namespace jepa
