#include "jepa/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <regex>
#include <sstream>

#include "jepa/dataset.hpp"
#include "jepa/image.hpp"
#include "jepa/trainer.hpp"

namespace jepa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << text;
    if (!f) throw Error("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

TrainState load_checkpoint(const fs::path& path, const RunConfig& cfg) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(path)) throw FormatError("checkpoint " + path.string() + " does not exist");
  return checkpoint_load(path, cfg.model, cfg.train);
}

/// Largest multiple of p not above the smallest image side.
int common_resolution(const std::vector<RawImage>& images, int p) {
  int side = std::numeric_limits<int>::max();
  for (const auto& img : images) side = std::min({side, img.height, img.width});
  side = side / p * p;
  if (side < p) throw RejectedSample("images are smaller than one patch");
  return side;
}

std::vector<int> parse_layers(const std::string& spec, int num_hidden) {
  std::vector<int> out;
  if (spec == "all") {
    for (int l = 0; l < num_hidden; ++l) out.push_back(l);
    return out;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int l = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), l);
    if (ec != std::errc() || ptr != item.data() + item.size()) throw ConfigError("--layers: bad entry '" + item + "'");
    if (l < 0) l += num_hidden;
    if (l < 0 || l >= num_hidden) {
      throw ConfigError("--layers: " + item + " is outside [0, " + std::to_string(num_hidden - 1) + "]");
    }
    out.push_back(l);
  }
  if (out.empty()) throw ConfigError("--layers: empty list");
  return out;
}

}  // namespace

RunConfig resolve_config(const RunOverrides& o, bool need_dataset) {
  if (o.config.empty()) throw ConfigError("--config is required");
  RunConfig cfg = load_run_config(o.config);
  if (const char* env = std::getenv(kOutDirEnv); env != nullptr && *env != '\0') cfg.output_dir = env;
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  if (o.seed) cfg.seed = *o.seed;
  if (o.dataset) cfg.dataset = *o.dataset;
  if (o.postproc) {
    try {
      cfg.model.postproc = parse_postproc(*o.postproc);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("--postproc: ") + e.what());
    }
  }
  cfg.train.seed = cfg.seed;
  cfg.validate(need_dataset);
  return cfg;
}

void write_sidecar(const fs::path& artifact, const std::string& command, const std::string& hash, std::uint64_t seed,
                   json extra) {
  json meta = {{"artifact", artifact.filename().string()}, {"command", command}, {"config_hash", hash}, {"seed", seed}};
  for (auto& [k, v] : extra.items()) meta[k] = v;
  write_text(artifact.string() + ".meta.json", meta.dump(2) + "\n");
}

int guarded(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

// ---------------------------------------------------------------- pretrain

int cmd_pretrain(const PretrainOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        RunOverrides run = o.run;
        RunConfig cfg = resolve_config(run, true);
        if (o.steps) cfg.train.steps = *o.steps;
        if (o.workers) cfg.train.workers = *o.workers;
        cfg.validate(true);
        const std::string hash = config_hash(cfg);

        const Dataset ds = load_dataset(cfg.dataset);
        fs::create_directories(cfg.output_dir);
        const fs::path ckpt = cfg.output_dir / "checkpoint.jtns";
        const fs::path metrics_path = cfg.output_dir / "metrics.csv";
        write_text(cfg.output_dir / "config.json", to_json(cfg).dump(2) + "\n");

        Trainer trainer(cfg.model, cfg.pipeline, cfg.packer, cfg.train, ds);
        trainer.on_skip = [&err](const std::string& msg) { err << msg << "\n"; };

        const std::string header = "step,loss,lr,beta,occupancy_ctx,occupancy_tgt,grad_norm\n";
        std::string kept = header;
        if (o.resume) {
          if (!fs::exists(ckpt)) throw FormatError("--resume: no checkpoint at " + ckpt.string());
          trainer.restore(checkpoint_load(ckpt, cfg.model, cfg.train));
          if (fs::exists(metrics_path)) {
            // Keep only rows the restored state has already produced.
            std::istringstream in(read_text(metrics_path));
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
              if (line.empty()) continue;
              if (std::stoll(line.substr(0, line.find(','))) < trainer.state().step) kept += line + "\n";
            }
          }
          err << "resumed at step " << trainer.state().step << "\n";
        }
        write_text(metrics_path, kept);
        std::ofstream metrics(metrics_path, std::ios::app);

        auto save = [&] {
          metrics.flush();
          trainer.save(ckpt);
          write_sidecar(ckpt, "pretrain", hash, cfg.seed, {{"step", trainer.state().step}});
        };
        while (trainer.state().step < cfg.train.steps) {
          const StepMetrics m = trainer.step();
          metrics << m.step << ',' << fmt(m.loss) << ',' << fmt(m.lr) << ',' << fmt(m.beta) << ','
                  << fmt(m.occupancy_ctx) << ',' << fmt(m.occupancy_tgt) << ',' << fmt(m.grad_norm) << '\n';
          if (o.log_every > 0 && (m.step % o.log_every == 0 || trainer.state().step == cfg.train.steps)) {
            err << "step " << m.step << " loss " << m.loss << " occ " << m.occupancy_ctx << "/" << m.occupancy_tgt
                << "\n";
          }
          if (trainer.state().step % cfg.checkpoint_every == 0) save();
        }
        metrics.close();
        if (!fs::exists(ckpt) || trainer.state().step % cfg.checkpoint_every != 0) save();
        write_sidecar(metrics_path, "pretrain", hash, cfg.seed, {{"steps", cfg.train.steps}});
        out << ckpt.string() << "\n";
      },
      err);
}

// ---------------------------------------------------------------- loss-map

int cmd_loss_map(const LossMapOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        if (o.draws < 1) throw ConfigError("--draws must be >= 1");
        if (o.canonical < 1) throw ConfigError("--canonical must be >= 1");
        if (o.bins < 1) throw ConfigError("--bins must be >= 1");
        const RunConfig cfg = resolve_config(o.run, true);
        const std::string hash = config_hash(cfg);
        const TrainState state = load_checkpoint(o.checkpoint, cfg);
        Dataset ds = load_dataset(cfg.dataset);
        if (o.max_images > 0 && ds.images.size() > static_cast<std::size_t>(o.max_images)) {
          ds.images.resize(static_cast<std::size_t>(o.max_images));
        }
        PipelineConfig pcfg = cfg.pipeline;
        if (!o.random_scale) pcfg.scale_lo = pcfg.scale_hi = 1.0;

        const auto records = collect_losses(cfg.model, state.model, pcfg, ds.images, o.draws, cfg.seed);
        if (records.empty()) throw Error("no losses collected");
        const LossMap map = mean_canonical_map(records, o.canonical, o.canonical);
        const Mat mean = map.mean();

        const json extra = {{"checkpoint", o.checkpoint.string()}, {"draws", o.draws},
                            {"images", ds.images.size()},      {"canonical", o.canonical},
                            {"random_scale", o.random_scale}};
        const fs::path dir = cfg.output_dir;

        std::string csv = "row,col,mean_loss,count\n";
        for (int r = 0; r < map.rows; ++r) {
          for (int c = 0; c < map.cols; ++c) {
            csv += std::to_string(r) + ',' + std::to_string(c) + ',' + fmt(mean(r, c)) + ',' +
                   std::to_string(map.count(r, c)) + '\n';
          }
        }
        write_text(dir / "loss_map.csv", csv);
        write_sidecar(dir / "loss_map.csv", "loss-map", hash, cfg.seed, extra);

        write_png(dir / "loss_map.png", render_heatmap(map, o.cell_px));
        write_sidecar(dir / "loss_map.png", "loss-map", hash, cfg.seed, extra);

        std::vector<double> losses;
        losses.reserve(records.size());
        std::string tokens = "image,draw,grid_rows,grid_cols,row,col,loss\n";
        for (const auto& rec : records) {
          losses.push_back(rec.loss);
          tokens += std::to_string(rec.image_index) + ',' + std::to_string(rec.draw) + ',' +
                    std::to_string(rec.grid_rows) + ',' + std::to_string(rec.grid_cols) + ',' +
                    std::to_string(rec.position.row) + ',' + std::to_string(rec.position.col) + ',' + fmt(rec.loss) +
                    '\n';
        }
        write_text(dir / "loss_tokens.csv", tokens);
        write_sidecar(dir / "loss_tokens.csv", "loss-map", hash, cfg.seed, extra);

        const auto [lo_it, hi_it] = std::minmax_element(losses.begin(), losses.end());
        const double lo = *lo_it, hi = *hi_it;
        std::vector<std::size_t> counts(static_cast<std::size_t>(o.bins), 0);
        const double width = hi > lo ? (hi - lo) / o.bins : 1.0;
        for (double v : losses) {
          auto b = static_cast<std::size_t>(std::floor((v - lo) / width));
          counts[std::min(b, counts.size() - 1)]++;
        }
        std::string hist = "bin_lo,bin_hi,count\n";
        for (std::size_t b = 0; b < counts.size(); ++b) {
          hist += fmt(lo + width * static_cast<double>(b)) + ',' + fmt(lo + width * static_cast<double>(b + 1)) + ',' +
                  std::to_string(counts[b]) + '\n';
        }
        write_text(dir / "loss_hist.csv", hist);
        write_sidecar(dir / "loss_hist.csv", "loss-map", hash, cfg.seed, extra);

        std::string stats = "count,quantile_ratio,excess_kurtosis,degenerate,checkerboard\n";
        stats += std::to_string(losses.size()) + ',';
        if (losses.size() >= 1000) {
          const TailStats t = tail_stats(losses);
          stats += fmt(t.quantile_ratio) + ',' + fmt(t.excess_kurtosis) + ',' + (t.degenerate ? "1" : "0");
        } else {
          err << "fewer than 1000 losses; tail statistics skipped\n";
          stats += "nan,nan,1";
        }
        const double cb = checkerboard_score(map);
        stats += ',' + fmt(cb) + '\n';
        write_text(dir / "loss_stats.csv", stats);
        write_sidecar(dir / "loss_stats.csv", "loss-map", hash, cfg.seed, extra);
        out << stats;
      },
      err);
}

// ---------------------------------------------------------------- probe

int cmd_probe(const ProbeOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        const RunConfig cfg = resolve_config(o.run, true);
        const std::string hash = config_hash(cfg);
        const TrainState state = load_checkpoint(o.checkpoint, cfg);
        const Dataset ds = load_dataset(cfg.dataset);
        if (std::any_of(ds.labels.begin(), ds.labels.end(), [](int l) { return l < 0; })) {
          throw FormatError("probe needs a label for every image");
        }
        if (ds.num_classes() < 2) throw FormatError("probe needs at least two classes");
        const int num_hidden = cfg.model.layers + 1;
        const std::vector<int> layers = parse_layers(o.layers, num_hidden);
        int resolution = o.resolution;
        if (resolution == 0) resolution = common_resolution(ds.images, cfg.model.patch_size);
        if (resolution % cfg.model.patch_size != 0) throw ConfigError("--resolution must be a multiple of the patch size");

        const EncoderParams& enc = o.use_student ? state.model.student : state.model.teacher;
        const auto all = mean_pooled_features(enc, cfg.model, ds.images, resolution);
        std::vector<Mat> selected;
        for (int l : layers) selected.push_back(all[static_cast<std::size_t>(l)]);
        ProbeConfig pc = o.probe;
        pc.seed = cfg.seed;
        auto results = linear_probe(selected, ds.labels, pc);
        for (std::size_t i = 0; i < results.size(); ++i) results[i].layer = layers[i];
        const std::size_t best = best_layer(results);

        std::string csv = "layer,accuracy,best,rankme\n";
        for (std::size_t i = 0; i < results.size(); ++i) {
          const Mat& f = selected[i];
          const double rank = f.isZero(0.0) ? std::numeric_limits<double>::quiet_NaN() : rankme(f);
          csv += std::to_string(results[i].layer) + ',' + fmt(results[i].accuracy) + ',' + (i == best ? "1" : "0") + ',' +
                 fmt(rank) + '\n';
        }
        const fs::path path = cfg.output_dir / "probe.csv";
        write_text(path, csv);
        write_sidecar(path, "probe", hash, cfg.seed,
                      {{"checkpoint", o.checkpoint.string()},
                       {"resolution", resolution},
                       {"encoder", o.use_student ? "student" : "teacher"},
                       {"epochs", pc.epochs},
                       {"lr", pc.lr},
                       {"holdout", pc.holdout}});
        out << csv;
      },
      err);
}

// ---------------------------------------------------------------- visualize

int cmd_visualize(const VisualizeOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        const RunConfig cfg = resolve_config(o.run, !o.image.has_value());
        const std::string hash = config_hash(cfg);
        const TrainState state = load_checkpoint(o.checkpoint, cfg);
        RawImage img;
        if (o.image) {
          img = read_image(*o.image);
        } else {
          Dataset ds = load_dataset(cfg.dataset);
          if (o.index >= ds.size()) throw ConfigError("--index is past the end of the dataset");
          img = std::move(ds.images[o.index]);
        }
        const int p = cfg.model.patch_size;
        if (o.resolution > 0) {
          if (o.resolution % p != 0) throw ConfigError("--resolution must be a multiple of the patch size");
          img = resize_bilinear(center_crop_square(img), o.resolution, o.resolution);
        } else {
          const int h = img.height / p * p, w = img.width / p * p;
          if (h == 0 || w == 0) throw RejectedSample("image is smaller than one patch");
          RawImage crop;
          crop.height = h;
          crop.width = w;
          crop.channels = img.channels;
          crop.pixels.resize(static_cast<std::size_t>(h) * w * img.channels);
          const int y0 = (img.height - h) / 2, x0 = (img.width - w) / 2;
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
              for (int c = 0; c < img.channels; ++c) crop.at(y, x, c) = img.at(y + y0, x + x0, c);
          img = std::move(crop);
        }
        const auto hidden = encode_hidden(state.model.teacher, cfg.model, img);
        const int num_hidden = static_cast<int>(hidden.size());
        int layer = o.layer.value_or(std::max(num_hidden - 3, 0));
        if (layer < 0) layer += num_hidden;
        if (layer < 0 || layer >= num_hidden) throw ConfigError("--layer is out of range");
        const int size_h = o.out_size > 0 ? o.out_size : img.height;
        const int size_w = o.out_size > 0 ? o.out_size : img.width;
        const Visualization vis = pca_visualize(hidden[static_cast<std::size_t>(layer)], img.height / p, img.width / p,
                                                size_h, size_w);
        if (vis.degenerate) err << "features have no variance; wrote a flat image\n";
        const fs::path path = cfg.output_dir / "pca.png";
        fs::create_directories(cfg.output_dir);
        write_png(path, vis.image);
        write_sidecar(path, "visualize", hash, cfg.seed,
                      {{"checkpoint", o.checkpoint.string()}, {"layer", layer}, {"degenerate", vis.degenerate}});
        out << path.string() << "\n";
      },
      err);
}

// ---------------------------------------------------------------- pack-bench

std::pair<LengthRange, LengthRange> parse_length_dist(const std::string& spec) {
  static const std::regex re(R"(\s*ctx\s*:\s*(\d+)\s*\.\.\s*(\d+)\s*,\s*tgt\s*:\s*(\d+)\s*\.\.\s*(\d+)\s*)");
  std::smatch m;
  if (!std::regex_match(spec, m, re)) throw ConfigError("--dist: expected \"ctx:a..b,tgt:c..d\", got \"" + spec + "\"");
  const LengthRange ctx{std::stoi(m[1]), std::stoi(m[2])};
  const LengthRange tgt{std::stoi(m[3]), std::stoi(m[4])};
  if (ctx.lo < 1 || tgt.lo < 1 || ctx.lo > ctx.hi || tgt.lo > tgt.hi) {
    throw ConfigError("--dist: ranges must satisfy 1 <= lo <= hi");
  }
  return {ctx, tgt};
}

PackBenchResult run_pack_bench(const PackBenchOptions& o) {
  o.packer.validate();
  const auto [ctx, tgt] = parse_length_dist(o.dist);
  if (ctx.hi > o.packer.ctx_capacity || tgt.hi > o.packer.tgt_capacity) {
    throw ConfigError("--dist: lengths exceed the row capacities");
  }
  Rng rng(o.seed, {tag(Stream::kBench)});
  OnlinePacker packer(o.packer);
  PackBenchResult r;
  auto record = [&](bool drain) {
    const PackedBatch b = packer.emit();
    const auto [oc, ot] = occupancy(b);
    r.batches.push_back({b.placements.size(), oc, ot, packer.pending().size(), drain});
    r.max_carryover = std::max(r.max_carryover, packer.pending().size());
  };
  for (std::size_t i = 0; i < o.samples; ++i) {
    PatchedSample s;
    s.id = static_cast<SampleId>(i + 1);
    const int n = ctx.lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(ctx.hi - ctx.lo + 1)));
    const int m = tgt.lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(tgt.hi - tgt.lo + 1)));
    s.grid_rows = 1;
    s.grid_cols = n + m;
    s.context = Mat(n, 0);
    s.target = Mat(m, 0);
    for (int k = 0; k < n; ++k) s.context_pos.push_back({0, k});
    for (int k = 0; k < m; ++k) s.target_pos.push_back({0, n + k});
    packer.push(std::move(s));
    while (packer.ready()) record(false);
  }
  while (!packer.pending().empty()) record(true);

  std::size_t live = 0;
  for (const auto& b : r.batches) {
    if (b.drain) continue;
    r.mean_occupancy_ctx += b.occupancy_ctx;
    r.mean_occupancy_tgt += b.occupancy_tgt;
    ++live;
  }
  if (live > 0) {
    r.mean_occupancy_ctx /= static_cast<double>(live);
    r.mean_occupancy_tgt /= static_cast<double>(live);
  }
  return r;
}

std::string pack_bench_csv(const PackBenchResult& r) {
  std::string csv = "batch,samples,occupancy_ctx,occupancy_tgt,carryover,drain\n";
  for (std::size_t i = 0; i < r.batches.size(); ++i) {
    const auto& b = r.batches[i];
    csv += std::to_string(i) + ',' + std::to_string(b.samples) + ',' + fmt(b.occupancy_ctx) + ',' +
           fmt(b.occupancy_tgt) + ',' + std::to_string(b.carryover) + ',' + (b.drain ? "1" : "0") + '\n';
  }
  return csv;
}

int cmd_pack_bench(const PackBenchOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        const PackBenchResult r = run_pack_bench(o);
        const std::string csv = pack_bench_csv(r);
        out << csv;
        err << "mean occupancy ctx " << r.mean_occupancy_ctx << " tgt " << r.mean_occupancy_tgt << ", max carryover "
            << r.max_carryover << "\n";
        if (o.output) {
          const json params = {{"dist", o.dist},
                               {"rows", o.packer.rows},
                               {"ctx_capacity", o.packer.ctx_capacity},
                               {"tgt_capacity", o.packer.tgt_capacity},
                               {"samples", o.samples}};
          write_text(*o.output, csv);
          write_sidecar(*o.output, "pack-bench", fnv1a_hex(params.dump()), o.seed,
                        {{"params", params},
                         {"mean_occupancy_ctx", r.mean_occupancy_ctx},
                         {"mean_occupancy_tgt", r.mean_occupancy_tgt},
                         {"max_carryover", r.max_carryover}});
        }
      },
      err);
}

// ---------------------------------------------------------------- make-synthetic

int cmd_make_synthetic(const SyntheticOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        if (o.out_dir.empty()) throw ConfigError("--out is required");
        if (o.count < 1 || o.classes < 1 || o.side < 4 || o.out_side < 1 || o.shards < 1) {
          throw ConfigError("synthetic dataset sizes must be positive");
        }
        const Dataset ds = make_synthetic_dataset(o.count, o.classes, o.side, o.out_side, o.shards, o.seed);
        const fs::path index = write_dataset(ds, o.out_dir);
        const json params = {{"count", o.count}, {"classes", o.classes}, {"side", o.side},
                             {"image_side", o.out_side}, {"shards", o.shards}};
        write_sidecar(index, "make-synthetic", fnv1a_hex(params.dump()), o.seed, {{"params", params}});
        out << index.string() << "\n";
      },
      err);
}

}  // namespace jepa::cli
