#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "jepa/analysis.hpp"
#include "jepa/commands.hpp"
#include "jepa/config.hpp"
#include "jepa/image.hpp"
#include "jepa/packer.hpp"
#include "jepa/pipeline.hpp"
#include "jepa/trainer.hpp"

namespace py = pybind11;
using namespace jepa;
using ImageArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

namespace {

RawImage to_image(const ImageArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw ContractViolation("expected an H x W x 3 uint8 array");
  RawImage img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), 3);
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

ImageArray from_image(const RawImage& img) {
  ImageArray a({img.height, img.width, img.channels});
  std::copy(img.pixels.begin(), img.pixels.end(), a.mutable_data());
  return a;
}

RunConfig config_from(const std::string& text) { return run_config_from_json(nlohmann::json::parse(text)); }

py::list positions(const std::vector<Pos>& ps) {
  py::list out;
  for (const auto& p : ps) out.append(py::make_tuple(p.row, p.col));
  return out;
}

py::dict sample_dict(const PatchedSample& s) {
  py::dict d;
  d["grid"] = py::make_tuple(s.grid_rows, s.grid_cols);
  d["context"] = s.context;
  d["context_pos"] = positions(s.context_pos);
  d["target"] = s.target;
  d["target_pos"] = positions(s.target_pos);
  return d;
}

/// Runs a command with captured streams; returns (exit code, stdout, stderr).
template <class Opt>
py::tuple run(int (*cmd)(const Opt&, std::ostream&, std::ostream&), const Opt& o) {
  std::ostringstream out, err;
  int code = 0;
  {
    py::gil_scoped_release release;
    code = cmd(o, out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

cli::RunOverrides overrides(const std::filesystem::path& config, std::optional<std::filesystem::path> out,
                            std::optional<std::uint64_t> seed, std::optional<std::string> postproc) {
  cli::RunOverrides r;
  r.config = config;
  r.output_dir = std::move(out);
  r.seed = seed;
  r.postproc = std::move(postproc);
  return r;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Packed JEPA core";

  // Translators are tried newest first, so the base class goes in first.
  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ContractViolation>(m, "ContractViolation", base.ptr());
  py::register_exception<RejectedSample>(m, "RejectedSample", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());

  m.def("default_config", [] { return to_json(RunConfig{}).dump(); });
  m.def("load_config", [](const std::filesystem::path& p) { return to_json(load_run_config(p)).dump(); });
  m.def("normalize_config", [](const std::string& text) { return to_json(config_from(text)).dump(); });
  m.def("config_hash", [](const std::string& text) { return config_hash(config_from(text)); });

  m.def("lr_at", [](std::int64_t step, const std::string& cfg) { return lr_at(step, config_from(cfg).train.lr); });
  m.def("ema_beta_at",
        [](std::int64_t step, const std::string& cfg) { return ema_beta_at(step, config_from(cfg).train.ema); });

  m.def("read_image", [](const std::filesystem::path& p) { return from_image(read_image(p)); });
  m.def("scale_image", [](const ImageArray& img, double s, const std::string& cfg) {
    return from_image(scale_image(to_image(img), s, config_from(cfg).pipeline));
  });
  m.def("patchify", [](const ImageArray& img, int patch_size) {
    const PatchGrid g = patchify(to_image(img), patch_size);
    return py::make_tuple(g.tokens, positions(g.positions));
  });
  m.def("sample", [](const ImageArray& img, const std::string& cfg, std::uint64_t seed) {
    Rng rng(seed, {tag(Stream::kSample), 0});
    return sample_dict(sample_pipeline(to_image(img), config_from(cfg).pipeline, rng));
  });

  m.def(
      "pack",
      [](const std::vector<std::pair<int, int>>& lengths, int rows, int ctx_capacity, int tgt_capacity) {
        std::vector<PatchedSample> q;
        for (std::size_t i = 0; i < lengths.size(); ++i) {
          PatchedSample s;
          s.id = static_cast<SampleId>(i + 1);
          const auto [n, k] = lengths[i];
          s.grid_rows = 1;
          s.grid_cols = n + k;
          s.context = Mat(n, 0);
          s.target = Mat(k, 0);
          for (int j = 0; j < n; ++j) s.context_pos.push_back({0, j});
          for (int j = 0; j < k; ++j) s.target_pos.push_back({0, n + j});
          q.push_back(std::move(s));
        }
        const PackResult r = pack(std::move(q), PackerConfig{rows, ctx_capacity, tgt_capacity});
        py::list placed;
        for (const auto& p : r.batch.placements) placed.append(py::make_tuple(p.id, p.row, p.ctx_offset, p.tgt_offset));
        std::vector<SampleId> carry;
        for (const auto& s : r.carryover) carry.push_back(s.id);
        const auto [oc, ot] = occupancy(r.batch);
        py::dict d;
        d["placements"] = placed;
        d["carryover"] = carry;
        d["ctx_ids"] = r.batch.ctx_ids;
        d["tgt_ids"] = r.batch.tgt_ids;
        d["occupancy"] = py::make_tuple(oc, ot);
        return d;
      },
      py::arg("lengths"), py::arg("rows"), py::arg("ctx_capacity"), py::arg("tgt_capacity"),
      "First-fit packing of (context, target) lengths; sample ids are 1-based list positions.");
  m.def("build_mask", [](const std::vector<SampleId>& ids) {
    const AttentionMask mask = build_mask(ids);
    py::array_t<bool> a({mask.size(), mask.size()});
    std::copy(mask.allowed.data(), mask.allowed.data() + mask.allowed.size(), a.mutable_data());
    return a;
  });

  m.def("smooth_l1", [](const Mat& pred, const Mat& target) {
    const SmoothL1 s = smooth_l1(pred, target);
    return py::make_tuple(s.loss, Vec(s.token_losses));
  });
  m.def("rankme", [](const Mat& f) { return rankme(f); });
  m.def("checkerboard_score", [](const Mat& values) { return checkerboard_score(LossMap::from_values(values)); });
  m.def("tail_stats", [](std::vector<double> v) {
    const TailStats t = tail_stats(std::move(v));
    return py::make_tuple(t.quantile_ratio, t.excess_kurtosis, t.degenerate);
  });
  m.def("pca_visualize", [](const Mat& features, int rows, int cols, int out_h, int out_w) {
    const Visualization v = pca_visualize(features, rows, cols, out_h, out_w);
    return py::make_tuple(from_image(v.image), v.degenerate);
  });

  m.def(
      "encode",
      [](const std::filesystem::path& checkpoint, const std::string& cfg_text, const ImageArray& img, bool student) {
        const RunConfig cfg = config_from(cfg_text);
        const TrainState st = checkpoint_load(checkpoint, cfg.model, cfg.train);
        return encode_hidden(student ? st.model.student : st.model.teacher, cfg.model, to_image(img));
      },
      py::arg("checkpoint"), py::arg("config"), py::arg("image"), py::arg("student") = false,
      "Hidden states (patch projection, then one per block) of a checkpoint's encoder.");

  m.def(
      "pretrain",
      [](const std::filesystem::path& config, std::optional<std::filesystem::path> out,
         std::optional<std::int64_t> steps, std::optional<std::uint64_t> seed, std::optional<std::string> postproc,
         bool resume) {
        cli::PretrainOptions o;
        o.run = overrides(config, std::move(out), seed, std::move(postproc));
        o.steps = steps;
        o.resume = resume;
        o.log_every = 0;
        return run(cli::cmd_pretrain, o);
      },
      py::arg("config"), py::arg("out") = py::none(), py::arg("steps") = py::none(), py::arg("seed") = py::none(),
      py::arg("postproc") = py::none(), py::arg("resume") = false);
  m.def(
      "loss_map",
      [](const std::filesystem::path& config, const std::filesystem::path& checkpoint,
         std::optional<std::filesystem::path> out, int draws, int max_images, int canonical, bool random_scale) {
        cli::LossMapOptions o;
        o.run = overrides(config, std::move(out), std::nullopt, std::nullopt);
        o.checkpoint = checkpoint;
        o.draws = draws;
        o.max_images = max_images;
        o.canonical = canonical;
        o.random_scale = random_scale;
        return run(cli::cmd_loss_map, o);
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("out") = py::none(), py::arg("draws") = 100,
      py::arg("max_images") = 0, py::arg("canonical") = 16, py::arg("random_scale") = false);
  m.def(
      "probe",
      [](const std::filesystem::path& config, const std::filesystem::path& checkpoint,
         std::optional<std::filesystem::path> out, const std::string& layers, int epochs) {
        cli::ProbeOptions o;
        o.run = overrides(config, std::move(out), std::nullopt, std::nullopt);
        o.checkpoint = checkpoint;
        o.layers = layers;
        o.probe.epochs = epochs;
        return run(cli::cmd_probe, o);
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("out") = py::none(), py::arg("layers") = "all",
      py::arg("epochs") = 50);
  m.def(
      "visualize",
      [](const std::filesystem::path& config, const std::filesystem::path& checkpoint,
         std::optional<std::filesystem::path> out, std::size_t index, std::optional<int> layer, int size) {
        cli::VisualizeOptions o;
        o.run = overrides(config, std::move(out), std::nullopt, std::nullopt);
        o.checkpoint = checkpoint;
        o.index = index;
        o.layer = layer;
        o.out_size = size;
        return run(cli::cmd_visualize, o);
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("out") = py::none(), py::arg("index") = 0,
      py::arg("layer") = py::none(), py::arg("size") = 0);
  m.def(
      "pack_bench",
      [](const std::string& dist, int rows, int ctx_capacity, int tgt_capacity, std::size_t samples,
         std::uint64_t seed) {
        cli::PackBenchOptions o;
        o.dist = dist;
        o.packer = {rows, ctx_capacity, tgt_capacity};
        o.samples = samples;
        o.seed = seed;
        const cli::PackBenchResult r = cli::run_pack_bench(o);
        py::dict d;
        d["mean_occupancy_ctx"] = r.mean_occupancy_ctx;
        d["mean_occupancy_tgt"] = r.mean_occupancy_tgt;
        d["max_carryover"] = r.max_carryover;
        d["batches"] = r.batches.size();
        d["csv"] = cli::pack_bench_csv(r);
        return d;
      },
      py::arg("dist") = "ctx:4..8,tgt:8..24", py::arg("rows") = 32, py::arg("ctx_capacity") = 64,
      py::arg("tgt_capacity") = 192, py::arg("samples") = 10'000, py::arg("seed") = 0);
  m.def(
      "make_synthetic",
      [](const std::filesystem::path& out, std::size_t count, int classes, int side, int image_side, int shards,
         std::uint64_t seed) {
        cli::SyntheticOptions o{out, count, classes, side, image_side, shards, seed};
        return run(cli::cmd_make_synthetic, o);
      },
      py::arg("out"), py::arg("count") = 64, py::arg("classes") = 4, py::arg("side") = 32, py::arg("image_side") = 64,
      py::arg("shards") = 4, py::arg("seed") = 0);
}
