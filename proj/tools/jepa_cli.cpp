#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "jepa/commands.hpp"

namespace {

using namespace jepa::cli;

void add_run_flags(CLI::App* app, RunOverrides& run) {
  app->add_option("-c,--config", run.config, "JSON run config")->required();
  app->add_option("-o,--out", run.output_dir, "Output directory (overrides JEPA_OUT_DIR and the config)");
  app->add_option("--seed", run.seed, "Root seed");
  app->add_option("--postproc", run.postproc, "Feature post-processing: layernorm or dyntanh");
  app->add_option("--dataset", run.dataset, "Dataset index file");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Packed JEPA pretraining and analysis"};
  app.require_subcommand(1);

  PretrainOptions pre;
  auto* pretrain = app.add_subcommand("pretrain", "Train student, teacher and predictor");
  add_run_flags(pretrain, pre.run);
  pretrain->add_option("--steps", pre.steps, "Total optimizer steps");
  pretrain->add_option("--workers", pre.workers, "Pipeline worker threads");
  pretrain->add_flag("--resume", pre.resume, "Continue from <out>/checkpoint.jtns");
  pretrain->add_option("--log-every", pre.log_every, "Progress line interval (0 = quiet)");

  LossMapOptions lm;
  auto* loss_map = app.add_subcommand("loss-map", "Per-position prediction loss of a checkpoint");
  add_run_flags(loss_map, lm.run);
  loss_map->add_option("--checkpoint", lm.checkpoint)->required();
  loss_map->add_option("--draws", lm.draws, "Context/target draws per image");
  loss_map->add_option("--images", lm.max_images, "Use the first N images (0 = all)");
  loss_map->add_option("--canonical", lm.canonical, "Side of the canonical grid");
  loss_map->add_flag("--random-scale", lm.random_scale, "Apply the training resolution scaling");
  loss_map->add_option("--cell-px", lm.cell_px, "Heatmap pixels per cell");
  loss_map->add_option("--bins", lm.bins, "Histogram bins");

  ProbeOptions pr;
  auto* probe = app.add_subcommand("probe", "Linear probe on mean-pooled hidden states");
  add_run_flags(probe, pr.run);
  probe->add_option("--checkpoint", pr.checkpoint)->required();
  probe->add_option("--layers", pr.layers, "\"all\" or a comma-separated list");
  probe->add_option("--resolution", pr.resolution, "Square input side (0 = largest common multiple of the patch)");
  probe->add_flag("--student", pr.use_student, "Probe the student instead of the teacher");
  probe->add_option("--epochs", pr.probe.epochs);
  probe->add_option("--lr", pr.probe.lr);
  probe->add_option("--batch", pr.probe.batch);
  probe->add_option("--holdout", pr.probe.holdout);

  VisualizeOptions vo;
  auto* visualize = app.add_subcommand("visualize", "PCA colouring of patch features");
  add_run_flags(visualize, vo.run);
  visualize->add_option("--checkpoint", vo.checkpoint)->required();
  visualize->add_option("--image", vo.image, "Image file (PNG, JPEG or tensor)");
  visualize->add_option("--index", vo.index, "Dataset row when --image is absent");
  visualize->add_option("--layer", vo.layer, "Hidden state index; negative counts from the end");
  visualize->add_option("--resolution", vo.resolution, "Square input side (0 = crop to the patch grid)");
  visualize->add_option("--size", vo.out_size, "Output side in pixels (0 = input size)");

  PackBenchOptions pb;
  std::optional<std::string> pb_out;
  auto* pack_bench = app.add_subcommand("pack-bench", "Occupancy of the online packer on synthetic lengths");
  pack_bench->add_option("--dist", pb.dist, "Length ranges, e.g. ctx:4..8,tgt:8..24");
  pack_bench->add_option("--rows", pb.packer.rows);
  pack_bench->add_option("--ctx-capacity", pb.packer.ctx_capacity);
  pack_bench->add_option("--tgt-capacity", pb.packer.tgt_capacity);
  pack_bench->add_option("--samples", pb.samples);
  pack_bench->add_option("--seed", pb.seed);
  pack_bench->add_option("--out", pb_out, "Also write the CSV (and its sidecar) here");

  SyntheticOptions so;
  auto* synth = app.add_subcommand("make-synthetic", "Write a procedural labelled image dataset");
  synth->add_option("--out", so.out_dir)->required();
  synth->add_option("--count", so.count);
  synth->add_option("--classes", so.classes);
  synth->add_option("--side", so.side, "Render side before resizing");
  synth->add_option("--image-side", so.out_side, "Stored image side");
  synth->add_option("--shards", so.shards);
  synth->add_option("--seed", so.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (*pretrain) return cmd_pretrain(pre, std::cout, std::cerr);
  if (*loss_map) return cmd_loss_map(lm, std::cout, std::cerr);
  if (*probe) return cmd_probe(pr, std::cout, std::cerr);
  if (*visualize) return cmd_visualize(vo, std::cout, std::cerr);
  if (*pack_bench) {
    if (pb_out) pb.output = *pb_out;
    return cmd_pack_bench(pb, std::cout, std::cerr);
  }
  if (*synth) return cmd_make_synthetic(so, std::cout, std::cerr);
  return kExitConfig;
}
