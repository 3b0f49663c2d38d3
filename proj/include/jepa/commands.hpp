#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jepa/analysis.hpp"
#include "jepa/config.hpp"
#include "jepa/packer.hpp"

namespace jepa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

/// Overrides the output directory of every command.
inline constexpr const char* kOutDirEnv = "JEPA_OUT_DIR";

/// Flags shared by the config-driven commands. Set flags win over the file.
struct RunOverrides {
  std::filesystem::path config;
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> postproc;
  std::optional<std::filesystem::path> dataset;
};

/// Loads, overrides and validates; the output directory follows
/// flag > JEPA_OUT_DIR > config.
RunConfig resolve_config(const RunOverrides& o, bool need_dataset);

/// Writes `<artifact>.meta.json` next to an artifact.
void write_sidecar(const std::filesystem::path& artifact, const std::string& command, const std::string& hash,
                   std::uint64_t seed, nlohmann::json extra = nlohmann::json::object());

struct PretrainOptions {
  RunOverrides run;
  std::optional<std::int64_t> steps;
  std::optional<int> workers;
  bool resume = false;
  int log_every = 50;
};

struct LossMapOptions {
  RunOverrides run;
  std::filesystem::path checkpoint;
  int draws = 100;
  int max_images = 0;  // 0 = every image
  int canonical = 16;
  bool random_scale = false;
  int cell_px = 16;
  int bins = 50;
};

struct ProbeOptions {
  RunOverrides run;
  std::filesystem::path checkpoint;
  std::string layers = "all";
  int resolution = 0;  // 0 = largest multiple of the patch size fitting every image
  bool use_student = false;
  ProbeConfig probe;
};

struct VisualizeOptions {
  RunOverrides run;
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> image;
  std::size_t index = 0;  // dataset row when no image is given
  std::optional<int> layer;  // default: third from last hidden state
  int resolution = 0;        // 0 = crop to a multiple of the patch size
  int out_size = 0;          // 0 = encoded image size
};

struct LengthRange {
  int lo = 0;
  int hi = 0;
};

/// Parses "ctx:4..8,tgt:8..24".
std::pair<LengthRange, LengthRange> parse_length_dist(const std::string& spec);

struct PackBenchOptions {
  std::string dist = "ctx:4..8,tgt:8..24";
  PackerConfig packer;
  std::size_t samples = 10'000;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> output;
};

struct PackBenchBatch {
  std::size_t samples = 0;
  double occupancy_ctx = 0.0;
  double occupancy_tgt = 0.0;
  std::size_t carryover = 0;
  bool drain = false;
};

struct PackBenchResult {
  std::vector<PackBenchBatch> batches;
  double mean_occupancy_ctx = 0.0;  // over non-drain batches
  double mean_occupancy_tgt = 0.0;
  std::size_t max_carryover = 0;
};

/// Feeds a seeded stream of token-less samples through OnlinePacker and
/// drains it at the end.
PackBenchResult run_pack_bench(const PackBenchOptions& o);
std::string pack_bench_csv(const PackBenchResult& r);

struct SyntheticOptions {
  std::filesystem::path out_dir;
  std::size_t count = 64;
  int classes = 4;
  int side = 32;
  int out_side = 64;
  int shards = 4;
  std::uint64_t seed = 0;
};

/// Each command reports through `err` and returns an exit code instead of
/// throwing.
int cmd_pretrain(const PretrainOptions& o, std::ostream& out, std::ostream& err);
int cmd_loss_map(const LossMapOptions& o, std::ostream& out, std::ostream& err);
int cmd_probe(const ProbeOptions& o, std::ostream& out, std::ostream& err);
int cmd_visualize(const VisualizeOptions& o, std::ostream& out, std::ostream& err);
int cmd_pack_bench(const PackBenchOptions& o, std::ostream& out, std::ostream& err);
int cmd_make_synthetic(const SyntheticOptions& o, std::ostream& out, std::ostream& err);

/// Maps ConfigError to 1 and every other failure to 2.
int guarded(const std::function<void()>& body, std::ostream& err);

}  // namespace jepa::cli
