#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "jepa/image.hpp"
#include "jepa/rng.hpp"

namespace jepa {

/// In-memory image collection with optional labels (-1 when absent) and
/// shard assignment.
struct Dataset {
  std::vector<RawImage> images;
  std::vector<int> labels;
  std::vector<int> shards;

  std::size_t size() const { return images.size(); }
  int num_classes() const;
};

/// Reads an index file: one "path[,label[,shard]]" record per line; blank
/// lines and lines starting with '#' are skipped. Relative paths resolve
/// against the index file's directory.
Dataset load_dataset(const std::filesystem::path& index_file);

/// One shard: the dataset rows it contains.
struct ShardDescriptor {
  int shard = 0;
  std::vector<std::size_t> members;
  std::size_t sample_count() const { return members.size(); }
};

using ShardIndex = std::vector<ShardDescriptor>;

/// Shards ordered by id; every dataset row belongs to exactly one.
ShardIndex build_shard_index(const Dataset& ds);

/// Procedural class-conditional image: a per-class hue and shape family on a
/// noisy background, rendered at `side` and bilinearly resized to `out_side`.
RawImage synthetic_image(int label, int num_classes, int side, int out_side, Rng& rng);

/// count images, labels cycling through classes, assigned round-robin to
/// `num_shards` shards.
Dataset make_synthetic_dataset(std::size_t count, int num_classes, int side, int out_side, int num_shards,
                               std::uint64_t seed);

/// Writes images as PNG plus "index.csv" into dir; returns the index path.
std::filesystem::path write_dataset(const Dataset& ds, const std::filesystem::path& dir);

}  // namespace jepa
