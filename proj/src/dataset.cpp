#include "jepa/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "jepa/types.hpp"

namespace jepa {

int Dataset::num_classes() const {
  int mx = -1;
  for (int l : labels) mx = std::max(mx, l);
  return mx + 1;
}

namespace {

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& index_file) {
  std::ifstream in(index_file);
  if (!in) throw ConfigError("cannot open dataset index " + index_file.string());
  const auto base = index_file.parent_path();
  Dataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(trim(f));
    if (fields.empty() || fields.size() > 3 || fields[0].empty()) {
      throw ConfigError(index_file.string() + ":" + std::to_string(line_no) + ": expected path[,label[,shard]]");
    }
    try {
      const int label = fields.size() > 1 && !fields[1].empty() ? std::stoi(fields[1]) : -1;
      const int shard = fields.size() > 2 && !fields[2].empty() ? std::stoi(fields[2]) : 0;
      std::filesystem::path p = fields[0];
      if (p.is_relative()) p = base / p;
      ds.images.push_back(read_image(p));
      ds.labels.push_back(label);
      ds.shards.push_back(shard);
    } catch (const std::invalid_argument&) {
      throw ConfigError(index_file.string() + ":" + std::to_string(line_no) + ": label and shard must be integers");
    }
  }
  if (ds.images.empty()) throw ConfigError("dataset index " + index_file.string() + " lists no images");
  return ds;
}

ShardIndex build_shard_index(const Dataset& ds) {
  std::map<int, ShardDescriptor> by_id;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto& d = by_id[ds.shards[i]];
    d.shard = ds.shards[i];
    d.members.push_back(i);
  }
  ShardIndex out;
  for (auto& [id, d] : by_id) out.push_back(std::move(d));
  return out;
}

RawImage synthetic_image(int label, int num_classes, int side, int out_side, Rng& rng) {
  RawImage img(side, side, 3);
  const double hue = (label + rng.uniform(-0.15, 0.15)) / std::max(num_classes, 1);
  const auto fg = hsv_to_rgb(hue, rng.uniform(0.6, 1.0), rng.uniform(0.7, 1.0));
  const auto bg = hsv_to_rgb(hue + 0.5, rng.uniform(0.1, 0.4), rng.uniform(0.2, 0.5));
  const double cx = rng.uniform(0.3, 0.7) * side;
  const double cy = rng.uniform(0.3, 0.7) * side;
  const double radius = rng.uniform(0.2, 0.35) * side;
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double freq = rng.uniform(0.15, 0.35);
  const int shape = label % 3;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      bool inside = false;
      switch (shape) {
        case 0: inside = dx * dx + dy * dy < radius * radius; break;
        case 1: inside = std::abs(dx) < radius && std::abs(dy) < radius; break;
        default: inside = std::sin((dx * std::cos(angle) + dy * std::sin(angle)) * freq * 2.0 * std::numbers::pi) > 0; break;
      }
      const auto& col = inside ? fg : bg;
      for (int c = 0; c < 3; ++c) {
        const double v = 255.0 * col[static_cast<std::size_t>(c)] + 12.0 * rng.normal();
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
      }
    }
  }
  return out_side == side ? img : resize_bilinear(img, out_side, out_side);
}

Dataset make_synthetic_dataset(std::size_t count, int num_classes, int side, int out_side, int num_shards,
                               std::uint64_t seed) {
  if (num_classes < 1 || num_shards < 1) throw ConfigError("synthetic dataset needs >= 1 class and shard");
  Dataset ds;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(seed, {tag(Stream::kSynthetic), i});
    const int label = static_cast<int>(i % static_cast<std::size_t>(num_classes));
    ds.images.push_back(synthetic_image(label, num_classes, side, out_side, rng));
    ds.labels.push_back(label);
    ds.shards.push_back(static_cast<int>(i % static_cast<std::size_t>(num_shards)));
  }
  return ds;
}

std::filesystem::path write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  const auto index = dir / "index.csv";
  std::ofstream out(index);
  if (!out) throw ConfigError("cannot write " + index.string());
  out << "# path,label,shard\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string name = "images/" + std::to_string(i) + ".png";
    write_png(dir / name, ds.images[i]);
    out << name << ',' << ds.labels[i] << ',' << ds.shards[i] << '\n';
  }
  return index;
}

}  // namespace jepa
