#include "jepa/config.hpp"

#include <cstdio>
#include <fstream>
#include <optional>
#include <set>

namespace jepa {

using nlohmann::json;

void RunConfig::validate(bool check_paths) const {
  pipeline.validate();
  packer.validate();
  model.validate();
  train.validate();
  if (pipeline.patch_size != model.patch_size) throw ConfigError("pipeline.patch_size must equal model.patch_size");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (check_paths && !std::filesystem::exists(dataset)) {
    throw ConfigError("dataset: " + dataset.string() + " does not exist");
  }
}

json to_json(const RunConfig& c) {
  return json{
      {"seed", c.seed},
      {"dataset", c.dataset.string()},
      {"output_dir", c.output_dir.string()},
      {"checkpoint_every", c.checkpoint_every},
      {"pipeline",
       {{"patch_size", c.pipeline.patch_size},
        {"min_side", c.pipeline.min_side},
        {"scale_range", {c.pipeline.scale_lo, c.pipeline.scale_hi}},
        {"capacity_range", {c.pipeline.capacity_lo, c.pipeline.capacity_hi}},
        {"window_size", c.pipeline.window_size}}},
      {"packer",
       {{"rows", c.packer.rows}, {"ctx_capacity", c.packer.ctx_capacity}, {"tgt_capacity", c.packer.tgt_capacity}}},
      {"model",
       {{"hidden_dim", c.model.hidden_dim},
        {"layers", c.model.layers},
        {"heads", c.model.heads},
        {"patch_size", c.model.patch_size},
        {"channels", c.model.channels},
        {"mlp_ratio", c.model.mlp_ratio},
        {"predictor_dim", c.model.predictor_dim},
        {"predictor_layers", c.model.predictor_layers},
        {"rope_base", c.model.rope_base},
        {"postproc", std::string(to_string(c.model.postproc))},
        {"norm_eps", c.model.norm_eps},
        {"dyntanh_init", c.model.dyntanh_init}}},
      {"train",
       {{"repetition", c.train.repetition},
        {"drop_rate", c.train.drop_rate},
        {"steps", c.train.steps},
        {"workers", c.train.workers},
        {"lr", {{"lr0", c.train.lr.lr0}, {"peak", c.train.lr.peak}, {"warmup", c.train.lr.warmup}}},
        {"ema",
         {{"start", c.train.ema.start},
          {"mid", c.train.ema.mid},
          {"end", c.train.ema.end},
          {"warmup", c.train.ema.warmup},
          {"ramp", c.train.ema.ramp}}},
        {"adamw",
         {{"beta1", c.train.adamw.beta1},
          {"beta2", c.train.adamw.beta2},
          {"eps", c.train.adamw.eps},
          {"weight_decay", c.train.adamw.weight_decay}}}}},
  };
}

namespace {

/// Reads known keys from one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + "expected an object");
  }
  void done() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError(where(k) + "unknown key");
    }
  }

  template <class T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(where(key) + "expected " + type_name<T>());
    }
  }

  void read_range(const std::string& key, double& lo, double& hi) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw ConfigError(where(key) + "expected [lo, hi]");
    }
    lo = v[0].get<double>();
    hi = v[1].get<double>();
  }

  template <class F>
  void sub(const std::string& key, F&& body) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    Section s(j_.at(key), path_.empty() ? key : path_ + "." + key);
    body(s);
    s.done();
  }

 private:
  template <class T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, double>) return "a number";
    else if constexpr (std::is_unsigned_v<T>) return "a non-negative integer";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else return "a string";
  }
  std::string where(const std::string& key) const {
    std::string p = path_.empty() ? key : (key.empty() ? path_ : path_ + "." + key);
    return p.empty() ? std::string("config: ") : p + ": ";
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  {
    Section root(j, "");
    std::string dataset, output_dir = c.output_dir.string();
    root.read("seed", c.seed);
    root.read("dataset", dataset);
    root.read("output_dir", output_dir);
    root.read("checkpoint_every", c.checkpoint_every);
    c.dataset = dataset;
    if (!dataset.empty() && c.dataset.is_relative() && !base_dir.empty()) c.dataset = base_dir / c.dataset;
    c.output_dir = output_dir;
    root.sub("pipeline", [&](Section& s) {
      s.read("patch_size", c.pipeline.patch_size);
      s.read("min_side", c.pipeline.min_side);
      s.read_range("scale_range", c.pipeline.scale_lo, c.pipeline.scale_hi);
      s.read_range("capacity_range", c.pipeline.capacity_lo, c.pipeline.capacity_hi);
      s.read("window_size", c.pipeline.window_size);
    });
    root.sub("packer", [&](Section& s) {
      s.read("rows", c.packer.rows);
      s.read("ctx_capacity", c.packer.ctx_capacity);
      s.read("tgt_capacity", c.packer.tgt_capacity);
    });
    root.sub("model", [&](Section& s) {
      std::string post(to_string(c.model.postproc));
      s.read("hidden_dim", c.model.hidden_dim);
      s.read("layers", c.model.layers);
      s.read("heads", c.model.heads);
      s.read("patch_size", c.model.patch_size);
      s.read("channels", c.model.channels);
      s.read("mlp_ratio", c.model.mlp_ratio);
      s.read("predictor_dim", c.model.predictor_dim);
      s.read("predictor_layers", c.model.predictor_layers);
      s.read("rope_base", c.model.rope_base);
      s.read("postproc", post);
      s.read("norm_eps", c.model.norm_eps);
      s.read("dyntanh_init", c.model.dyntanh_init);
      try {
        c.model.postproc = parse_postproc(post);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("model.postproc: ") + e.what());
      }
    });
    root.sub("train", [&](Section& s) {
      s.read("repetition", c.train.repetition);
      s.read("drop_rate", c.train.drop_rate);
      s.read("steps", c.train.steps);
      s.read("workers", c.train.workers);
      s.sub("lr", [&](Section& lr) {
        lr.read("lr0", c.train.lr.lr0);
        lr.read("peak", c.train.lr.peak);
        lr.read("warmup", c.train.lr.warmup);
      });
      s.sub("ema", [&](Section& ema) {
        ema.read("start", c.train.ema.start);
        ema.read("mid", c.train.ema.mid);
        ema.read("end", c.train.ema.end);
        ema.read("warmup", c.train.ema.warmup);
        ema.read("ramp", c.train.ema.ramp);
      });
      s.sub("adamw", [&](Section& aw) {
        aw.read("beta1", c.train.adamw.beta1);
        aw.read("beta2", c.train.adamw.beta2);
        aw.read("eps", c.train.adamw.eps);
        aw.read("weight_decay", c.train.adamw.weight_decay);
      });
    });
    root.done();
  }
  c.train.seed = c.seed;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

std::string config_hash(const RunConfig& cfg) { return fnv1a_hex(to_json(cfg).dump()); }

std::string fnv1a_hex(std::string_view dump) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace jepa
