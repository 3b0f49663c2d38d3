#include "jepa/model.hpp"

#include <cmath>
#include <set>
#include <string>

namespace jepa {

std::string_view to_string(PostprocMode mode) {
  return mode == PostprocMode::kLayerNorm ? "layernorm" : "dyntanh";
}

PostprocMode parse_postproc(std::string_view name) {
  if (name == "layernorm" || name == "ln") return PostprocMode::kLayerNorm;
  if (name == "dyntanh" || name == "tanh") return PostprocMode::kDynTanh;
  throw ConfigError("unknown postproc mode '" + std::string(name) + "' (expected layernorm or dyntanh)");
}

int ModelConfig::mlp_hidden(int width) const {
  return std::max(1, static_cast<int>(std::lround(width * mlp_ratio)));
}

void ModelConfig::validate() const {
  auto check_width = [this](int width, const char* what) {
    if (width < 1) throw ConfigError(std::string("model.") + what + " must be >= 1");
    if (width % heads != 0) throw ConfigError(std::string("model.") + what + " must be divisible by model.heads");
    if ((width / heads) % 4 != 0) {
      throw ConfigError(std::string("model.") + what + " / heads must be divisible by 4 for 2-D rotary pairs");
    }
  };
  if (heads < 1) throw ConfigError("model.heads must be >= 1");
  check_width(hidden_dim, "hidden_dim");
  check_width(predictor_dim, "predictor_dim");
  if (layers < 0 || predictor_layers < 0) throw ConfigError("layer counts must be >= 0");
  if (patch_size < 1 || channels < 1) throw ConfigError("model.patch_size and channels must be >= 1");
  if (mlp_ratio <= 0.0) throw ConfigError("model.mlp_ratio must be positive");
  if (rope_base <= 1.0) throw ConfigError("model.rope_base must be > 1");
  if (!(dyntanh_init > 0.0)) throw ConfigError("model.dyntanh_init must be positive");
}

namespace {

template <class F>
void visit_block(nn::BlockParams& b, const std::string& pre, F&& f) {
  f(pre + "norm1.gain", b.norm1.gain, Decay::kNo);
  f(pre + "norm1.bias", b.norm1.bias, Decay::kNo);
  f(pre + "attn.wq", b.wq, Decay::kYes);
  f(pre + "attn.wk", b.wk, Decay::kYes);
  f(pre + "attn.wv", b.wv, Decay::kYes);
  f(pre + "attn.q_gain", b.q_gain, Decay::kNo);
  f(pre + "attn.k_gain", b.k_gain, Decay::kNo);
  f(pre + "attn.proj.weight", b.proj.weight, Decay::kYes);
  f(pre + "attn.proj.bias", b.proj.bias, Decay::kNo);
  f(pre + "norm2.gain", b.norm2.gain, Decay::kNo);
  f(pre + "norm2.bias", b.norm2.bias, Decay::kNo);
  f(pre + "mlp.fc1.weight", b.fc1.weight, Decay::kYes);
  f(pre + "mlp.fc1.bias", b.fc1.bias, Decay::kNo);
  f(pre + "mlp.fc2.weight", b.fc2.weight, Decay::kYes);
  f(pre + "mlp.fc2.bias", b.fc2.bias, Decay::kNo);
}

template <class F>
void visit(EncoderParams& p, F&& f) {
  f(std::string("patch.weight"), p.patch.weight, Decay::kYes);
  f(std::string("patch.bias"), p.patch.bias, Decay::kNo);
  for (std::size_t l = 0; l < p.blocks.size(); ++l) visit_block(p.blocks[l], "blocks." + std::to_string(l) + ".", f);
  if (p.post.mode == PostprocMode::kLayerNorm) {
    f(std::string("post.norm.gain"), p.post.norm.gain, Decay::kNo);
    f(std::string("post.norm.bias"), p.post.norm.bias, Decay::kNo);
  } else {
    f(std::string("post.scale"), p.post.scale, Decay::kNo);
  }
}

template <class F>
void visit(PredictorParams& p, F&& f) {
  f(std::string("in.weight"), p.in.weight, Decay::kYes);
  f(std::string("in.bias"), p.in.bias, Decay::kNo);
  f(std::string("mask_token"), p.mask_token, Decay::kNo);
  for (std::size_t l = 0; l < p.blocks.size(); ++l) visit_block(p.blocks[l], "blocks." + std::to_string(l) + ".", f);
  f(std::string("out_norm.gain"), p.out_norm.gain, Decay::kNo);
  f(std::string("out_norm.bias"), p.out_norm.bias, Decay::kNo);
  f(std::string("out.weight"), p.out.weight, Decay::kYes);
  f(std::string("out.bias"), p.out.bias, Decay::kNo);
}

struct Collect {
  std::vector<TensorView>* out;
  void operator()(const std::string& name, Mat& m, Decay d) const { out->push_back({name, m.data(), m.rows(), m.cols(), d}); }
  void operator()(const std::string& name, Vec& v, Decay d) const { out->push_back({name, v.data(), v.size(), 1, d}); }
};

Mat lecun(Index in, Index out, Rng& rng) {
  const double std = 1.0 / std::sqrt(static_cast<double>(in));
  Mat w(in, out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = std * rng.normal();
  return w;
}

nn::LinearParams init_linear(Index in, Index out, Rng& rng) { return {lecun(in, out, rng), Vec::Zero(out)}; }

nn::NormParams init_norm(Index width) { return {Vec::Ones(width), Vec::Zero(width)}; }

nn::BlockParams init_block(const ModelConfig& cfg, int width, Rng& rng) {
  nn::BlockParams b;
  b.norm1 = init_norm(width);
  b.wq = lecun(width, width, rng);
  b.wk = lecun(width, width, rng);
  b.wv = lecun(width, width, rng);
  b.q_gain = Vec::Ones(cfg.heads);
  b.k_gain = Vec::Ones(cfg.heads);
  b.proj = init_linear(width, width, rng);
  b.norm2 = init_norm(width);
  b.fc1 = init_linear(width, cfg.mlp_hidden(width), rng);
  b.fc2 = init_linear(cfg.mlp_hidden(width), width, rng);
  return b;
}

void check_finite(const Mat& m, int layer, const char* where) {
  if (!m.allFinite()) {
    throw NumericFault(layer, std::string("non-finite activation in ") + where + " at layer " + std::to_string(layer));
  }
}

}  // namespace

std::vector<TensorView> tensors(EncoderParams& p) {
  std::vector<TensorView> out;
  visit(p, Collect{&out});
  return out;
}

std::vector<TensorView> tensors(PredictorParams& p) {
  std::vector<TensorView> out;
  visit(p, Collect{&out});
  return out;
}

EncoderParams init_encoder(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  p.patch = init_linear(cfg.token_dim(), cfg.hidden_dim, rng);
  for (int l = 0; l < cfg.layers; ++l) p.blocks.push_back(init_block(cfg, cfg.hidden_dim, rng));
  p.post.mode = cfg.postproc;
  if (cfg.postproc == PostprocMode::kLayerNorm) {
    p.post.norm = init_norm(cfg.hidden_dim);
  } else {
    p.post.scale = Vec::Constant(cfg.hidden_dim, cfg.dyntanh_init);
  }
  return p;
}

PredictorParams init_predictor(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  PredictorParams p;
  p.in = init_linear(cfg.hidden_dim, cfg.predictor_dim, rng);
  p.mask_token.resize(cfg.predictor_dim);
  for (Index i = 0; i < p.mask_token.size(); ++i) p.mask_token(i) = 0.02 * rng.normal();
  for (int l = 0; l < cfg.predictor_layers; ++l) p.blocks.push_back(init_block(cfg, cfg.predictor_dim, rng));
  p.out_norm = init_norm(cfg.predictor_dim);
  p.out = init_linear(cfg.predictor_dim, cfg.hidden_dim, rng);
  return p;
}

EncoderParams zeros_like(const EncoderParams& p) {
  EncoderParams z = p;
  for (auto& t : tensors(z)) std::fill(t.span().begin(), t.span().end(), 0.0);
  return z;
}

PredictorParams zeros_like(const PredictorParams& p) {
  PredictorParams z = p;
  for (auto& t : tensors(z)) std::fill(t.span().begin(), t.span().end(), 0.0);
  return z;
}

Mat encoder_forward(const EncoderParams& p, const ModelConfig& cfg, const Mat& tokens, std::span<const Pos> positions,
                    const AttentionMask& mask, EncoderCache* cache, std::vector<Mat>* hidden) {
  if (tokens.cols() != p.patch.weight.rows()) {
    throw ContractViolation("encoder expects token dim " + std::to_string(p.patch.weight.rows()) + ", got " +
                            std::to_string(tokens.cols()));
  }
  if (static_cast<Index>(positions.size()) != tokens.rows() || mask.size() != tokens.rows()) {
    throw ContractViolation("encoder positions/mask do not match the token count");
  }
  const nn::BlockShape shape{cfg.heads, cfg.rope_base, cfg.norm_eps};
  nn::RopeTable rope = nn::rope_table(positions, cfg.hidden_dim / cfg.heads, cfg.rope_base);

  Mat h = nn::linear_forward(p.patch, tokens);
  check_finite(h, 0, "encoder");
  if (hidden) {
    hidden->clear();
    hidden->push_back(h);
  }
  if (cache) cache->blocks.assign(p.blocks.size(), {});
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    h = nn::block_forward(p.blocks[l], shape, h, rope, mask, cache ? &cache->blocks[l] : nullptr);
    check_finite(h, static_cast<int>(l) + 1, "encoder");
    if (hidden) hidden->push_back(h);
  }
  if (cache) {
    cache->input = tokens;
    cache->rope = std::move(rope);
    cache->mask = mask;
  }
  return h;
}

Mat encoder_backward(const EncoderParams& p, const ModelConfig& cfg, const EncoderCache& cache, const Mat& dfeatures,
                     EncoderParams& grad) {
  const nn::BlockShape shape{cfg.heads, cfg.rope_base, cfg.norm_eps};
  Mat dh = dfeatures;
  for (std::size_t l = p.blocks.size(); l-- > 0;) {
    dh = nn::block_backward(p.blocks[l], shape, cache.rope, cache.blocks[l], dh, grad.blocks[l]);
  }
  return nn::linear_backward(p.patch, cache.input, dh, grad.patch);
}

Mat postprocess(const Mat& features, const PostprocParams& p, double eps, PostprocCache* cache) {
  if (cache) cache->input = features;
  if (p.mode == PostprocMode::kLayerNorm) {
    return nn::layer_norm_forward(features, p.norm, eps, cache ? &cache->ln : nullptr);
  }
  return (features.array().rowwise() * p.scale.transpose().array()).tanh().matrix();
}

Mat postprocess_backward(const Mat& dy, const PostprocParams& p, const PostprocCache& cache, PostprocParams& grad) {
  if (p.mode == PostprocMode::kLayerNorm) return nn::layer_norm_backward(dy, p.norm, cache.ln, grad.norm);
  const Mat y = (cache.input.array().rowwise() * p.scale.transpose().array()).tanh().matrix();
  const Mat dz = dy.array() * (1.0 - y.array().square());
  grad.scale += (dz.array() * cache.input.array()).colwise().sum().transpose().matrix();
  return dz.array().rowwise() * p.scale.transpose().array();
}

FeatureBatch postprocess(const FeatureBatch& features, const PostprocParams& p, double eps) {
  return {postprocess(features.tokens, p, eps), features.ids, features.positions};
}

Mat predictor_forward(const PredictorParams& p, const ModelConfig& cfg, const Mat& context,
                      std::span<const Pos> context_pos, std::span<const SampleId> context_ids,
                      std::span<const Pos> target_pos, std::span<const SampleId> target_ids, PredictorCache* cache) {
  const Index nc = context.rows();
  const auto nt = static_cast<Index>(target_pos.size());
  if (static_cast<Index>(context_pos.size()) != nc || static_cast<Index>(context_ids.size()) != nc ||
      static_cast<Index>(target_ids.size()) != nt) {
    throw ContractViolation("predictor inputs have inconsistent lengths");
  }
  if (context.cols() != cfg.hidden_dim) throw ContractViolation("predictor context features must have hidden_dim columns");
  const std::set<SampleId> ctx_set(context_ids.begin(), context_ids.end());
  for (SampleId id : target_ids) {
    if (id == kPaddingId || !ctx_set.contains(id)) {
      throw ContractViolation("target sample " + std::to_string(id) + " has no context tokens in its row");
    }
  }

  std::vector<Pos> positions(context_pos.begin(), context_pos.end());
  positions.insert(positions.end(), target_pos.begin(), target_pos.end());
  std::vector<SampleId> ids(context_ids.begin(), context_ids.end());
  ids.insert(ids.end(), target_ids.begin(), target_ids.end());

  Mat h(nc + nt, cfg.predictor_dim);
  h.topRows(nc) = nn::linear_forward(p.in, context);
  h.bottomRows(nt).rowwise() = p.mask_token.transpose();

  PredictorCache local;
  PredictorCache& c = cache ? *cache : local;
  c.context_in = context;
  c.context_rows = nc;
  c.rope = nn::rope_table(positions, cfg.predictor_dim / cfg.heads, cfg.rope_base);
  c.mask = build_mask(ids);
  c.blocks.assign(p.blocks.size(), {});
  const nn::BlockShape shape{cfg.heads, cfg.rope_base, cfg.norm_eps};
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    h = nn::block_forward(p.blocks[l], shape, h, c.rope, c.mask, &c.blocks[l]);
    check_finite(h, static_cast<int>(l) + 1, "predictor");
  }
  c.normed = nn::layer_norm_forward(h.bottomRows(nt), p.out_norm, cfg.norm_eps, &c.out_ln);
  return nn::linear_forward(p.out, c.normed);
}

Mat predictor_backward(const PredictorParams& p, const ModelConfig& cfg, const PredictorCache& c, const Mat& dout,
                       PredictorParams& grad) {
  const Index nc = c.context_rows;
  const Index nt = dout.rows();
  const Mat dnormed = nn::linear_backward(p.out, c.normed, dout, grad.out);
  Mat dh = Mat::Zero(nc + nt, cfg.predictor_dim);
  dh.bottomRows(nt) = nn::layer_norm_backward(dnormed, p.out_norm, c.out_ln, grad.out_norm);
  const nn::BlockShape shape{cfg.heads, cfg.rope_base, cfg.norm_eps};
  for (std::size_t l = p.blocks.size(); l-- > 0;) {
    dh = nn::block_backward(p.blocks[l], shape, c.rope, c.blocks[l], dh, grad.blocks[l]);
  }
  grad.mask_token += dh.bottomRows(nt).colwise().sum().transpose();
  return nn::linear_backward(p.in, c.context_in, dh.topRows(nc), grad.in);
}

double smooth_l1_elem(double e) {
  const double a = std::abs(e);
  return a < kSmoothL1Beta ? 0.5 * e * e / kSmoothL1Beta : a - 0.5 * kSmoothL1Beta;
}

SmoothL1 smooth_l1(const Mat& pred, const Mat& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ContractViolation("smooth_l1 shape mismatch");
  SmoothL1 out;
  out.token_losses = (pred - target).unaryExpr(&smooth_l1_elem).rowwise().mean();
  out.loss = out.token_losses.size() ? out.token_losses.mean() : 0.0;
  return out;
}

Mat smooth_l1_grad(const Mat& pred, const Mat& target, double weight) {
  const double w = weight / static_cast<double>(pred.cols());
  return (pred - target).unaryExpr([w](double e) {
    return w * (std::abs(e) < kSmoothL1Beta ? e / kSmoothL1Beta : (e > 0 ? 1.0 : -1.0));
  });
}

}  // namespace jepa
