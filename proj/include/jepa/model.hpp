#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "jepa/layers.hpp"
#include "jepa/packer.hpp"
#include "jepa/rng.hpp"
#include "jepa/types.hpp"

namespace jepa {

/// Feature post-processing applied to encoder outputs before they enter the
/// objective.
enum class PostprocMode {
  kLayerNorm,  // per-token standardization with learnable gain and bias
  kDynTanh,    // tanh(a * x) with a learnable per-channel scale, no affine
};

std::string_view to_string(PostprocMode mode);
PostprocMode parse_postproc(std::string_view name);

struct ModelConfig {
  int hidden_dim = 32;
  int layers = 2;
  int heads = 2;
  int patch_size = 16;
  int channels = 3;
  double mlp_ratio = 4.0;
  int predictor_dim = 16;
  int predictor_layers = 2;
  double rope_base = 100.0;
  PostprocMode postproc = PostprocMode::kLayerNorm;
  double norm_eps = 1e-6;
  double dyntanh_init = 1.0;

  int token_dim() const { return patch_size * patch_size * channels; }
  int mlp_hidden(int width) const;
  void validate() const;
};

struct PostprocParams {
  PostprocMode mode = PostprocMode::kLayerNorm;
  nn::NormParams norm;  // LayerNorm mode
  Vec scale;            // DynTanh mode
};

struct EncoderParams {
  nn::LinearParams patch;
  std::vector<nn::BlockParams> blocks;
  PostprocParams post;
};

struct PredictorParams {
  nn::LinearParams in;
  Vec mask_token;
  std::vector<nn::BlockParams> blocks;
  nn::NormParams out_norm;
  nn::LinearParams out;
};

/// Whether AdamW weight decay applies to a tensor.
enum class Decay { kYes, kNo };

/// Flat, named view of one parameter tensor.
struct TensorView {
  std::string name;
  double* data;
  Index rows;
  Index cols;
  Decay decay;
  Index size() const { return rows * cols; }
  std::span<double> span() const { return {data, static_cast<std::size_t>(size())}; }
};

/// Every tensor in a fixed order. Only the active post-processing variant is
/// listed.
std::vector<TensorView> tensors(EncoderParams& p);
std::vector<TensorView> tensors(PredictorParams& p);

EncoderParams init_encoder(const ModelConfig& cfg, Rng& rng);
PredictorParams init_predictor(const ModelConfig& cfg, Rng& rng);
EncoderParams zeros_like(const EncoderParams& p);
PredictorParams zeros_like(const PredictorParams& p);

/// Tokens with provenance, as they flow between model stages.
struct FeatureBatch {
  Mat tokens;
  std::vector<SampleId> ids;
  std::vector<Pos> positions;
};

struct EncoderCache {
  Mat input;
  std::vector<nn::BlockCache> blocks;
  nn::RopeTable rope;
  AttentionMask mask;
};

/// Runs patch projection and the transformer stack; returns raw features
/// (before post-processing). If hidden is given it receives the residual
/// stream after the patch projection and after every block (layers+1 entries).
/// Throws NumericFault naming the layer when an activation is not finite.
Mat encoder_forward(const EncoderParams& p, const ModelConfig& cfg, const Mat& tokens, std::span<const Pos> positions,
                    const AttentionMask& mask, EncoderCache* cache = nullptr, std::vector<Mat>* hidden = nullptr);
/// Returns the gradient with respect to the input tokens.
Mat encoder_backward(const EncoderParams& p, const ModelConfig& cfg, const EncoderCache& cache, const Mat& dfeatures,
                     EncoderParams& grad);

struct PostprocCache {
  nn::LayerNormCache ln;
  Mat input;
};

Mat postprocess(const Mat& features, const PostprocParams& p, double eps, PostprocCache* cache = nullptr);
Mat postprocess_backward(const Mat& dy, const PostprocParams& p, const PostprocCache& cache, PostprocParams& grad);
FeatureBatch postprocess(const FeatureBatch& features, const PostprocParams& p, double eps);

struct PredictorCache {
  Mat context_in;
  std::vector<nn::BlockCache> blocks;
  nn::RopeTable rope;
  AttentionMask mask;
  nn::LayerNormCache out_ln;
  Mat normed;
  Index context_rows = 0;
};

/// Projects the context features, appends one mask-token copy per requested
/// target position, runs the masked transformer and reads predictions off
/// the mask-token slots. Returns one d-dimensional row per target.
/// Throws ContractViolation if a target sample has no context token.
Mat predictor_forward(const PredictorParams& p, const ModelConfig& cfg, const Mat& context,
                      std::span<const Pos> context_pos, std::span<const SampleId> context_ids,
                      std::span<const Pos> target_pos, std::span<const SampleId> target_ids,
                      PredictorCache* cache = nullptr);
/// Returns the gradient with respect to the context features.
Mat predictor_backward(const PredictorParams& p, const ModelConfig& cfg, const PredictorCache& cache, const Mat& dout,
                       PredictorParams& grad);

inline constexpr double kSmoothL1Beta = 1.0;

struct SmoothL1 {
  double loss = 0.0;  // mean of token_losses
  Vec token_losses;   // per-row mean over features
};

double smooth_l1_elem(double e);
SmoothL1 smooth_l1(const Mat& pred, const Mat& target);
/// d(sum of token losses * weight)/d(pred).
Mat smooth_l1_grad(const Mat& pred, const Mat& target, double weight);

}  // namespace jepa
