#pragma once

#include <span>

#include "jepa/packer.hpp"
#include "jepa/types.hpp"

// Forward/backward primitives shared by the encoder and the predictor.
// Backward functions accumulate parameter gradients into their out-params
// and return the gradient with respect to the input.
namespace jepa::nn {

struct LinearParams {
  Mat weight;  // in x out
  Vec bias;    // out
};

struct NormParams {
  Vec gain;
  Vec bias;
};

Mat linear_forward(const LinearParams& p, const Mat& x);
Mat linear_backward(const LinearParams& p, const Mat& x, const Mat& dy, LinearParams& grad);

struct LayerNormCache {
  Mat xhat;
  Vec inv_std;
};

/// Per-row standardization over the feature axis (1/d variance) followed by
/// gain and bias.
Mat layer_norm_forward(const Mat& x, const NormParams& p, double eps, LayerNormCache* cache);
Mat layer_norm_backward(const Mat& dy, const NormParams& p, const LayerNormCache& cache, NormParams& grad);

Mat gelu(const Mat& x);
Mat gelu_backward(const Mat& x, const Mat& dy);

/// Rotation angles for 2-D rotary embedding. The first half of a head's
/// channels rotates with the patch row, the second half with the column.
/// Each half is split into consecutive (even, odd) pairs with frequency
/// base^(-2i/half).
struct RopeTable {
  Mat cos;  // S x (head_dim/2)
  Mat sin;
};

RopeTable rope_table(std::span<const Pos> positions, Index head_dim, double base);
/// Rotates x (S x head_dim) in place; inverse=true applies the transpose.
void rope_apply(Eigen::Ref<Mat> x, const RopeTable& table, bool inverse = false);

struct RmsNormCache {
  Vec inv_rms;
};

/// Row-wise RMS normalization with a single scalar gain.
Mat rms_norm_forward(const Mat& x, double gain, double eps, RmsNormCache* cache);
Mat rms_norm_backward(const Mat& x, double gain, const RmsNormCache& cache, const Mat& dy, double& dgain);

/// Softmax over allowed entries only; rows with no allowed entry become zero.
Mat masked_softmax(const Mat& logits, const BoolMat& allowed);
Mat softmax_backward(const Mat& probs, const Mat& dprobs);

struct BlockParams {
  NormParams norm1;
  Mat wq;
  Mat wk;
  Mat wv;
  Vec q_gain;  // one gain per head
  Vec k_gain;
  LinearParams proj;
  NormParams norm2;
  LinearParams fc1;
  LinearParams fc2;
};

struct BlockShape {
  int heads = 1;
  double rope_base = 100.0;
  double eps = 1e-6;
};

struct BlockCache {
  Mat input;
  LayerNormCache ln1;
  Mat a;
  Mat q, k, v;  // projections before QK normalization
  std::vector<RmsNormCache> q_rms, k_rms;
  std::vector<Mat> qr, kr;  // normalized and rotated, per head
  std::vector<Mat> probs;   // per head
  Mat attn;                 // concatenated head outputs
  Mat mid;                  // residual stream after attention
  LayerNormCache ln2;
  Mat b;
  Mat pre_act;
  Mat act;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then + MLP(LN(.)).
/// QK-normalized, rotary-encoded multi-head attention restricted by mask.
Mat block_forward(const BlockParams& p, const BlockShape& shape, const Mat& x, const RopeTable& rope,
                  const AttentionMask& mask, BlockCache* cache);
Mat block_backward(const BlockParams& p, const BlockShape& shape, const RopeTable& rope, const BlockCache& cache,
                   const Mat& dy, BlockParams& grad);

}  // namespace jepa::nn
