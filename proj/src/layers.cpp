#include "jepa/layers.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace jepa::nn {

Mat linear_forward(const LinearParams& p, const Mat& x) {
  Mat y = x * p.weight;
  y.rowwise() += p.bias.transpose();
  return y;
}

Mat linear_backward(const LinearParams& p, const Mat& x, const Mat& dy, LinearParams& grad) {
  grad.weight.noalias() += x.transpose() * dy;
  grad.bias += dy.colwise().sum().transpose();
  return dy * p.weight.transpose();
}

Mat layer_norm_forward(const Mat& x, const NormParams& p, double eps, LayerNormCache* cache) {
  const Index d = x.cols();
  Mat xhat(x.rows(), d);
  Vec inv_std(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().sum() / static_cast<double>(d);
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mean) * inv_std(i);
  }
  Mat y = (xhat.array().rowwise() * p.gain.transpose().array()).rowwise() + p.bias.transpose().array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat layer_norm_backward(const Mat& dy, const NormParams& p, const LayerNormCache& cache, NormParams& grad) {
  grad.gain += (dy.array() * cache.xhat.array()).colwise().sum().transpose().matrix();
  grad.bias += dy.colwise().sum().transpose();
  const Mat dxhat = dy.array().rowwise() * p.gain.transpose().array();
  Mat dx(dy.rows(), dy.cols());
  for (Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = dxhat.row(i).dot(cache.xhat.row(i)) / static_cast<double>(dy.cols());
    dx.row(i) = cache.inv_std(i) * (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

constexpr double kInvSqrt2 = 0.5 * std::numbers::sqrt2;

Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
}

Mat gelu_backward(const Mat& x, const Mat& dy) {
  const double inv_sqrt_2pi = std::numbers::inv_sqrtpi * kInvSqrt2;
  const Mat deriv = x.unaryExpr([inv_sqrt_2pi](double v) {
    return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
  });
  return dy.cwiseProduct(deriv);
}

RopeTable rope_table(std::span<const Pos> positions, Index head_dim, double base) {
  const Index half = head_dim / 2;
  const Index pairs_per_axis = half / 2;
  RopeTable t;
  t.cos.resize(static_cast<Index>(positions.size()), half);
  t.sin.resize(static_cast<Index>(positions.size()), half);
  for (Index s = 0; s < static_cast<Index>(positions.size()); ++s) {
    const Pos pos = positions[static_cast<std::size_t>(s)];
    for (Index p = 0; p < half; ++p) {
      const bool row_axis = p < pairs_per_axis;
      const Index i = row_axis ? p : p - pairs_per_axis;
      const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(half));
      const double angle = (row_axis ? pos.row : pos.col) * freq;
      t.cos(s, p) = std::cos(angle);
      t.sin(s, p) = std::sin(angle);
    }
  }
  return t;
}

void rope_apply(Eigen::Ref<Mat> x, const RopeTable& table, bool inverse) {
  const double sign = inverse ? -1.0 : 1.0;
  for (Index s = 0; s < x.rows(); ++s) {
    for (Index p = 0; p < table.cos.cols(); ++p) {
      const double c = table.cos(s, p);
      const double sn = sign * table.sin(s, p);
      const double x0 = x(s, 2 * p);
      const double x1 = x(s, 2 * p + 1);
      x(s, 2 * p) = x0 * c - x1 * sn;
      x(s, 2 * p + 1) = x0 * sn + x1 * c;
    }
  }
}

Mat rms_norm_forward(const Mat& x, double gain, double eps, RmsNormCache* cache) {
  Vec inv_rms(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    inv_rms(i) = 1.0 / std::sqrt(x.row(i).squaredNorm() / static_cast<double>(x.cols()) + eps);
  }
  Mat y = (x.array().colwise() * inv_rms.array()) * gain;
  if (cache) cache->inv_rms = std::move(inv_rms);
  return y;
}

Mat rms_norm_backward(const Mat& x, double gain, const RmsNormCache& cache, const Mat& dy, double& dgain) {
  const auto n = static_cast<double>(x.cols());
  Mat dx(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double r = cache.inv_rms(i);
    const double dot = dy.row(i).dot(x.row(i));
    dgain += dot * r;
    dx.row(i) = gain * r * dy.row(i) - (gain * r * r * r * dot / n) * x.row(i);
  }
  return dx;
}

Mat masked_softmax(const Mat& logits, const BoolMat& allowed) {
  Mat probs = Mat::Zero(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < logits.cols(); ++j) {
      if (allowed(i, j)) mx = std::max(mx, logits(i, j));
    }
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double sum = 0.0;
    for (Index j = 0; j < logits.cols(); ++j) {
      if (allowed(i, j)) {
        probs(i, j) = std::exp(logits(i, j) - mx);
        sum += probs(i, j);
      }
    }
    probs.row(i) /= sum;
  }
  return probs;
}

Mat softmax_backward(const Mat& probs, const Mat& dprobs) {
  const Vec inner = (probs.array() * dprobs.array()).rowwise().sum();
  return probs.array() * (dprobs.array().colwise() - inner.array());
}

Mat block_forward(const BlockParams& p, const BlockShape& shape, const Mat& x, const RopeTable& rope,
                  const AttentionMask& mask, BlockCache* cache) {
  const Index width = x.cols();
  const int heads = shape.heads;
  const Index hd = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  BlockCache local;
  BlockCache& c = cache ? *cache : local;
  c.input = x;
  c.a = layer_norm_forward(x, p.norm1, shape.eps, &c.ln1);
  c.q = c.a * p.wq;
  c.k = c.a * p.wk;
  c.v = c.a * p.wv;
  c.q_rms.assign(static_cast<std::size_t>(heads), {});
  c.k_rms.assign(static_cast<std::size_t>(heads), {});
  c.qr.assign(static_cast<std::size_t>(heads), {});
  c.kr.assign(static_cast<std::size_t>(heads), {});
  c.probs.assign(static_cast<std::size_t>(heads), {});
  c.attn.resize(x.rows(), width);

  for (int h = 0; h < heads; ++h) {
    const auto hs = static_cast<std::size_t>(h);
    Mat qh = rms_norm_forward(c.q.middleCols(h * hd, hd), p.q_gain(h), shape.eps, &c.q_rms[hs]);
    Mat kh = rms_norm_forward(c.k.middleCols(h * hd, hd), p.k_gain(h), shape.eps, &c.k_rms[hs]);
    rope_apply(qh, rope);
    rope_apply(kh, rope);
    const Mat logits = (qh * kh.transpose()) * scale;
    c.probs[hs] = masked_softmax(logits, mask.allowed);
    c.attn.middleCols(h * hd, hd) = c.probs[hs] * c.v.middleCols(h * hd, hd);
    c.qr[hs] = std::move(qh);
    c.kr[hs] = std::move(kh);
  }

  c.mid = x + linear_forward(p.proj, c.attn);
  c.b = layer_norm_forward(c.mid, p.norm2, shape.eps, &c.ln2);
  c.pre_act = linear_forward(p.fc1, c.b);
  c.act = gelu(c.pre_act);
  return c.mid + linear_forward(p.fc2, c.act);
}

Mat block_backward(const BlockParams& p, const BlockShape& shape, const RopeTable& rope, const BlockCache& c,
                   const Mat& dy, BlockParams& grad) {
  const Index width = dy.cols();
  const int heads = shape.heads;
  const Index hd = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  // MLP branch
  Mat dmid = dy;
  const Mat dact = linear_backward(p.fc2, c.act, dy, grad.fc2);
  const Mat dpre = gelu_backward(c.pre_act, dact);
  const Mat db = linear_backward(p.fc1, c.b, dpre, grad.fc1);
  dmid += layer_norm_backward(db, p.norm2, c.ln2, grad.norm2);

  // attention branch
  const Mat dattn = linear_backward(p.proj, c.attn, dmid, grad.proj);
  Mat dq(dy.rows(), width), dk(dy.rows(), width), dv(dy.rows(), width);
  for (int h = 0; h < heads; ++h) {
    const auto hs = static_cast<std::size_t>(h);
    const Mat dout = dattn.middleCols(h * hd, hd);
    const Mat& probs = c.probs[hs];
    dv.middleCols(h * hd, hd) = probs.transpose() * dout;
    const Mat dprobs = dout * c.v.middleCols(h * hd, hd).transpose();
    const Mat dlogits = softmax_backward(probs, dprobs) * scale;
    Mat dqh = dlogits * c.kr[hs];
    Mat dkh = dlogits.transpose() * c.qr[hs];
    rope_apply(dqh, rope, true);
    rope_apply(dkh, rope, true);
    dq.middleCols(h * hd, hd) = rms_norm_backward(c.q.middleCols(h * hd, hd), p.q_gain(h), c.q_rms[hs], dqh, grad.q_gain(h));
    dk.middleCols(h * hd, hd) = rms_norm_backward(c.k.middleCols(h * hd, hd), p.k_gain(h), c.k_rms[hs], dkh, grad.k_gain(h));
  }
  grad.wq.noalias() += c.a.transpose() * dq;
  grad.wk.noalias() += c.a.transpose() * dk;
  grad.wv.noalias() += c.a.transpose() * dv;
  const Mat da = dq * p.wq.transpose() + dk * p.wk.transpose() + dv * p.wv.transpose();
  return dmid + layer_norm_backward(da, p.norm1, c.ln1, grad.norm1);
}

}  // namespace jepa::nn
