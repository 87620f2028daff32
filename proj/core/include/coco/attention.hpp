#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "coco/autodiff.hpp"
#include "coco/params.hpp"
#include "coco/rng.hpp"

namespace coco {

// Shared shape configuration for attention stacks. d_k is the per-head
// key/query width; the concatenated attention width is heads * d_k.
struct AttentionConfig {
  int heads = 4;
  int d_k = 32;
  int d_ff = 256;
  int self_layers = 3;   // L: self-attention depth after the codebook read
  int cross_layers = 1;  // T: coordinate cross-attention depth
};

// --- plain (non-taped) reference operations ---

// [x?, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{n-1} pi x), cos(...)] per
// component; output length n * (include_input + 2*n_freqs).
Eigen::VectorXd positional_encoding(const Eigen::VectorXd& x, int n_freqs, bool include_input);

// Softmax(Q K^T / sqrt(d)) V with row-wise max subtraction. If `weights` is
// non-null it receives the attention matrix.
Eigen::MatrixXd scaled_dot_attention(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& K,
                                     const Eigen::MatrixXd& V,
                                     Eigen::MatrixXd* weights = nullptr);

// --- parameter bundles ---

// One pre-norm transformer block: x + Attn(LN(x), kv, kv), then x + FFN(LN(x)).
// The output projection `wo` is zero-initialized so the block starts as the
// identity on x while inner projections keep nonzero gradients.
struct AttentionBlockParams {
  int ln1_gain = -1, ln1_bias = -1;
  int wq = -1, bq = -1;
  int wk = -1, bk = -1;
  int wv = -1, bv = -1;
  int wo = -1, bo = -1;
  int ln2_gain = -1, ln2_bias = -1;
  int ff1_w = -1, ff1_b = -1;
  int ff2_w = -1, ff2_b = -1;
};

// Codebook attention: one cross-attention block reading from the codebook
// followed by L self-attention blocks refining the prototypes.
struct CodebookAttentionParams {
  AttentionBlockParams cross;
  std::vector<AttentionBlockParams> self_blocks;
};

struct CoordinateAttentionParams {
  std::vector<AttentionBlockParams> blocks;  // T cross-attention blocks
};

template <class S>
AttentionBlockParams make_attention_block_params(ParamStore<S>& ps, const std::string& prefix,
                                                 int x_width, int kv_width,
                                                 const AttentionConfig& cfg, Rng& rng);

template <class S>
CodebookAttentionParams make_codebook_attention_params(ParamStore<S>& ps,
                                                       const std::string& prefix, int query_width,
                                                       int codebook_dim,
                                                       const AttentionConfig& cfg, Rng& rng);

template <class S>
CoordinateAttentionParams make_coordinate_attention_params(ParamStore<S>& ps,
                                                           const std::string& prefix,
                                                           int feat_width, int proto_width,
                                                           const AttentionConfig& cfg, Rng& rng);

// --- tape builders ---

template <class S>
int tape_linear(ad::Tape<S>& t, int x, int w, int b) {
  return t.add(t.matmul(x, w), t.brow(b, int(t.val(x).rows())));
}

template <class S>
int tape_layer_norm(ad::Tape<S>& t, int x, int gain, int bias) {
  const int rows = int(t.val(x).rows());
  const int cols = int(t.val(x).cols());
  const int mean = t.scale(t.row_sum(x), S(1) / S(cols));
  const int centered = t.sub(x, t.bcol(mean, cols));
  const int var = t.scale(t.row_sum(t.square(centered)), S(1) / S(cols));
  const int rstd = t.inv(t.sqrt_(t.add_scalar(var, S(1e-5))));
  const int normed = t.mul(centered, t.bcol(rstd, cols));
  return t.add(t.mul(normed, t.brow(gain, rows)), t.brow(bias, rows));
}

template <class S>
int tape_gelu(ad::Tape<S>& t, int x) {
  const int phi = t.add_scalar(t.erf_(t.scale(x, S(1) / S(std::sqrt(2.0)))), S(1));
  return t.mul(t.scale(x, S(0.5)), phi);
}

template <class S>
int tape_positional_encoding(ad::Tape<S>& t, int x, int n_freqs, bool include_input) {
  int out = -1;
  if (include_input) out = x;
  for (int f = 0; f < n_freqs; ++f) {
    const S freq = S(std::pow(2.0, f) * M_PI);
    const int scaled = t.scale(x, freq);
    const int s = t.sin_(scaled);
    const int c = t.cos_(scaled);
    out = out < 0 ? t.concat_cols(s, c) : t.concat_cols(out, t.concat_cols(s, c));
  }
  if (out < 0) {
    throw invalid_argument("positional_encoding: empty encoding (n_freqs=0, no input)");
  }
  return out;
}

// Multi-head scaled dot-product attention. Queries come from `q_src`
// (already normalized by the caller), keys/values from `kv_src` (raw).
template <class S>
int tape_multihead_attention(ad::Tape<S>& t, int q_src, int kv_src,
                             const AttentionBlockParams& p, const AttentionConfig& cfg,
                             TapeBinder<S>& bind) {
  const int q = tape_linear(t, q_src, bind(p.wq), bind(p.bq));
  const int k = tape_linear(t, kv_src, bind(p.wk), bind(p.bk));
  const int v = tape_linear(t, kv_src, bind(p.wv), bind(p.bv));
  const S inv_sqrt_dk = S(1.0 / std::sqrt(double(cfg.d_k)));
  int heads_out = -1;
  for (int h = 0; h < cfg.heads; ++h) {
    const int qh = t.slice_cols(q, h * cfg.d_k, cfg.d_k);
    const int kh = t.slice_cols(k, h * cfg.d_k, cfg.d_k);
    const int vh = t.slice_cols(v, h * cfg.d_k, cfg.d_k);
    const int scores = t.scale(t.matmul_nt(qh, kh), inv_sqrt_dk);
    const int attn = t.row_softmax(scores);
    const int oh = t.matmul(attn, vh);
    heads_out = heads_out < 0 ? oh : t.concat_cols(heads_out, oh);
  }
  return tape_linear(t, heads_out, bind(p.wo), bind(p.bo));
}

// Full pre-norm block. When `self_attention` is set the keys/values are the
// normalized input itself; otherwise they are `kv_src` as-is.
template <class S>
int tape_attention_block(ad::Tape<S>& t, int x, int kv_src, const AttentionBlockParams& p,
                         const AttentionConfig& cfg, TapeBinder<S>& bind, bool self_attention) {
  const int xn = tape_layer_norm(t, x, bind(p.ln1_gain), bind(p.ln1_bias));
  const int attn = tape_multihead_attention(t, xn, self_attention ? xn : kv_src, p, cfg, bind);
  const int y = t.add(x, attn);
  const int yn = tape_layer_norm(t, y, bind(p.ln2_gain), bind(p.ln2_bias));
  const int ff = tape_linear(t, tape_gelu(t, tape_linear(t, yn, bind(p.ff1_w), bind(p.ff1_b))),
                             bind(p.ff2_w), bind(p.ff2_b));
  return t.add(y, ff);
}

// Algorithm 1: queries cross-attend into the codebook, then L self-attention
// blocks refine the selected prototypes.
template <class S>
int tape_codebook_attention(ad::Tape<S>& t, int queries, int codebook,
                            const CodebookAttentionParams& p, const AttentionConfig& cfg,
                            TapeBinder<S>& bind) {
  int z = tape_attention_block(t, queries, codebook, p.cross, cfg, bind, false);
  for (const auto& blk : p.self_blocks) {
    z = tape_attention_block(t, z, -1, blk, cfg, bind, true);
  }
  return z;
}

// Algorithm 2: coordinate features cross-attend into the prototypes. Each
// output row depends on its own input row and the prototypes only.
template <class S>
int tape_coordinate_attention(ad::Tape<S>& t, int feats, int protos,
                              const CoordinateAttentionParams& p, const AttentionConfig& cfg,
                              TapeBinder<S>& bind) {
  int x = feats;
  for (const auto& blk : p.blocks) {
    x = tape_attention_block(t, x, protos, blk, cfg, bind, false);
  }
  return x;
}

// --- plain public operations (evaluate on a scratch tape) ---

// Runs codebook attention for given parameter values; returns M x S prototypes.
Eigen::MatrixXd codebook_attention(const Eigen::MatrixXd& codebook,
                                   const Eigen::MatrixXd& queries,
                                   const CodebookAttentionParams& params,
                                   const AttentionConfig& cfg, const ParamStore<double>& store);

// Runs coordinate attention for given parameter values; returns N x C features.
Eigen::MatrixXd coordinate_attention(const Eigen::MatrixXd& protos, const Eigen::MatrixXd& feats,
                                     const CoordinateAttentionParams& params,
                                     const AttentionConfig& cfg, const ParamStore<double>& store);

// --- implementation of parameter construction (templated) ---

template <class S>
AttentionBlockParams make_attention_block_params(ParamStore<S>& ps, const std::string& prefix,
                                                 int x_width, int kv_width,
                                                 const AttentionConfig& cfg, Rng& rng) {
  using Mat = typename ParamStore<S>::Mat;
  const int attn_width = cfg.heads * cfg.d_k;
  auto normal = [&](int rows, int cols, double stddev) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) m(i, j) = S(rng.normal(0.0, stddev));
    }
    return m;
  };
  auto zeros = [](int rows, int cols) { return Mat::Zero(rows, cols); };
  auto ones = [](int rows, int cols) { return Mat::Ones(rows, cols); };

  AttentionBlockParams p;
  p.ln1_gain = ps.add(prefix + ".ln1.gain", ones(1, x_width));
  p.ln1_bias = ps.add(prefix + ".ln1.bias", zeros(1, x_width));
  p.wq = ps.add(prefix + ".wq", normal(x_width, attn_width, 1.0 / std::sqrt(x_width)));
  p.bq = ps.add(prefix + ".bq", zeros(1, attn_width));
  p.wk = ps.add(prefix + ".wk", normal(kv_width, attn_width, 1.0 / std::sqrt(kv_width)));
  p.bk = ps.add(prefix + ".bk", zeros(1, attn_width));
  p.wv = ps.add(prefix + ".wv", normal(kv_width, attn_width, 1.0 / std::sqrt(kv_width)));
  p.bv = ps.add(prefix + ".bv", zeros(1, attn_width));
  p.wo = ps.add(prefix + ".wo", zeros(attn_width, x_width));  // identity at init
  p.bo = ps.add(prefix + ".bo", zeros(1, x_width));
  p.ln2_gain = ps.add(prefix + ".ln2.gain", ones(1, x_width));
  p.ln2_bias = ps.add(prefix + ".ln2.bias", zeros(1, x_width));
  p.ff1_w = ps.add(prefix + ".ff1.w", normal(x_width, cfg.d_ff, 1.0 / std::sqrt(x_width)));
  p.ff1_b = ps.add(prefix + ".ff1.b", zeros(1, cfg.d_ff));
  p.ff2_w = ps.add(prefix + ".ff2.w", zeros(cfg.d_ff, x_width));  // identity at init
  p.ff2_b = ps.add(prefix + ".ff2.b", zeros(1, x_width));
  return p;
}

template <class S>
CodebookAttentionParams make_codebook_attention_params(ParamStore<S>& ps,
                                                       const std::string& prefix, int query_width,
                                                       int codebook_dim,
                                                       const AttentionConfig& cfg, Rng& rng) {
  CodebookAttentionParams p;
  p.cross = make_attention_block_params(ps, prefix + ".cross", query_width, codebook_dim, cfg, rng);
  for (int l = 0; l < cfg.self_layers; ++l) {
    p.self_blocks.push_back(make_attention_block_params(
        ps, prefix + ".self" + std::to_string(l), query_width, query_width, cfg, rng));
  }
  return p;
}

template <class S>
CoordinateAttentionParams make_coordinate_attention_params(ParamStore<S>& ps,
                                                           const std::string& prefix,
                                                           int feat_width, int proto_width,
                                                           const AttentionConfig& cfg, Rng& rng) {
  CoordinateAttentionParams p;
  for (int l = 0; l < cfg.cross_layers; ++l) {
    p.blocks.push_back(make_attention_block_params(
        ps, prefix + ".cross" + std::to_string(l), feat_width, proto_width, cfg, rng));
  }
  return p;
}

}  // namespace coco
