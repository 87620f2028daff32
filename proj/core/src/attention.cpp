#include "coco/attention.hpp"

namespace coco {

Eigen::VectorXd positional_encoding(const Eigen::VectorXd& x, int n_freqs, bool include_input) {
  if (n_freqs < 0) throw invalid_argument("positional_encoding: n_freqs must be >= 0");
  const int n = int(x.size());
  Eigen::VectorXd out(n * ((include_input ? 1 : 0) + 2 * n_freqs));
  int at = 0;
  if (include_input) {
    out.head(n) = x;
    at = n;
  }
  for (int f = 0; f < n_freqs; ++f) {
    const double freq = std::pow(2.0, f) * M_PI;
    out.segment(at, n) = (x.array() * freq).sin();
    out.segment(at + n, n) = (x.array() * freq).cos();
    at += 2 * n;
  }
  return out;
}

Eigen::MatrixXd scaled_dot_attention(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& K,
                                     const Eigen::MatrixXd& V, Eigen::MatrixXd* weights) {
  if (Q.cols() != K.cols()) throw invalid_argument("scaled_dot_attention: Q/K width mismatch");
  if (K.rows() != V.rows()) throw invalid_argument("scaled_dot_attention: K/V count mismatch");
  if (K.rows() < 1) throw invalid_argument("scaled_dot_attention: empty keys");

  Eigen::MatrixXd scores = Q * K.transpose() / std::sqrt(double(Q.cols()));
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double m = scores.row(r).maxCoeff();
    scores.row(r) = (scores.row(r).array() - m).exp();
    scores.row(r) /= scores.row(r).sum();
  }
  if (weights) *weights = scores;
  return scores * V;
}

Eigen::MatrixXd codebook_attention(const Eigen::MatrixXd& codebook,
                                   const Eigen::MatrixXd& queries,
                                   const CodebookAttentionParams& params,
                                   const AttentionConfig& cfg, const ParamStore<double>& store) {
  ad::Tape<double> t;
  TapeBinder<double> bind(t, store);
  const int q = t.constant(queries);
  const int cb = t.constant(codebook);
  const int z = tape_codebook_attention(t, q, cb, params, cfg, bind);
  return t.val(z);
}

Eigen::MatrixXd coordinate_attention(const Eigen::MatrixXd& protos, const Eigen::MatrixXd& feats,
                                     const CoordinateAttentionParams& params,
                                     const AttentionConfig& cfg, const ParamStore<double>& store) {
  ad::Tape<double> t;
  TapeBinder<double> bind(t, store);
  const int f = t.constant(feats);
  const int p = t.constant(protos);
  const int out = tape_coordinate_attention(t, f, p, params, cfg, bind);
  return t.val(out);
}

}  // namespace coco
