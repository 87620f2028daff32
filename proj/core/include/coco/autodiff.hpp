#pragma once

// Reverse-mode automatic differentiation on dense matrices, with VJPs that
// can themselves be recorded onto the tape. Recording the VJP as graph nodes
// makes gradients differentiable, which the SDF pipeline needs twice over:
// the eikonal penalty and the shading normals are functions of the field's
// spatial gradient, and the optimizer needs gradients of those.
//
// The scalar type is a template parameter: float for training throughput,
// double for finite-difference verification at unit-test scale.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "coco/errors.hpp"

namespace coco::ad {

enum class Op : uint8_t {
  kLeaf,
  kNeg,
  kExp,
  kLog,
  kInv,
  kSqrt,
  kSquare,
  kAbs,
  kRelu,
  kSigmoid,
  kSoftplus,  // softplus with sharpness attribute
  kErf,
  kSin,
  kCos,
  kScale,      // s0 * a
  kAddScalar,  // a + s0
  kClamp,      // clamp(a, s0, s1)
  kRowSum,     // NxC -> Nx1
  kColSum,     // NxC -> 1xC
  kTotalSum,   // NxC -> 1x1
  kBCol,       // Nx1 -> NxC (i0 = C)
  kBRow,       // 1xC -> NxC (i0 = N)
  kBFull,      // 1x1 -> rxc (i0, i1)
  kRowSoftmax,
  kReshape,    // row-major reinterpret to (rows, cols)
  kSliceCols,  // columns [i0, i0+cols)
  kPadCols,    // embed at column i0 of i1 total columns
  kSliceRows,
  kPadRows,
  kAdd,
  kSub,
  kMul,       // hadamard
  kMatMulNN,  // A * B
  kMatMulNT,  // A * B^T
  kMatMulTN,  // A^T * B
  kConcatCols,
  kConcatRows,
};

template <class S>
class Tape {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

  struct Node {
    Op op = Op::kLeaf;
    int a = -1;
    int b = -1;
    S s0 = S(0);
    S s1 = S(0);
    int i0 = 0;
    int i1 = 0;
    bool rg = false;  // depends on a differentiable leaf
    Mat value;
  };

  std::vector<Node> nodes;

  int size() const { return int(nodes.size()); }
  const Mat& val(int id) const { return nodes[id].value; }
  bool requires_grad(int id) const { return nodes[id].rg; }

  int leaf(Mat v, bool requires_grad) {
    Node n;
    n.op = Op::kLeaf;
    n.rg = requires_grad;
    n.value = std::move(v);
    nodes.push_back(std::move(n));
    return size() - 1;
  }
  int constant(Mat v) { return leaf(std::move(v), false); }
  int scalar(S v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  // --- unary ---
  int neg(int a) { return unary(Op::kNeg, a, -val(a)); }
  int exp_(int a) { return unary(Op::kExp, a, val(a).array().exp().matrix()); }
  int log_(int a) { return unary(Op::kLog, a, val(a).array().log().matrix()); }
  int inv(int a) { return unary(Op::kInv, a, val(a).array().inverse().matrix()); }
  int sqrt_(int a) { return unary(Op::kSqrt, a, val(a).array().sqrt().matrix()); }
  int square(int a) { return unary(Op::kSquare, a, val(a).array().square().matrix()); }
  int abs_(int a) { return unary(Op::kAbs, a, val(a).array().abs().matrix()); }
  int relu(int a) { return unary(Op::kRelu, a, val(a).array().max(S(0)).matrix()); }
  int sigmoid(int a) {
    Mat y = (S(1) / (S(1) + (-val(a).array()).exp())).matrix();
    return unary(Op::kSigmoid, a, std::move(y));
  }
  int softplus(int a, S beta) {
    // (1/beta) * log(1 + exp(beta*x)), linearized for large arguments.
    Mat y = val(a);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const S bx = beta * y.data()[i];
      y.data()[i] = bx > S(30) ? y.data()[i] : std::log1p(std::exp(bx)) / beta;
    }
    int id = unary(Op::kSoftplus, a, std::move(y));
    nodes[id].s0 = beta;
    return id;
  }
  int erf_(int a) {
    Mat y = val(a);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = std::erf(y.data()[i]);
    return unary(Op::kErf, a, std::move(y));
  }
  int sin_(int a) { return unary(Op::kSin, a, val(a).array().sin().matrix()); }
  int cos_(int a) { return unary(Op::kCos, a, val(a).array().cos().matrix()); }
  int scale(int a, S c) {
    int id = unary(Op::kScale, a, (val(a).array() * c).matrix());
    nodes[id].s0 = c;
    return id;
  }
  int add_scalar(int a, S c) {
    int id = unary(Op::kAddScalar, a, (val(a).array() + c).matrix());
    nodes[id].s0 = c;
    return id;
  }
  int clamp(int a, S lo, S hi) {
    int id = unary(Op::kClamp, a, val(a).array().max(lo).min(hi).matrix());
    nodes[id].s0 = lo;
    nodes[id].s1 = hi;
    return id;
  }
  int row_sum(int a) { return unary(Op::kRowSum, a, val(a).rowwise().sum()); }
  int col_sum(int a) { return unary(Op::kColSum, a, val(a).colwise().sum()); }
  int total_sum(int a) {
    Mat m(1, 1);
    m(0, 0) = val(a).sum();
    return unary(Op::kTotalSum, a, std::move(m));
  }
  int bcol(int a, int cols) {
    check(val(a).cols() == 1, "bcol: input must be a column");
    int id = unary(Op::kBCol, a, val(a).replicate(1, cols));
    nodes[id].i0 = cols;
    return id;
  }
  int brow(int a, int rows) {
    check(val(a).rows() == 1, "brow: input must be a row");
    int id = unary(Op::kBRow, a, val(a).replicate(rows, 1));
    nodes[id].i0 = rows;
    return id;
  }
  int bfull(int a, int rows, int cols) {
    check(val(a).size() == 1, "bfull: input must be 1x1");
    Mat m = Mat::Constant(rows, cols, val(a)(0, 0));
    int id = unary(Op::kBFull, a, std::move(m));
    nodes[id].i0 = rows;
    nodes[id].i1 = cols;
    return id;
  }
  int row_softmax(int a) {
    Mat y = val(a);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const S m = y.row(r).maxCoeff();
      y.row(r) = (y.row(r).array() - m).exp();
      y.row(r) /= y.row(r).sum();
    }
    return unary(Op::kRowSoftmax, a, std::move(y));
  }
  int reshape(int a, int rows, int cols) {
    const Mat& x = val(a);
    check(Eigen::Index(rows) * cols == x.size(), "reshape: size mismatch");
    Mat y(rows, cols);
    // Row-major reinterpretation regardless of storage order.
    const Eigen::Index in_cols = x.cols();
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      y(k / cols, k % cols) = x(k / in_cols, k % in_cols);
    }
    return unary(Op::kReshape, a, std::move(y));
  }
  int slice_cols(int a, int j0, int w) {
    check(j0 >= 0 && j0 + w <= val(a).cols(), "slice_cols: out of range");
    int id = unary(Op::kSliceCols, a, val(a).middleCols(j0, w));
    nodes[id].i0 = j0;
    return id;
  }
  int pad_cols(int a, int j0, int total) {
    check(j0 >= 0 && j0 + val(a).cols() <= total, "pad_cols: out of range");
    Mat y = Mat::Zero(val(a).rows(), total);
    y.middleCols(j0, val(a).cols()) = val(a);
    int id = unary(Op::kPadCols, a, std::move(y));
    nodes[id].i0 = j0;
    nodes[id].i1 = total;
    return id;
  }
  int slice_rows(int a, int i0, int h) {
    check(i0 >= 0 && i0 + h <= val(a).rows(), "slice_rows: out of range");
    int id = unary(Op::kSliceRows, a, val(a).middleRows(i0, h));
    nodes[id].i0 = i0;
    return id;
  }
  int pad_rows(int a, int i0, int total) {
    check(i0 >= 0 && i0 + val(a).rows() <= total, "pad_rows: out of range");
    Mat y = Mat::Zero(total, val(a).cols());
    y.middleRows(i0, val(a).rows()) = val(a);
    int id = unary(Op::kPadRows, a, std::move(y));
    nodes[id].i0 = i0;
    nodes[id].i1 = total;
    return id;
  }

  // --- binary ---
  int add(int a, int b) {
    check_same_shape(a, b, "add");
    return binary(Op::kAdd, a, b, val(a) + val(b));
  }
  int sub(int a, int b) {
    check_same_shape(a, b, "sub");
    return binary(Op::kSub, a, b, val(a) - val(b));
  }
  int mul(int a, int b) {
    check_same_shape(a, b, "mul");
    return binary(Op::kMul, a, b, val(a).cwiseProduct(val(b)));
  }
  int matmul(int a, int b) {
    check(val(a).cols() == val(b).rows(), "matmul: inner dimension mismatch");
    return binary(Op::kMatMulNN, a, b, val(a) * val(b));
  }
  int matmul_nt(int a, int b) {
    check(val(a).cols() == val(b).cols(), "matmul_nt: inner dimension mismatch");
    return binary(Op::kMatMulNT, a, b, val(a) * val(b).transpose());
  }
  int matmul_tn(int a, int b) {
    check(val(a).rows() == val(b).rows(), "matmul_tn: inner dimension mismatch");
    return binary(Op::kMatMulTN, a, b, val(a).transpose() * val(b));
  }
  int concat_cols(int a, int b) {
    check(val(a).rows() == val(b).rows(), "concat_cols: row mismatch");
    Mat y(val(a).rows(), val(a).cols() + val(b).cols());
    y << val(a), val(b);
    return binary(Op::kConcatCols, a, b, std::move(y));
  }
  int concat_rows(int a, int b) {
    check(val(a).cols() == val(b).cols(), "concat_rows: column mismatch");
    Mat y(val(a).rows() + val(b).rows(), val(a).cols());
    y << val(a), val(b);
    return binary(Op::kConcatRows, a, b, std::move(y));
  }

 private:
  static void check(bool ok, const char* what) {
    if (!ok) throw invalid_argument(what);
  }
  void check_same_shape(int a, int b, const char* what) {
    check(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(), what);
  }
  int unary(Op op, int a, Mat y) {
    Node n;
    n.op = op;
    n.a = a;
    n.rg = nodes[a].rg;
    n.value = std::move(y);
    nodes.push_back(std::move(n));
    return size() - 1;
  }
  int binary(Op op, int a, int b, Mat y) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.rg = nodes[a].rg || nodes[b].rg;
    n.value = std::move(y);
    nodes.push_back(std::move(n));
    return size() - 1;
  }
};

namespace detail {

// VJP formulas are written once against a context; GraphCtx records them as
// new tape nodes (making the gradient itself differentiable), ValueCtx
// evaluates them directly for the final parameter-gradient sweep.
template <class S>
struct GraphCtx {
  using Mat = typename Tape<S>::Mat;
  using H = int;
  Tape<S>& t;

  H of_node(int id) { return id; }
  H from_mat(Mat m) { return t.constant(std::move(m)); }
  H neg(H a) { return t.neg(a); }
  H exp_(H a) { return t.exp_(a); }
  H sin_(H a) { return t.sin_(a); }
  H cos_(H a) { return t.cos_(a); }
  H square(H a) { return t.square(a); }
  H inv(H a) { return t.inv(a); }
  H sigmoid(H a) { return t.sigmoid(a); }
  H scale(H a, S c) { return t.scale(a, c); }
  H add_scalar(H a, S c) { return t.add_scalar(a, c); }
  H add(H a, H b) { return t.add(a, b); }
  H mul(H a, H b) { return t.mul(a, b); }
  H matmul(H a, H b) { return t.matmul(a, b); }
  H matmul_nt(H a, H b) { return t.matmul_nt(a, b); }
  H matmul_tn(H a, H b) { return t.matmul_tn(a, b); }
  H row_sum(H a) { return t.row_sum(a); }
  H col_sum(H a) { return t.col_sum(a); }
  H total_sum(H a) { return t.total_sum(a); }
  H bcol(H a, int c) { return t.bcol(a, c); }
  H brow(H a, int r) { return t.brow(a, r); }
  H bfull(H a, int r, int c) { return t.bfull(a, r, c); }
  H reshape(H a, int r, int c) { return t.reshape(a, r, c); }
  H slice_cols(H a, int j0, int w) { return t.slice_cols(a, j0, w); }
  H pad_cols(H a, int j0, int total) { return t.pad_cols(a, j0, total); }
  H slice_rows(H a, int i0, int h) { return t.slice_rows(a, i0, h); }
  H pad_rows(H a, int i0, int total) { return t.pad_rows(a, i0, total); }
};

template <class S>
struct ValueCtx {
  using Mat = typename Tape<S>::Mat;
  using H = Mat;
  Tape<S>& t;

  H of_node(int id) { return t.val(id); }
  H from_mat(Mat m) { return m; }
  H neg(const H& a) { return -a; }
  H exp_(const H& a) { return a.array().exp().matrix(); }
  H sin_(const H& a) { return a.array().sin().matrix(); }
  H cos_(const H& a) { return a.array().cos().matrix(); }
  H square(const H& a) { return a.array().square().matrix(); }
  H inv(const H& a) { return a.array().inverse().matrix(); }
  H sigmoid(const H& a) { return (S(1) / (S(1) + (-a.array()).exp())).matrix(); }
  H scale(const H& a, S c) { return a * c; }
  H add_scalar(const H& a, S c) { return (a.array() + c).matrix(); }
  H add(const H& a, const H& b) { return a + b; }
  H mul(const H& a, const H& b) { return a.cwiseProduct(b); }
  H matmul(const H& a, const H& b) { return a * b; }
  H matmul_nt(const H& a, const H& b) { return a * b.transpose(); }
  H matmul_tn(const H& a, const H& b) { return a.transpose() * b; }
  H row_sum(const H& a) { return a.rowwise().sum(); }
  H col_sum(const H& a) { return a.colwise().sum(); }
  H total_sum(const H& a) {
    Mat m(1, 1);
    m(0, 0) = a.sum();
    return m;
  }
  H bcol(const H& a, int c) { return a.replicate(1, c); }
  H brow(const H& a, int r) { return a.replicate(r, 1); }
  H bfull(const H& a, int r, int c) { return Mat::Constant(r, c, a(0, 0)); }
  H reshape(const H& a, int r, int c) {
    Mat y(r, c);
    const Eigen::Index in_cols = a.cols();
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      y(k / c, k % c) = a(k / in_cols, k % in_cols);
    }
    return y;
  }
  H slice_cols(const H& a, int j0, int w) { return a.middleCols(j0, w); }
  H pad_cols(const H& a, int j0, int total) {
    Mat y = Mat::Zero(a.rows(), total);
    y.middleCols(j0, a.cols()) = a;
    return y;
  }
  H slice_rows(const H& a, int i0, int h) { return a.middleRows(i0, h); }
  H pad_rows(const H& a, int i0, int total) {
    Mat y = Mat::Zero(total, a.cols());
    y.middleRows(i0, a.rows()) = a;
    return y;
  }
};

// Emits the adjoint contributions of node i's inputs given its adjoint g.
// `accum(input_id, handle)` accumulates; `want(input_id)` gates emission.
template <class S, class Ctx, class Accum, class Want>
void emit_vjp(Ctx& cx, const Tape<S>& t, int i, const typename Ctx::H& g, Accum&& accum,
              Want&& want) {
  using Mat = typename Tape<S>::Mat;
  const auto& n = t.nodes[i];
  const int a = n.a;
  const int b = n.b;
  const bool wa = a >= 0 && t.nodes[a].rg && want(a);
  const bool wb = b >= 0 && t.nodes[b].rg && want(b);
  if (!wa && !wb) return;

  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kNeg:
      accum(a, cx.neg(g));
      break;
    case Op::kExp:
      accum(a, cx.mul(g, cx.of_node(i)));
      break;
    case Op::kLog:
      accum(a, cx.mul(g, cx.inv(cx.of_node(a))));
      break;
    case Op::kInv: {
      auto y = cx.of_node(i);
      accum(a, cx.neg(cx.mul(g, cx.square(y))));
      break;
    }
    case Op::kSqrt:
      accum(a, cx.scale(cx.mul(g, cx.inv(cx.of_node(i))), S(0.5)));
      break;
    case Op::kSquare:
      accum(a, cx.scale(cx.mul(g, cx.of_node(a)), S(2)));
      break;
    case Op::kAbs: {
      Mat mask = t.val(a);
      for (Eigen::Index k = 0; k < mask.size(); ++k) {
        mask.data()[k] = mask.data()[k] >= S(0) ? S(1) : S(-1);
      }
      accum(a, cx.mul(g, cx.from_mat(std::move(mask))));
      break;
    }
    case Op::kRelu: {
      Mat mask = (t.val(a).array() > S(0)).template cast<S>().matrix();
      accum(a, cx.mul(g, cx.from_mat(std::move(mask))));
      break;
    }
    case Op::kSigmoid: {
      auto y = cx.of_node(i);
      // g * y * (1 - y)
      accum(a, cx.mul(cx.mul(g, y), cx.add_scalar(cx.neg(y), S(1))));
      break;
    }
    case Op::kSoftplus:
      accum(a, cx.mul(g, cx.sigmoid(cx.scale(cx.of_node(a), n.s0))));
      break;
    case Op::kErf: {
      const S c = S(2.0 / std::sqrt(M_PI));
      accum(a, cx.mul(g, cx.scale(cx.exp_(cx.neg(cx.square(cx.of_node(a)))), c)));
      break;
    }
    case Op::kSin:
      accum(a, cx.mul(g, cx.cos_(cx.of_node(a))));
      break;
    case Op::kCos:
      accum(a, cx.neg(cx.mul(g, cx.sin_(cx.of_node(a)))));
      break;
    case Op::kScale:
      accum(a, cx.scale(g, n.s0));
      break;
    case Op::kAddScalar:
      accum(a, g);
      break;
    case Op::kClamp: {
      Mat mask = t.val(a);
      for (Eigen::Index k = 0; k < mask.size(); ++k) {
        const S v = mask.data()[k];
        mask.data()[k] = (v > n.s0 && v < n.s1) ? S(1) : S(0);
      }
      accum(a, cx.mul(g, cx.from_mat(std::move(mask))));
      break;
    }
    case Op::kRowSum:
      accum(a, cx.bcol(g, int(t.val(a).cols())));
      break;
    case Op::kColSum:
      accum(a, cx.brow(g, int(t.val(a).rows())));
      break;
    case Op::kTotalSum:
      accum(a, cx.bfull(g, int(t.val(a).rows()), int(t.val(a).cols())));
      break;
    case Op::kBCol:
      accum(a, cx.row_sum(g));
      break;
    case Op::kBRow:
      accum(a, cx.col_sum(g));
      break;
    case Op::kBFull:
      accum(a, cx.total_sum(g));
      break;
    case Op::kRowSoftmax: {
      // a_bar = y * (g - rowsum(g*y) broadcast)
      auto y = cx.of_node(i);
      auto gy = cx.mul(g, y);
      auto corr = cx.bcol(cx.row_sum(gy), int(t.val(i).cols()));
      accum(a, cx.mul(y, cx.add(g, cx.neg(corr))));
      break;
    }
    case Op::kReshape:
      accum(a, cx.reshape(g, int(t.val(a).rows()), int(t.val(a).cols())));
      break;
    case Op::kSliceCols:
      accum(a, cx.pad_cols(g, n.i0, int(t.val(a).cols())));
      break;
    case Op::kPadCols:
      accum(a, cx.slice_cols(g, n.i0, int(t.val(a).cols())));
      break;
    case Op::kSliceRows:
      accum(a, cx.pad_rows(g, n.i0, int(t.val(a).rows())));
      break;
    case Op::kPadRows:
      accum(a, cx.slice_rows(g, n.i0, int(t.val(a).rows())));
      break;
    case Op::kAdd:
      if (wa) accum(a, g);
      if (wb) accum(b, g);
      break;
    case Op::kSub:
      if (wa) accum(a, g);
      if (wb) accum(b, cx.neg(g));
      break;
    case Op::kMul:
      if (wa) accum(a, cx.mul(g, cx.of_node(b)));
      if (wb) accum(b, cx.mul(g, cx.of_node(a)));
      break;
    case Op::kMatMulNN:
      if (wa) accum(a, cx.matmul_nt(g, cx.of_node(b)));
      if (wb) accum(b, cx.matmul_tn(cx.of_node(a), g));
      break;
    case Op::kMatMulNT:
      if (wa) accum(a, cx.matmul(g, cx.of_node(b)));
      if (wb) accum(b, cx.matmul_tn(g, cx.of_node(a)));
      break;
    case Op::kMatMulTN:
      if (wa) accum(a, cx.matmul_nt(cx.of_node(b), g));
      if (wb) accum(b, cx.matmul(cx.of_node(a), g));
      break;
    case Op::kConcatCols: {
      const int wa_cols = int(t.val(a).cols());
      if (wa) accum(a, cx.slice_cols(g, 0, wa_cols));
      if (wb) accum(b, cx.slice_cols(g, wa_cols, int(t.val(b).cols())));
      break;
    }
    case Op::kConcatRows: {
      const int a_rows = int(t.val(a).rows());
      if (wa) accum(a, cx.slice_rows(g, 0, a_rows));
      if (wb) accum(b, cx.slice_rows(g, a_rows, int(t.val(b).rows())));
      break;
    }
  }
}

// Marks nodes [0, limit) that transitively depend on any of `sources`.
template <class S>
std::vector<char> forward_reachable(const Tape<S>& t, const std::vector<int>& sources,
                                    int limit) {
  std::vector<char> dep(limit, 0);
  for (int s : sources) {
    if (s < limit) dep[s] = 1;
  }
  for (int i = 0; i < limit; ++i) {
    const auto& n = t.nodes[i];
    if ((n.a >= 0 && dep[n.a]) || (n.b >= 0 && dep[n.b])) dep[i] = 1;
  }
  return dep;
}

}  // namespace detail

// Records the gradient of scalar `out` with respect to each of `wrt` as new
// tape nodes and returns their ids. The returned nodes participate in any
// later differentiation, so gradients of expressions built from them are
// exact second derivatives.
template <class S>
std::vector<int> grad_graph(Tape<S>& t, int out, const std::vector<int>& wrt) {
  if (t.val(out).size() != 1) throw invalid_argument("grad_graph: output must be scalar");
  const int limit = out + 1;
  const auto dep = detail::forward_reachable(t, wrt, limit);

  detail::GraphCtx<S> cx{t};
  std::vector<int> adj(limit, -1);
  adj[out] = t.scalar(S(1));
  for (int i = out; i >= 0; --i) {
    if (adj[i] < 0 || !dep[i]) continue;
    const int g = adj[i];
    detail::emit_vjp<S>(
        cx, t, i, g,
        [&](int input, int contribution) {
          adj[input] = adj[input] < 0 ? contribution : t.add(adj[input], contribution);
        },
        [&](int input) { return dep[input]; });
  }

  std::vector<int> result;
  result.reserve(wrt.size());
  for (int w : wrt) {
    if (adj[w] >= 0) {
      result.push_back(adj[w]);
    } else {
      result.push_back(t.constant(Tape<S>::Mat::Zero(t.val(w).rows(), t.val(w).cols())));
    }
  }
  return result;
}

// Final reverse sweep: accumulates d(out)/d(leaf) into caller buffers via
// `sink(leaf_id, grad)`. Frees node values and adjoints as the sweep passes
// them, so peak memory stays near the forward tape's footprint. The tape is
// unusable afterwards.
template <class S>
void backward_values(Tape<S>& t, int out,
                     const std::function<void(int, typename Tape<S>::Mat&)>& sink) {
  using Mat = typename Tape<S>::Mat;
  if (t.val(out).size() != 1) throw invalid_argument("backward_values: output must be scalar");

  detail::ValueCtx<S> cx{t};
  const int limit = out + 1;
  std::vector<Mat> adj(limit);
  std::vector<char> has(limit, 0);
  adj[out] = Mat::Constant(1, 1, S(1));
  has[out] = 1;

  for (int i = out; i >= 0; --i) {
    if (!has[i] || !t.nodes[i].rg) {
      if (has[i]) adj[i].resize(0, 0);
      continue;
    }
    if (t.nodes[i].op == Op::kLeaf) {
      sink(i, adj[i]);
      adj[i].resize(0, 0);
      continue;
    }
    detail::emit_vjp<S>(
        cx, t, i, adj[i],
        [&](int input, Mat contribution) {
          if (!has[input]) {
            adj[input] = std::move(contribution);
            has[input] = 1;
          } else {
            adj[input] += contribution;
          }
        },
        [&](int) { return true; });
    adj[i].resize(0, 0);
    t.nodes[i].value.resize(0, 0);
  }
}

}  // namespace coco::ad
