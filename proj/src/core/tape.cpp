// SPDX-License-Identifier: Apache-2.0
#include "core/tape.hpp"

#include <cmath>

#include "core/common.hpp"

namespace linkedout::ad {

NodeId Tape::push(Node&& n) {
  nodes_.push_back(std::move(n));
  return NodeId(nodes_.size() - 1);
}

NodeId Tape::leaf(MatD value) {
  Node n;
  n.op = Op::leaf;
  n.val = std::move(value);
  return push(std::move(n));
}

NodeId Tape::leaf(const MatF& value) { return leaf(to_double(value)); }

const MatD& Tape::grad(NodeId id) const {
  const Node& n = nodes_[size_t(id)];
  require(!n.grad.empty(), ErrorCode::state, "gradient not computed for node");
  return n.grad;
}

MatD& Tape::grad_buf(NodeId id) {
  Node& n = nodes_[size_t(id)];
  if (n.grad.empty()) n.grad = MatD(n.val.rows, n.val.cols);
  return n.grad;
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const MatD& A = val(a);
  const MatD& B = val(b);
  Node n;
  n.op = Op::matmul;
  n.a = a;
  n.b = b;
  linkedout::matmul(A, B, n.val);
  return push(std::move(n));
}

NodeId Tape::matmul_nt(NodeId a, NodeId b) {
  const MatD& A = val(a);
  const MatD& B = val(b);
  require(A.cols == B.cols, ErrorCode::shape, "matmul_nt: widths differ");
  Node n;
  n.op = Op::matmul_nt;
  n.a = a;
  n.b = b;
  n.val = MatD(A.rows, B.rows);
  for (size_t i = 0; i < A.rows; ++i)
    for (size_t j = 0; j < B.rows; ++j) {
      const double* ar = A.row(i);
      const double* br = B.row(j);
      double s = 0;
      for (size_t t = 0; t < A.cols; ++t) s += ar[t] * br[t];
      n.val(i, j) = s;
    }
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const MatD& A = val(a);
  const MatD& B = val(b);
  require(A.rows == B.rows && A.cols == B.cols, ErrorCode::shape, "add: shapes differ");
  Node n;
  n.op = Op::add;
  n.a = a;
  n.b = b;
  n.val = A;
  for (size_t i = 0; i < B.v.size(); ++i) n.val.v[i] += B.v[i];
  return push(std::move(n));
}

NodeId Tape::add_row(NodeId a, NodeId row) {
  const MatD& A = val(a);
  const MatD& R = val(row);
  require(R.rows == 1 && R.cols == A.cols, ErrorCode::shape, "add_row: bad row shape");
  Node n;
  n.op = Op::add_row;
  n.a = a;
  n.b = row;
  n.val = A;
  for (size_t i = 0; i < A.rows; ++i) {
    double* out = n.val.row(i);
    for (size_t j = 0; j < A.cols; ++j) out[j] += R.v[j];
  }
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const MatD& A = val(a);
  const MatD& B = val(b);
  require(A.rows == B.rows && A.cols == B.cols, ErrorCode::shape, "sub: shapes differ");
  Node n;
  n.op = Op::sub;
  n.a = a;
  n.b = b;
  n.val = A;
  for (size_t i = 0; i < B.v.size(); ++i) n.val.v[i] -= B.v[i];
  return push(std::move(n));
}

NodeId Tape::hadamard(NodeId a, NodeId b) {
  const MatD& A = val(a);
  const MatD& B = val(b);
  require(A.rows == B.rows && A.cols == B.cols, ErrorCode::shape, "hadamard: shapes differ");
  Node n;
  n.op = Op::hadamard;
  n.a = a;
  n.b = b;
  n.val = A;
  for (size_t i = 0; i < B.v.size(); ++i) n.val.v[i] *= B.v[i];
  return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double s) {
  Node n;
  n.op = Op::scale;
  n.a = a;
  n.s = s;
  n.val = val(a);
  for (double& x : n.val.v) x *= s;
  return push(std::move(n));
}

NodeId Tape::row_softmax(NodeId a) {
  Node n;
  n.op = Op::row_softmax;
  n.a = a;
  n.val = val(a);
  for (size_t i = 0; i < n.val.rows; ++i) {
    double* r = n.val.row(i);
    double mx = r[0];
    for (size_t j = 1; j < n.val.cols; ++j) mx = std::max(mx, r[j]);
    double denom = 0;
    for (size_t j = 0; j < n.val.cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      denom += r[j];
    }
    for (size_t j = 0; j < n.val.cols; ++j) r[j] /= denom;
  }
  return push(std::move(n));
}

NodeId Tape::tanh_act(NodeId a) {
  Node n;
  n.op = Op::tanh_act;
  n.a = a;
  n.val = val(a);
  for (double& x : n.val.v) x = std::tanh(x);
  return push(std::move(n));
}

NodeId Tape::reshape(NodeId a, size_t rows, size_t cols) {
  const MatD& A = val(a);
  require(rows * cols == A.v.size(), ErrorCode::shape, "reshape: element count differs");
  Node n;
  n.op = Op::reshape;
  n.a = a;
  n.val = A;
  n.val.rows = rows;
  n.val.cols = cols;
  return push(std::move(n));
}

NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
  require(!parts.empty(), ErrorCode::input, "concat_cols: empty");
  size_t total = 0;
  for (NodeId p : parts) {
    require(val(p).rows == 1, ErrorCode::shape, "concat_cols: parts must be rows");
    total += val(p).cols;
  }
  Node n;
  n.op = Op::concat_cols;
  n.multi = parts;
  n.val = MatD(1, total);
  size_t off = 0;
  for (NodeId p : parts) {
    const MatD& P = val(p);
    std::copy(P.v.begin(), P.v.end(), n.val.v.begin() + off);
    off += P.cols;
  }
  return push(std::move(n));
}

NodeId Tape::stack_rows(const std::vector<NodeId>& rows) {
  require(!rows.empty(), ErrorCode::input, "stack_rows: empty");
  size_t d = val(rows[0]).cols;
  Node n;
  n.op = Op::stack_rows;
  n.multi = rows;
  n.val = MatD(rows.size(), d);
  for (size_t i = 0; i < rows.size(); ++i) {
    const MatD& R = val(rows[i]);
    require(R.rows == 1 && R.cols == d, ErrorCode::shape, "stack_rows: bad row shape");
    std::copy(R.v.begin(), R.v.end(), n.val.row(i));
  }
  return push(std::move(n));
}

NodeId Tape::slice_cols(NodeId a, size_t begin, size_t len) {
  const MatD& A = val(a);
  require(A.rows == 1 && begin + len <= A.cols, ErrorCode::shape, "slice_cols: out of range");
  Node n;
  n.op = Op::slice_cols;
  n.a = a;
  n.s = double(begin);
  n.k = len;
  n.val = MatD(1, len);
  std::copy(A.v.begin() + begin, A.v.begin() + begin + len, n.val.v.begin());
  return push(std::move(n));
}

NodeId Tape::add_n(const std::vector<NodeId>& xs) {
  require(!xs.empty(), ErrorCode::input, "add_n: empty");
  Node n;
  n.op = Op::add_n;
  n.multi = xs;
  n.val = val(xs[0]);
  for (size_t i = 1; i < xs.size(); ++i) {
    const MatD& X = val(xs[i]);
    require(X.rows == n.val.rows && X.cols == n.val.cols, ErrorCode::shape,
            "add_n: shapes differ");
    for (size_t j = 0; j < X.v.size(); ++j) n.val.v[j] += X.v[j];
  }
  return push(std::move(n));
}

NodeId Tape::sqdist_mean(NodeId a, NodeId b) {
  const MatD& A = val(a);
  const MatD& B = val(b);
  require(A.rows == B.rows && A.cols == B.cols, ErrorCode::shape, "sqdist_mean: shapes differ");
  require(A.rows >= 1, ErrorCode::input, "sqdist_mean: empty");
  Node n;
  n.op = Op::sqdist_mean;
  n.a = a;
  n.b = b;
  double total = 0;
  for (size_t i = 0; i < A.rows; ++i) {
    const double* ar = A.row(i);
    const double* br = B.row(i);
    double s = 0;
    for (size_t j = 0; j < A.cols; ++j) {
      double dij = ar[j] - br[j];
      s += dij * dij;
    }
    total += s;
  }
  n.val = MatD(1, 1);
  n.val.v[0] = total / double(A.rows);
  return push(std::move(n));
}

NodeId Tape::uniformity(NodeId x) {
  const MatD& X = val(x);
  require(X.rows >= 2, ErrorCode::input, "uniformity needs a batch of at least 2");
  Node n;
  n.op = Op::uniformity;
  n.a = x;
  double sum = 0;
  for (size_t i = 0; i < X.rows; ++i)
    for (size_t j = i + 1; j < X.rows; ++j) {
      const double* xi = X.row(i);
      const double* xj = X.row(j);
      double d2 = 0;
      for (size_t t = 0; t < X.cols; ++t) {
        double dt = xi[t] - xj[t];
        d2 += dt * dt;
      }
      sum += std::exp(-2.0 * d2);
    }
  double pairs = double(X.rows) * double(X.rows - 1) / 2.0;
  n.val = MatD(1, 1);
  n.val.v[0] = std::log(sum / pairs);
  n.aux = MatD(1, 1);
  n.aux.v[0] = sum;  // reused in backward
  return push(std::move(n));
}

NodeId Tape::nll_of_softmax(NodeId scores, size_t target) {
  const MatD& S = val(scores);
  require(S.rows == 1 && target < S.cols, ErrorCode::shape, "nll_of_softmax: bad target");
  Node n;
  n.op = Op::nll_softmax;
  n.a = scores;
  n.k = target;
  double mx = S.v[0];
  for (double v : S.v) mx = std::max(mx, v);
  double denom = 0;
  n.aux = MatD(1, S.cols);
  for (size_t j = 0; j < S.cols; ++j) {
    n.aux.v[j] = std::exp(S.v[j] - mx);
    denom += n.aux.v[j];
  }
  for (size_t j = 0; j < S.cols; ++j) n.aux.v[j] /= denom;
  n.val = MatD(1, 1);
  n.val.v[0] = -std::log(n.aux.v[target]);
  return push(std::move(n));
}

void Tape::seed(NodeId id, const MatD& g) {
  MatD& buf = grad_buf(id);
  require(buf.rows == g.rows && buf.cols == g.cols, ErrorCode::shape, "seed: shape mismatch");
  for (size_t i = 0; i < g.v.size(); ++i) buf.v[i] += g.v[i];
}

void Tape::backward(NodeId root) {
  const MatD& r = val(root);
  require(r.rows == 1 && r.cols == 1, ErrorCode::shape, "backward root must be scalar");
  grad_buf(root).v[0] += 1.0;
  sweep();
}

void Tape::sweep() {
  for (size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || n.op == Op::leaf) continue;
    backprop(n);
  }
}

void Tape::backprop(Node& n) {
  const MatD& g = n.grad;
  switch (n.op) {
    case Op::leaf:
      break;
    case Op::matmul: {
      const MatD& A = val(n.a);
      const MatD& B = val(n.b);
      MatD& ga = grad_buf(n.a);
      MatD& gb = grad_buf(n.b);
      // ga += g * B^T
      for (size_t i = 0; i < A.rows; ++i)
        for (size_t k = 0; k < A.cols; ++k) {
          const double* gr = g.row(i);
          const double* br = B.row(k);
          double s = 0;
          for (size_t j = 0; j < B.cols; ++j) s += gr[j] * br[j];
          ga(i, k) += s;
        }
      // gb += A^T * g
      for (size_t i = 0; i < A.rows; ++i) {
        const double* ar = A.row(i);
        const double* gr = g.row(i);
        for (size_t k = 0; k < A.cols; ++k) {
          double aik = ar[k];
          if (aik == 0.0) continue;
          double* gbr = gb.row(k);
          for (size_t j = 0; j < B.cols; ++j) gbr[j] += aik * gr[j];
        }
      }
      break;
    }
    case Op::matmul_nt: {
      const MatD& A = val(n.a);
      const MatD& B = val(n.b);
      MatD& ga = grad_buf(n.a);
      MatD& gb = grad_buf(n.b);
      // C = A B^T; ga += g * B; gb += g^T * A
      for (size_t i = 0; i < A.rows; ++i) {
        const double* gr = g.row(i);
        double* gar = ga.row(i);
        for (size_t j = 0; j < B.rows; ++j) {
          double gij = gr[j];
          if (gij == 0.0) continue;
          const double* br = B.row(j);
          for (size_t t = 0; t < A.cols; ++t) gar[t] += gij * br[t];
        }
      }
      for (size_t i = 0; i < A.rows; ++i) {
        const double* gr = g.row(i);
        const double* ar = A.row(i);
        for (size_t j = 0; j < B.rows; ++j) {
          double gij = gr[j];
          if (gij == 0.0) continue;
          double* gbr = gb.row(j);
          for (size_t t = 0; t < A.cols; ++t) gbr[t] += gij * ar[t];
        }
      }
      break;
    }
    case Op::add: {
      MatD& ga = grad_buf(n.a);
      MatD& gb = grad_buf(n.b);
      for (size_t i = 0; i < g.v.size(); ++i) {
        ga.v[i] += g.v[i];
        gb.v[i] += g.v[i];
      }
      break;
    }
    case Op::add_row: {
      MatD& ga = grad_buf(n.a);
      MatD& gr = grad_buf(n.b);
      for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
      for (size_t i = 0; i < g.rows; ++i) {
        const double* row = g.row(i);
        for (size_t j = 0; j < g.cols; ++j) gr.v[j] += row[j];
      }
      break;
    }
    case Op::sub: {
      MatD& ga = grad_buf(n.a);
      MatD& gb = grad_buf(n.b);
      for (size_t i = 0; i < g.v.size(); ++i) {
        ga.v[i] += g.v[i];
        gb.v[i] -= g.v[i];
      }
      break;
    }
    case Op::hadamard: {
      const MatD& A = val(n.a);
      const MatD& B = val(n.b);
      MatD& ga = grad_buf(n.a);
      MatD& gb = grad_buf(n.b);
      for (size_t i = 0; i < g.v.size(); ++i) {
        ga.v[i] += g.v[i] * B.v[i];
        gb.v[i] += g.v[i] * A.v[i];
      }
      break;
    }
    case Op::scale: {
      MatD& ga = grad_buf(n.a);
      for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += n.s * g.v[i];
      break;
    }
    case Op::row_softmax: {
      MatD& ga = grad_buf(n.a);
      const MatD& y = n.val;
      for (size_t i = 0; i < y.rows; ++i) {
        const double* yr = y.row(i);
        const double* gr = g.row(i);
        double dot = 0;
        for (size_t j = 0; j < y.cols; ++j) dot += yr[j] * gr[j];
        double* gar = ga.row(i);
        for (size_t j = 0; j < y.cols; ++j) gar[j] += yr[j] * (gr[j] - dot);
      }
      break;
    }
    case Op::tanh_act: {
      MatD& ga = grad_buf(n.a);
      const MatD& y = n.val;
      for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * (1.0 - y.v[i] * y.v[i]);
      break;
    }
    case Op::reshape: {
      MatD& ga = grad_buf(n.a);
      for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
      break;
    }
    case Op::concat_cols: {
      size_t off = 0;
      for (NodeId p : n.multi) {
        MatD& gp = grad_buf(p);
        for (size_t j = 0; j < gp.cols; ++j) gp.v[j] += g.v[off + j];
        off += gp.cols;
      }
      break;
    }
    case Op::stack_rows: {
      for (size_t i = 0; i < n.multi.size(); ++i) {
        MatD& gp = grad_buf(n.multi[i]);
        const double* gr = g.row(i);
        for (size_t j = 0; j < gp.cols; ++j) gp.v[j] += gr[j];
      }
      break;
    }
    case Op::slice_cols: {
      MatD& ga = grad_buf(n.a);
      size_t begin = size_t(n.s);
      for (size_t j = 0; j < n.k; ++j) ga.v[begin + j] += g.v[j];
      break;
    }
    case Op::add_n: {
      for (NodeId p : n.multi) {
        MatD& gp = grad_buf(p);
        for (size_t j = 0; j < gp.v.size(); ++j) gp.v[j] += g.v[j];
      }
      break;
    }
    case Op::sqdist_mean: {
      const MatD& A = val(n.a);
      const MatD& B = val(n.b);
      MatD& ga = grad_buf(n.a);
      MatD& gb = grad_buf(n.b);
      double c = g.v[0] * 2.0 / double(A.rows);
      for (size_t i = 0; i < A.rows; ++i) {
        const double* ar = A.row(i);
        const double* br = B.row(i);
        double* gar = ga.row(i);
        double* gbr = gb.row(i);
        for (size_t j = 0; j < A.cols; ++j) {
          double diff = c * (ar[j] - br[j]);
          gar[j] += diff;
          gbr[j] -= diff;
        }
      }
      break;
    }
    case Op::uniformity: {
      const MatD& X = val(n.a);
      MatD& gx = grad_buf(n.a);
      double inv_sum = g.v[0] / n.aux.v[0];
      for (size_t i = 0; i < X.rows; ++i)
        for (size_t j = i + 1; j < X.rows; ++j) {
          const double* xi = X.row(i);
          const double* xj = X.row(j);
          double d2 = 0;
          for (size_t t = 0; t < X.cols; ++t) {
            double dt = xi[t] - xj[t];
            d2 += dt * dt;
          }
          double w = std::exp(-2.0 * d2) * inv_sum * -4.0;
          double* gi = gx.row(i);
          double* gj = gx.row(j);
          for (size_t t = 0; t < X.cols; ++t) {
            double dt = xi[t] - xj[t];
            gi[t] += w * dt;
            gj[t] -= w * dt;
          }
        }
      break;
    }
    case Op::nll_softmax: {
      MatD& ga = grad_buf(n.a);
      for (size_t j = 0; j < n.aux.cols; ++j) {
        double p = n.aux.v[j];
        ga.v[j] += g.v[0] * (p - (j == n.k ? 1.0 : 0.0));
      }
      break;
    }
  }
}

}  // namespace linkedout::ad
