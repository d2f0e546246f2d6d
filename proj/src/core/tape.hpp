// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "core/mat.hpp"

namespace linkedout::ad {

using MatD = linkedout::MatD;
using NodeId = int32_t;

// Reverse-mode tape over dense double matrices. Nodes reference only earlier
// nodes, so one reverse sweep over the arena is a topological backward pass.
// Gradients are allocated lazily and accumulate, which lets a caller seed
// several nodes (e.g. per-item embedding gradients) before a single sweep.
class Tape {
 public:
  NodeId leaf(MatD value);
  NodeId leaf(const MatF& value);

  const MatD& val(NodeId id) const { return nodes_[size_t(id)].val; }
  const MatD& grad(NodeId id) const;
  bool has_grad(NodeId id) const { return !nodes_[size_t(id)].grad.empty(); }
  size_t size() const { return nodes_.size(); }

  NodeId matmul(NodeId a, NodeId b);     // [n,k] x [k,m]
  NodeId matmul_nt(NodeId a, NodeId b);  // [n,d] x [m,d]^T -> [n,m]
  NodeId add(NodeId a, NodeId b);
  NodeId add_row(NodeId a, NodeId row);  // [n,m] + [1,m]
  NodeId sub(NodeId a, NodeId b);
  NodeId hadamard(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId row_softmax(NodeId a);
  NodeId tanh_act(NodeId a);
  NodeId reshape(NodeId a, size_t rows, size_t cols);
  NodeId concat_cols(const std::vector<NodeId>& parts);  // 1 x k_i each
  NodeId stack_rows(const std::vector<NodeId>& rows);    // 1 x d each -> [n,d]
  NodeId slice_cols(NodeId a, size_t begin, size_t len);
  NodeId add_n(const std::vector<NodeId>& xs);  // same shape, summed in order

  // mean over rows of the squared euclidean distance between paired rows
  NodeId sqdist_mean(NodeId a, NodeId b);
  // log of the mean over distinct unordered row pairs of exp(-2 ||xi - xj||^2)
  NodeId uniformity(NodeId x);
  // -log softmax(scores)[target], scores is 1 x k
  NodeId nll_of_softmax(NodeId scores, size_t target);

  // Adds seed to the node's gradient accumulator.
  void seed(NodeId id, const MatD& g);
  // Seeds a 1x1 root with 1 and sweeps.
  void backward(NodeId root);
  // Propagates whatever seeds are present from the last node downward.
  void sweep();

 private:
  enum class Op : uint8_t {
    leaf, matmul, matmul_nt, add, add_row, sub, hadamard, scale, row_softmax,
    tanh_act, reshape, concat_cols, stack_rows, slice_cols, add_n,
    sqdist_mean, uniformity, nll_softmax,
  };

  struct Node {
    Op op = Op::leaf;
    NodeId a = -1, b = -1;
    double s = 0;        // scale factor / slice begin
    size_t k = 0;        // slice len / softmax target
    std::vector<NodeId> multi;
    MatD val;
    MatD aux;            // op-specific saved forward state
    MatD grad;
  };

  NodeId push(Node&& n);
  MatD& grad_buf(NodeId id);
  void backprop(Node& n);

  // deque keeps value/grad references stable while the graph grows
  std::deque<Node> nodes_;
};

}  // namespace linkedout::ad
