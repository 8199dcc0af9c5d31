#pragma once

#include <functional>
#include <vector>

#include "picotab/tensor.hpp"

namespace picotab {

// Reverse-mode tape over Tensor. Ops append nodes that only reference
// earlier nodes, so reverse creation order is a valid topological order for
// backward(). Everything runs in double; gradients are exact enough for
// central finite differences at rel-err 1e-4.
class Graph {
  public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Var leaf(const Tensor& value, bool needs_grad);

    const Tensor& val(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    const Tensor& grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].grad; }

    // y = x @ w (+ b); x [..., din] with leading dims flattened.
    Var linear(Var x, Var w);
    Var linear(Var x, Var w, Var b);
    Var add(Var a, Var b);
    // x [A,B,D] + t [B,D] broadcast over the leading axis.
    Var add_broadcast(Var x, Var t);
    Var gelu(Var x);
    // Normalization over the last axis, learned gain/bias [D].
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
    // [A,B,D] -> [B,A,D]
    Var transpose01(Var x);

    enum class Mask {
        none,  // full bidirectional attention
        pfn,   // rows < n_ctx attend among themselves; row i >= n_ctx attends rows < n_ctx and itself
    };
    // Multi-head self-attention along axis 1 of x [B, S, D].
    Var attention(Var x, int heads, Mask mask, int n_ctx, Var wq, Var wk, Var wv, Var wo, Var bo);

    // Token grid assembly: thinking rows broadcast across all columns, then
    // feature rows with their per-row target token (train target embedding
    // or the learned unknown embedding for test rows).
    Var build_grid(Var feat, Var train_targets, Var unknown, Var think, int n_train);

    Var take_col(Var x, int col);               // [A,B,D] -> [A,D]
    Var take_rows(Var x, int begin, int count); // [A,D] -> [count,D]
    Var gather_rows(Var table, std::vector<int> indices);  // [C,D] -> [n,D]

    // Mean over rows of -log softmax(logits[:, :n_valid])[target].
    Var ce_loss(Var logits, std::vector<int> targets, int n_valid);

    void backward(Var loss);

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        std::function<void(Graph&)> backprop;  // empty for leaves
    };

    Var push(Tensor value, bool needs_grad, std::function<void(Graph&)> backprop);
    Tensor& grad_ref(Var v) { return nodes_[static_cast<size_t>(v.id)].grad; }
    bool wants(Var v) const { return v.valid() && nodes_[static_cast<size_t>(v.id)].needs_grad; }

    std::vector<Node> nodes_;
};

using Var = Graph::Var;

}  // namespace picotab
