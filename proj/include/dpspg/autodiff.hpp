#pragma once

#include "dpspg/common.hpp"
#include "dpspg/param_store.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dpspg::ad {

// Handle into a Tape. Cheap to copy; only valid for the tape that issued it.
struct Var {
    int id = -1;
};

// Reverse-mode tape over dense matrices. One tape per loss evaluation:
// build the graph forward, call backward(loss), then export_grads() to move
// leaf gradients into their ParamStore entries.
class Tape {
public:
    Var constant(Matrix value);
    // Leaf with gradient tracking, detached from any store.
    Var leaf(Matrix value);
    // Leaf bound to a ParamStore entry; frozen entries become constants.
    Var param(ParamStore& store, const std::string& name);

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    const Matrix& grad(Var v) const;

    // Seeds d(loss)/d(loss) = 1 (loss must be 1x1) and runs the graph in
    // reverse. Gradients of all requires-grad nodes are available afterwards.
    void backward(Var loss);

    // Adds accumulated leaf gradients into their bound ParamStore entries.
    void export_grads();

    std::size_t node_count() const { return nodes_.size(); }

    // --- primitive ops -----------------------------------------------------
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double c);
    Var cwise_mul(Var a, Var b);
    Var matmul(Var a, Var b);     // a * b
    Var matmul_nt(Var a, Var b);  // a * b^T
    Var add_rowvec(Var x, Var b);               // row vector broadcast over rows
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    // Rows of the result interleave the inputs: row(s*M + m) = parts[m].row(s).
    Var interleave_rows(const std::vector<Var>& parts);
    // Inverse access for interleaved layouts: picks rows {s*stride + offset}.
    Var gather_stride_rows(Var x, Eigen::Index stride, Eigen::Index offset);
    // Adds tile.row(r % tile.rows()) to each row r (positional embeddings
    // over a sample-major batched sequence).
    Var add_tiled_rows(Var x, Var tile);
    Var block_mean_rows(Var x, Eigen::Index block);
    Var mean_all(Var x);
    Var gelu(Var x);
    Var tanh(Var x);
    Var sigmoid(Var x);
    Var softmax_rows(Var x, double tau);
    Var block_softmax_rows(Var x, Eigen::Index block, double tau);
    Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var l2_normalize_rows(Var x);
    Var square(Var x) { return cwise_mul(x, x); }
    Var mse(Var a, Var b) { return mean_all(square(sub(a, b))); }

    // Mean over rows of -log softmax(logits/tau)[label]. Stable log-sum-exp.
    Var cross_entropy_rows(Var logits, const std::vector<int>& labels, double tau);

    // Binary cross-entropy of sigmoid(scores/tau) against 0/1 targets,
    // probabilities clamped to [clamp, 1-clamp] before the logs, averaged
    // over every entry (classes then batch).
    Var bce_with_scores(Var scores, const Matrix& targets, double tau, double clamp = 1e-7);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        std::function<void()> backprop;  // pushes this node's grad to parents
    };

    Var emit(Matrix value, bool requires_grad, std::function<void()> backprop = nullptr);
    Matrix& grad_ref(Var v) { return nodes_[v.id].grad; }
    bool needs(Var v) const { return nodes_[v.id].requires_grad; }

    std::vector<Node> nodes_;
    std::vector<std::pair<int, std::string>> bindings_;  // leaf id -> store entry
    std::vector<ParamStore*> binding_stores_;            // parallel to bindings_
    bool backward_done_ = false;
};

}  // namespace dpspg::ad
