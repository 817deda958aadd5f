#pragma once

#include "dpspg/autodiff.hpp"
#include "dpspg/ops.hpp"

namespace dpspg {

// Forward composites (transformer layer, text encoder, prompt generator) are
// written once against this interface and instantiated twice: PlainEngine for
// gradient-free evaluation and TapeEngine for training. Both delegate to the
// same ops:: kernels, so the two paths compute the same math.

struct PlainEngine {
    using V = Matrix;

    V constant(Matrix m) const { return m; }
    V add(const V& a, const V& b) const { return a + b; }
    V scale(const V& a, double c) const { return a * c; }
    V matmul(const V& a, const V& b) const { return a * b; }
    V matmul_nt(const V& a, const V& b) const { return a * b.transpose(); }
    V add_rowvec(const V& x, const V& b) const { return x.rowwise() + b.row(0); }
    V concat_cols(const std::vector<V>& parts) const {
        Eigen::Index cols = 0;
        for (const V& p : parts) cols += p.cols();
        V out(parts[0].rows(), cols);
        Eigen::Index c = 0;
        for (const V& p : parts) {
            out.middleCols(c, p.cols()) = p;
            c += p.cols();
        }
        return out;
    }
    V concat_rows(const std::vector<V>& parts) const {
        Eigen::Index rows = 0;
        for (const V& p : parts) rows += p.rows();
        V out(rows, parts[0].cols());
        Eigen::Index r = 0;
        for (const V& p : parts) {
            out.middleRows(r, p.rows()) = p;
            r += p.rows();
        }
        return out;
    }
    V interleave_rows(const std::vector<V>& parts) const {
        std::vector<const Matrix*> ptrs;
        ptrs.reserve(parts.size());
        for (const V& p : parts) ptrs.push_back(&p);
        return ops::interleave_rows(ptrs);
    }
    V gather_stride_rows(const V& x, Eigen::Index stride, Eigen::Index offset) const {
        return ops::gather_stride_rows(x, stride, offset);
    }
    V add_tiled_rows(const V& x, const V& tile) const { return ops::add_tiled_rows(x, tile); }
    V block_mean_rows(const V& x, Eigen::Index block) const { return ops::block_mean_rows(x, block); }
    V gelu(const V& x) const { return ops::gelu(x); }
    V block_softmax_rows(const V& x, Eigen::Index block, double tau) const {
        return ops::block_softmax_rows(x, block, tau);
    }
    V layer_norm_rows(const V& x, const V& g, const V& b) const { return ops::layer_norm_rows(x, g, b); }
    V l2_normalize_rows(const V& x) const { return ops::l2_normalize_rows(x); }
};

struct TapeEngine {
    ad::Tape* tape;
    using V = ad::Var;

    explicit TapeEngine(ad::Tape& t) : tape(&t) {}

    V constant(Matrix m) const { return tape->constant(std::move(m)); }
    V add(V a, V b) const { return tape->add(a, b); }
    V scale(V a, double c) const { return tape->scale(a, c); }
    V matmul(V a, V b) const { return tape->matmul(a, b); }
    V matmul_nt(V a, V b) const { return tape->matmul_nt(a, b); }
    V add_rowvec(V x, V b) const { return tape->add_rowvec(x, b); }
    V concat_cols(const std::vector<V>& parts) const { return tape->concat_cols(parts); }
    V concat_rows(const std::vector<V>& parts) const { return tape->concat_rows(parts); }
    V interleave_rows(const std::vector<V>& parts) const { return tape->interleave_rows(parts); }
    V gather_stride_rows(V x, Eigen::Index stride, Eigen::Index offset) const {
        return tape->gather_stride_rows(x, stride, offset);
    }
    V add_tiled_rows(V x, V tile) const { return tape->add_tiled_rows(x, tile); }
    V block_mean_rows(V x, Eigen::Index block) const { return tape->block_mean_rows(x, block); }
    V gelu(V x) const { return tape->gelu(x); }
    V block_softmax_rows(V x, Eigen::Index block, double tau) const {
        return tape->block_softmax_rows(x, block, tau);
    }
    V layer_norm_rows(V x, V g, V b) const { return tape->layer_norm_rows(x, g, b); }
    V l2_normalize_rows(V x) const { return tape->l2_normalize_rows(x); }
};

}  // namespace dpspg
