#include "dpspg/ops.hpp"

#include <cmath>

namespace dpspg::ops {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Vector softmax(const Vector& logits, double tau) {
    if (logits.size() == 0) throw InvalidShapeError("softmax: empty logits");
    if (!(tau > 0.0)) throw InvalidParameterError("softmax: tau must be positive");
    const Vector scaled = logits / tau;
    const double m = scaled.maxCoeff();
    Vector e = (scaled.array() - m).exp();
    e /= e.sum();
    return e;
}

Matrix softmax_jacobian(const Vector& probs, double tau) {
    if (probs.size() == 0) throw InvalidShapeError("softmax_jacobian: empty probability vector");
    if (!(tau > 0.0)) throw InvalidParameterError("softmax_jacobian: tau must be positive");
    if (std::abs(probs.sum() - 1.0) > 1e-8 || probs.minCoeff() < -1e-12) {
        throw InvalidInputError("softmax_jacobian: input is not a normalized probability vector");
    }
    const Eigen::Index k = probs.size();
    Matrix j(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index c = 0; c < k; ++c) {
            const double delta = (i == c) ? 1.0 : 0.0;
            j(i, c) = probs(i) * (delta - probs(c)) / tau;
        }
    }
    return j;
}

double log_sum_exp(const Vector& v) {
    const double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
}

Matrix softmax_rows(const Matrix& x, double tau) {
    if (!(tau > 0.0)) throw InvalidParameterError("softmax_rows: tau must be positive");
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double m = x.row(r).maxCoeff();
        Eigen::RowVectorXd e = ((x.row(r).array() - m) / tau).exp();
        out.row(r) = e / e.sum();
    }
    return out;
}

Matrix block_softmax_rows(const Matrix& x, Eigen::Index block, double tau) {
    if (block <= 0 || x.rows() % block != 0 || x.cols() % block != 0 ||
        x.rows() != x.cols()) {
        throw InvalidShapeError("block_softmax_rows: square matrix with row/col count divisible by block required");
    }
    Matrix out = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const Eigen::Index c0 = (r / block) * block;
        const double m = x.row(r).segment(c0, block).maxCoeff();
        Eigen::RowVectorXd e = ((x.row(r).segment(c0, block).array() - m) / tau).exp();
        out.row(r).segment(c0, block) = e / e.sum();
    }
    return out;
}

Matrix gelu(const Matrix& x) {
    return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
}

Matrix gelu_derivative(const Matrix& x) {
    return x.unaryExpr([](double v) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
    });
}

Matrix sigmoid(const Matrix& x) {
    // split by sign so exp never overflows
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            const double v = x(r, c);
            if (v >= 0.0) {
                out(r, c) = 1.0 / (1.0 + std::exp(-v));
            } else {
                const double e = std::exp(v);
                out(r, c) = e / (1.0 + e);
            }
        }
    }
    return out;
}

Matrix layer_norm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps) {
    if (gamma.rows() != 1 || beta.rows() != 1 || gamma.cols() != x.cols() || beta.cols() != x.cols()) {
        throw InvalidShapeError("layer_norm_rows: gamma/beta must be 1 x cols(x)");
    }
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double inv = 1.0 / std::sqrt(var + eps);
        out.row(r) = ((x.row(r).array() - mu) * inv) * gamma.row(0).array() + beta.row(0).array();
    }
    return out;
}

Matrix l2_normalize_rows(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double n = x.row(r).norm();
        if (!(n > 0.0)) throw NumericFailureError("l2_normalize_rows: zero-norm row");
        out.row(r) = x.row(r) / n;
    }
    return out;
}

Matrix block_mean_rows(const Matrix& x, Eigen::Index block) {
    if (block <= 0 || x.rows() % block != 0) {
        throw InvalidShapeError("block_mean_rows: row count must be a multiple of block");
    }
    const Eigen::Index groups = x.rows() / block;
    Matrix out(groups, x.cols());
    for (Eigen::Index g = 0; g < groups; ++g) {
        out.row(g) = x.middleRows(g * block, block).colwise().mean();
    }
    return out;
}

Matrix interleave_rows(const std::vector<const Matrix*>& parts) {
    if (parts.empty()) throw InvalidInputError("interleave_rows: no parts");
    const Eigen::Index s = parts[0]->rows();
    const Eigen::Index cols = parts[0]->cols();
    const auto m = static_cast<Eigen::Index>(parts.size());
    for (const Matrix* p : parts) {
        if (p->rows() != s || p->cols() != cols) {
            throw InvalidShapeError("interleave_rows: all parts must share a shape");
        }
    }
    Matrix out(s * m, cols);
    for (Eigen::Index i = 0; i < s; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            out.row(i * m + j) = parts[static_cast<std::size_t>(j)]->row(i);
        }
    }
    return out;
}

Matrix gather_stride_rows(const Matrix& x, Eigen::Index stride, Eigen::Index offset) {
    if (stride <= 0 || offset < 0 || offset >= stride || x.rows() % stride != 0) {
        throw InvalidShapeError("gather_stride_rows: bad stride/offset");
    }
    const Eigen::Index n = x.rows() / stride;
    Matrix out(n, x.cols());
    for (Eigen::Index i = 0; i < n; ++i) out.row(i) = x.row(i * stride + offset);
    return out;
}

Matrix add_tiled_rows(const Matrix& x, const Matrix& tile) {
    if (tile.cols() != x.cols() || tile.rows() == 0 || x.rows() % tile.rows() != 0) {
        throw InvalidShapeError("add_tiled_rows: tile must evenly divide rows(x)");
    }
    Matrix out = x;
    for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) += tile.row(r % tile.rows());
    return out;
}

}  // namespace dpspg::ops
