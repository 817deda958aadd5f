#include "dpspg/autodiff.hpp"

#include "dpspg/ops.hpp"

#include <cmath>

namespace dpspg::ad {

Var Tape::emit(Matrix value, bool requires_grad, std::function<void()> backprop) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) { return emit(std::move(value), false); }

Var Tape::leaf(Matrix value) { return emit(std::move(value), true); }

Var Tape::param(ParamStore& store, const std::string& name) {
    if (store.frozen(name)) {
        return constant(store.value(name));
    }
    Var v = leaf(store.value(name));
    bindings_.emplace_back(v.id, name);
    binding_stores_.push_back(&store);
    return v;
}

const Matrix& Tape::grad(Var v) const {
    if (!backward_done_) throw InvalidStateError("Tape::grad before backward()");
    if (!nodes_[v.id].requires_grad) throw InvalidStateError("Tape::grad of a non-differentiable node");
    return nodes_[v.id].grad;
}

void Tape::backward(Var loss) {
    const Node& l = nodes_[loss.id];
    if (l.value.rows() != 1 || l.value.cols() != 1) {
        throw InvalidShapeError("Tape::backward: loss must be 1x1");
    }
    if (!l.value.allFinite()) throw NumericFailureError("Tape::backward: non-finite loss");
    for (Node& n : nodes_) {
        if (n.requires_grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    }
    backward_done_ = true;
    if (!l.requires_grad) return;  // loss does not depend on any leaf
    nodes_[loss.id].grad(0, 0) = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        if (nodes_[i].requires_grad && nodes_[i].backprop) nodes_[i].backprop();
    }
}

void Tape::export_grads() {
    if (!backward_done_) throw InvalidStateError("Tape::export_grads before backward()");
    for (std::size_t i = 0; i < bindings_.size(); ++i) {
        const auto& [id, name] = bindings_[i];
        binding_stores_[i]->accumulate_grad(name, nodes_[id].grad);
    }
}

// --- elementwise / linear ----------------------------------------------------

Var Tape::add(Var a, Var b) {
    Matrix v = value(a) + value(b);
    const bool rg = needs(a) || needs(b);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, a, b, out] {
            const Matrix& g = grad_ref(out);
            if (needs(a)) grad_ref(a) += g;
            if (needs(b)) grad_ref(b) += g;
        };
    }
    return out;
}

Var Tape::sub(Var a, Var b) {
    Matrix v = value(a) - value(b);
    const bool rg = needs(a) || needs(b);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, a, b, out] {
            const Matrix& g = grad_ref(out);
            if (needs(a)) grad_ref(a) += g;
            if (needs(b)) grad_ref(b) -= g;
        };
    }
    return out;
}

Var Tape::scale(Var a, double c) {
    Matrix v = value(a) * c;
    const bool rg = needs(a);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, a, c, out] {
            grad_ref(a) += c * grad_ref(out);
        };
    }
    return out;
}

Var Tape::cwise_mul(Var a, Var b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
        throw InvalidShapeError("cwise_mul: shape mismatch");
    }
    Matrix v = value(a).cwiseProduct(value(b));
    const bool rg = needs(a) || needs(b);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, a, b, out] {
            const Matrix& g = grad_ref(out);
            if (needs(a)) grad_ref(a) += g.cwiseProduct(value(b));
            if (needs(b)) grad_ref(b) += g.cwiseProduct(value(a));
        };
    }
    return out;
}

Var Tape::matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) throw InvalidShapeError("matmul: inner dimension mismatch");
    Matrix v = value(a) * value(b);
    const bool rg = needs(a) || needs(b);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, a, b, out] {
            const Matrix& g = grad_ref(out);
            if (needs(a)) grad_ref(a) += g * value(b).transpose();
            if (needs(b)) grad_ref(b) += value(a).transpose() * g;
        };
    }
    return out;
}

Var Tape::matmul_nt(Var a, Var b) {
    if (value(a).cols() != value(b).cols()) throw InvalidShapeError("matmul_nt: inner dimension mismatch");
    Matrix v = value(a) * value(b).transpose();
    const bool rg = needs(a) || needs(b);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, a, b, out] {
            const Matrix& g = grad_ref(out);
            if (needs(a)) grad_ref(a) += g * value(b);
            if (needs(b)) grad_ref(b) += g.transpose() * value(a);
        };
    }
    return out;
}

Var Tape::add_rowvec(Var x, Var b) {
    if (value(b).rows() != 1 || value(b).cols() != value(x).cols()) {
        throw InvalidShapeError("add_rowvec: b must be 1 x cols(x)");
    }
    Matrix v = value(x).rowwise() + value(b).row(0);
    const bool rg = needs(x) || needs(b);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, x, b, out] {
            const Matrix& g = grad_ref(out);
            if (needs(x)) grad_ref(x) += g;
            if (needs(b)) grad_ref(b) += g.colwise().sum();
        };
    }
    return out;
}

// --- structural --------------------------------------------------------------

Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidInputError("concat_rows: no parts");
    Eigen::Index rows = 0;
    const Eigen::Index cols = value(parts[0]).cols();
    bool rg = false;
    for (Var p : parts) {
        if (value(p).cols() != cols) throw InvalidShapeError("concat_rows: column mismatch");
        rows += value(p).rows();
        rg = rg || needs(p);
    }
    Matrix v(rows, cols);
    Eigen::Index r = 0;
    for (Var p : parts) {
        v.middleRows(r, value(p).rows()) = value(p);
        r += value(p).rows();
    }
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        std::vector<Var> ps = parts;
        nodes_[out.id].backprop = [this, ps, out] {
            const Matrix& g = grad_ref(out);
            Eigen::Index r0 = 0;
            for (Var p : ps) {
                const Eigen::Index n = value(p).rows();
                if (needs(p)) grad_ref(p) += g.middleRows(r0, n);
                r0 += n;
            }
        };
    }
    return out;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidInputError("concat_cols: no parts");
    Eigen::Index cols = 0;
    const Eigen::Index rows = value(parts[0]).rows();
    bool rg = false;
    for (Var p : parts) {
        if (value(p).rows() != rows) throw InvalidShapeError("concat_cols: row mismatch");
        cols += value(p).cols();
        rg = rg || needs(p);
    }
    Matrix v(rows, cols);
    Eigen::Index c = 0;
    for (Var p : parts) {
        v.middleCols(c, value(p).cols()) = value(p);
        c += value(p).cols();
    }
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        std::vector<Var> ps = parts;
        nodes_[out.id].backprop = [this, ps, out] {
            const Matrix& g = grad_ref(out);
            Eigen::Index c0 = 0;
            for (Var p : ps) {
                const Eigen::Index n = value(p).cols();
                if (needs(p)) grad_ref(p) += g.middleCols(c0, n);
                c0 += n;
            }
        };
    }
    return out;
}

Var Tape::interleave_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidInputError("interleave_rows: no parts");
    const Eigen::Index s = value(parts[0]).rows();
    const auto m = static_cast<Eigen::Index>(parts.size());
    bool rg = false;
    std::vector<const Matrix*> ptrs;
    ptrs.reserve(parts.size());
    for (Var p : parts) {
        ptrs.push_back(&value(p));
        rg = rg || needs(p);
    }
    Matrix v = ops::interleave_rows(ptrs);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        std::vector<Var> ps = parts;
        nodes_[out.id].backprop = [this, ps, out, s, m] {
            const Matrix& g = grad_ref(out);
            for (Eigen::Index j = 0; j < m; ++j) {
                Var p = ps[static_cast<std::size_t>(j)];
                if (!needs(p)) continue;
                Matrix& pg = grad_ref(p);
                for (Eigen::Index i = 0; i < s; ++i) pg.row(i) += g.row(i * m + j);
            }
        };
    }
    return out;
}

Var Tape::gather_stride_rows(Var x, Eigen::Index stride, Eigen::Index offset) {
    Matrix v = ops::gather_stride_rows(value(x), stride, offset);
    const Eigen::Index n = v.rows();
    const bool rg = needs(x);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, x, out, stride, offset, n] {
            const Matrix& g = grad_ref(out);
            Matrix& xg = grad_ref(x);
            for (Eigen::Index i = 0; i < n; ++i) xg.row(i * stride + offset) += g.row(i);
        };
    }
    return out;
}

Var Tape::add_tiled_rows(Var x, Var tile) {
    const Eigen::Index t = value(tile).rows();
    Matrix v = ops::add_tiled_rows(value(x), value(tile));
    const bool rg = needs(x) || needs(tile);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, x, tile, out, t] {
            const Matrix& g = grad_ref(out);
            if (needs(x)) grad_ref(x) += g;
            if (needs(tile)) {
                Matrix& tg = grad_ref(tile);
                for (Eigen::Index r = 0; r < g.rows(); ++r) tg.row(r % t) += g.row(r);
            }
        };
    }
    return out;
}

// --- reductions / nonlinearities ----------------------------------------------

Var Tape::block_mean_rows(Var x, Eigen::Index block) {
    Matrix v = ops::block_mean_rows(value(x), block);
    const bool rg = needs(x);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, x, out, block] {
            const Matrix& g = grad_ref(out);
            Matrix& xg = grad_ref(x);
            const double inv = 1.0 / static_cast<double>(block);
            for (Eigen::Index gr = 0; gr < g.rows(); ++gr) {
                for (Eigen::Index i = 0; i < block; ++i) xg.row(gr * block + i) += inv * g.row(gr);
            }
        };
    }
    return out;
}

Var Tape::mean_all(Var x) {
    const Matrix& xv = value(x);
    Matrix v(1, 1);
    v(0, 0) = xv.mean();
    const bool rg = needs(x);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        const double inv = 1.0 / static_cast<double>(xv.size());
        nodes_[out.id].backprop = [this, x, out, inv] {
            grad_ref(x).array() += grad_ref(out)(0, 0) * inv;
        };
    }
    return out;
}

Var Tape::gelu(Var x) {
    Matrix v = ops::gelu(value(x));
    const bool rg = needs(x);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, x, out] {
            grad_ref(x) += grad_ref(out).cwiseProduct(ops::gelu_derivative(value(x)));
        };
    }
    return out;
}

Var Tape::tanh(Var x) {
    Matrix v = value(x).array().tanh();
    const bool rg = needs(x);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, x, out] {
            const Matrix& y = value(out);
            grad_ref(x).array() += grad_ref(out).array() * (1.0 - y.array().square());
        };
    }
    return out;
}

Var Tape::sigmoid(Var x) {
    Matrix v = ops::sigmoid(value(x));
    const bool rg = needs(x);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, x, out] {
            const Matrix& y = value(out);
            grad_ref(x).array() += grad_ref(out).array() * y.array() * (1.0 - y.array());
        };
    }
    return out;
}

namespace {
// Shared softmax backward: dx = (y/tau) o (g - rowwise_dot(g, y)). Rows where
// y is zero outside its block receive exactly zero gradient there.
Matrix softmax_rows_backward(const Matrix& y, const Matrix& g, double tau) {
    Matrix dx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double dot = g.row(r).dot(y.row(r));
        dx.row(r) = (y.row(r).array() * (g.row(r).array() - dot)) / tau;
    }
    return dx;
}
}  // namespace

Var Tape::softmax_rows(Var x, double tau) {
    Matrix v = ops::softmax_rows(value(x), tau);
    const bool rg = needs(x);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, x, out, tau] {
            grad_ref(x) += softmax_rows_backward(value(out), grad_ref(out), tau);
        };
    }
    return out;
}

Var Tape::block_softmax_rows(Var x, Eigen::Index block, double tau) {
    Matrix v = ops::block_softmax_rows(value(x), block, tau);
    const bool rg = needs(x);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, x, out, tau] {
            grad_ref(x) += softmax_rows_backward(value(out), grad_ref(out), tau);
        };
    }
    return out;
}

Var Tape::layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
    const Matrix& xv = value(x);
    const Matrix& gv = value(gamma);
    const Matrix& bv = value(beta);
    Matrix v = ops::layer_norm_rows(xv, gv, bv, eps);
    // cache normalized rows and inverse stddevs for the backward pass
    Matrix xhat(xv.rows(), xv.cols());
    Vector inv(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const double mu = xv.row(r).mean();
        const double var = (xv.row(r).array() - mu).square().mean();
        inv(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (xv.row(r).array() - mu) * inv(r);
    }
    const bool rg = needs(x) || needs(gamma) || needs(beta);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, x, gamma, beta, out, xhat, inv] {
            const Matrix& g = grad_ref(out);
            if (needs(beta)) grad_ref(beta) += g.colwise().sum();
            if (needs(gamma)) grad_ref(gamma) += g.cwiseProduct(xhat).colwise().sum();
            if (needs(x)) {
                const Matrix& gv = value(gamma);
                Matrix& xg = grad_ref(x);
                const auto d = static_cast<double>(xhat.cols());
                for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                    Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gv.row(0));
                    const double m1 = dxhat.sum() / d;
                    const double m2 = dxhat.dot(xhat.row(r)) / d;
                    xg.row(r) += inv(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
                }
            }
        };
    }
    return out;
}

Var Tape::l2_normalize_rows(Var x) {
    const Matrix& xv = value(x);
    Vector norms(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) norms(r) = xv.row(r).norm();
    Matrix v = ops::l2_normalize_rows(xv);
    const bool rg = needs(x);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        nodes_[out.id].backprop = [this, x, out, norms] {
            const Matrix& y = value(out);
            const Matrix& g = grad_ref(out);
            Matrix& xg = grad_ref(x);
            for (Eigen::Index r = 0; r < y.rows(); ++r) {
                const double dot = g.row(r).dot(y.row(r));
                xg.row(r) += (g.row(r) - dot * y.row(r)) / norms(r);
            }
        };
    }
    return out;
}

Var Tape::cross_entropy_rows(Var logits, const std::vector<int>& labels, double tau) {
    const Matrix& lv = value(logits);
    if (static_cast<Eigen::Index>(labels.size()) != lv.rows()) {
        throw InvalidShapeError("cross_entropy_rows: one label per row required");
    }
    if (lv.rows() == 0) throw InvalidInputError("cross_entropy_rows: empty batch");
    if (!(tau > 0.0)) throw InvalidParameterError("cross_entropy_rows: tau must be positive");
    Matrix probs(lv.rows(), lv.cols());
    double loss = 0.0;
    for (Eigen::Index r = 0; r < lv.rows(); ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= lv.cols()) throw InvalidInputError("cross_entropy_rows: label out of range");
        const Vector row = lv.row(r).transpose() / tau;
        const double lse = ops::log_sum_exp(row);
        loss += lse - row(y);
        probs.row(r) = (row.array() - lse).exp().transpose();
    }
    Matrix v(1, 1);
    v(0, 0) = loss / static_cast<double>(lv.rows());
    const bool rg = needs(logits);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        std::vector<int> labs = labels;
        nodes_[out.id].backprop = [this, logits, out, probs, labs, tau] {
            const double gscale = grad_ref(out)(0, 0) / (static_cast<double>(probs.rows()) * tau);
            Matrix d = probs;
            for (Eigen::Index r = 0; r < d.rows(); ++r) d(r, labs[static_cast<std::size_t>(r)]) -= 1.0;
            grad_ref(logits) += gscale * d;
        };
    }
    return out;
}

Var Tape::bce_with_scores(Var scores, const Matrix& targets, double tau, double clamp) {
    const Matrix& sv = value(scores);
    if (sv.rows() == 0) throw InvalidInputError("bce_with_scores: empty batch");
    if (targets.rows() != sv.rows() || targets.cols() != sv.cols()) {
        throw InvalidShapeError("bce_with_scores: target shape mismatch");
    }
    if (!(tau > 0.0)) throw InvalidParameterError("bce_with_scores: tau must be positive");
    Matrix p = ops::sigmoid(sv / tau);
    double loss = 0.0;
    Matrix inside(p.rows(), p.cols());  // 1 where the clamp is inactive
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        for (Eigen::Index c = 0; c < p.cols(); ++c) {
            const double y = targets(r, c);
            const double raw = p(r, c);
            const double pc = std::min(std::max(raw, clamp), 1.0 - clamp);
            inside(r, c) = (raw > clamp && raw < 1.0 - clamp) ? 1.0 : 0.0;
            loss -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
        }
    }
    const double n = static_cast<double>(p.size());
    Matrix v(1, 1);
    v(0, 0) = loss / n;
    const bool rg = needs(scores);
    Var out = emit(std::move(v), rg, nullptr);
    if (rg) {
        Matrix tcopy = targets;
        nodes_[out.id].backprop = [this, scores, out, p, tcopy, inside, tau, n] {
            const double gscale = grad_ref(out)(0, 0) / (n * tau);
            grad_ref(scores).array() += gscale * inside.array() * (p.array() - tcopy.array());
        };
    }
    return out;
}

}  // namespace dpspg::ad
