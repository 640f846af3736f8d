#pragma once

#include <Eigen/SVD>

#include <functional>
#include <memory>
#include <vector>

#include "gdahin/common.hpp"
#include "gdahin/errors.hpp"

// Reverse-mode tape over dense Eigen matrices. A Tape owns the nodes of one
// forward pass; backward() walks them in reverse creation order. Scalars are
// 1x1 matrices. Build a fresh tape per optimization step.

namespace gda::ad {

class Tape;

struct Node {
    Mat val;
    Mat grad;  // allocated on first accumulate
    bool needs_grad = false;
    std::function<void()> back;  // pushes this->grad into parents

    bool has_grad() const { return grad.size() > 0; }
    void accumulate(const Mat& g) {
        if (!has_grad()) grad = Mat::Zero(val.rows(), val.cols());
        grad += g;
    }
    double scalar() const { return val(0, 0); }
};

using Var = Node*;

class Tape {
  public:
    Var make(Mat v, bool needs_grad) {
        nodes_.push_back(std::make_unique<Node>());
        Node* n = nodes_.back().get();
        n->val = std::move(v);
        n->needs_grad = needs_grad;
        return n;
    }

    /// Seeds d(loss)/d(loss) = 1 and propagates to every upstream node.
    void backward(Var loss) {
        if (loss->val.rows() != 1 || loss->val.cols() != 1)
            throw ContractError("backward: loss must be a 1x1 scalar");
        loss->accumulate(Mat::Ones(1, 1));
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node* n = it->get();
            if (n->back && n->has_grad()) n->back();
        }
    }

    size_t size() const { return nodes_.size(); }

  private:
    std::vector<std::unique_ptr<Node>> nodes_;
};

inline Var constant(Tape& t, Mat v) { return t.make(std::move(v), false); }
inline Var leaf(Tape& t, Mat v) { return t.make(std::move(v), true); }
inline Var scalar_const(Tape& t, double v) { return t.make(Mat::Constant(1, 1, v), false); }

namespace detail {
inline void check_same_shape(const Var a, const Var b, const char* op) {
    if (a->val.rows() != b->val.rows() || a->val.cols() != b->val.cols())
        throw ContractError(std::string(op) + ": shape mismatch " +
                            strfmt("(%ldx%ld vs %ldx%ld)", a->val.rows(), a->val.cols(),
                                   b->val.rows(), b->val.cols()));
}
}  // namespace detail

inline Var add(Tape& t, Var a, Var b) {
    detail::check_same_shape(a, b, "add");
    Var out = t.make(a->val + b->val, a->needs_grad || b->needs_grad);
    if (out->needs_grad) out->back = [out, a, b] {
        if (a->needs_grad) a->accumulate(out->grad);
        if (b->needs_grad) b->accumulate(out->grad);
    };
    return out;
}

inline Var sub(Tape& t, Var a, Var b) {
    detail::check_same_shape(a, b, "sub");
    Var out = t.make(a->val - b->val, a->needs_grad || b->needs_grad);
    if (out->needs_grad) out->back = [out, a, b] {
        if (a->needs_grad) a->accumulate(out->grad);
        if (b->needs_grad) b->accumulate(-out->grad);
    };
    return out;
}

/// Broadcast-add a 1xC row vector to every row of a.
inline Var add_rowvec(Tape& t, Var a, Var b) {
    if (b->val.rows() != 1 || b->val.cols() != a->val.cols())
        throw ContractError("add_rowvec: b must be 1 x cols(a)");
    Var out = t.make(a->val.rowwise() + b->val.row(0), a->needs_grad || b->needs_grad);
    if (out->needs_grad) out->back = [out, a, b] {
        if (a->needs_grad) a->accumulate(out->grad);
        if (b->needs_grad) b->accumulate(out->grad.colwise().sum());
    };
    return out;
}

inline Var matmul(Tape& t, Var a, Var b) {
    if (a->val.cols() != b->val.rows()) throw ContractError("matmul: inner dims differ");
    Var out = t.make(a->val * b->val, a->needs_grad || b->needs_grad);
    if (out->needs_grad) out->back = [out, a, b] {
        if (a->needs_grad) a->accumulate(out->grad * b->val.transpose());
        if (b->needs_grad) b->accumulate(a->val.transpose() * out->grad);
    };
    return out;
}

inline Var scale(Tape& t, Var a, double c) {
    Var out = t.make(a->val * c, a->needs_grad);
    if (out->needs_grad) out->back = [out, a, c] { a->accumulate(out->grad * c); };
    return out;
}

/// Multiply a matrix by a learnable 1x1 scalar.
inline Var scale_by(Tape& t, Var a, Var s) {
    if (s->val.rows() != 1 || s->val.cols() != 1) throw ContractError("scale_by: s must be 1x1");
    Var out = t.make(a->val * s->val(0, 0), a->needs_grad || s->needs_grad);
    if (out->needs_grad) out->back = [out, a, s] {
        if (a->needs_grad) a->accumulate(out->grad * s->val(0, 0));
        if (s->needs_grad)
            s->accumulate(Mat::Constant(1, 1, (out->grad.array() * a->val.array()).sum()));
    };
    return out;
}

/// Elementwise product with a constant mask (dropout, block masks).
inline Var cwise_mul_const(Tape& t, Var a, Mat mask) {
    if (mask.rows() != a->val.rows() || mask.cols() != a->val.cols())
        throw ContractError("cwise_mul_const: mask shape mismatch");
    auto m = std::make_shared<Mat>(std::move(mask));
    Var out = t.make(a->val.cwiseProduct(*m), a->needs_grad);
    if (out->needs_grad) out->back = [out, a, m] { a->accumulate(out->grad.cwiseProduct(*m)); };
    return out;
}

/// Scale row i of a by v(i); v is an Nx1 column.
inline Var mul_colvec(Tape& t, Var a, Var v) {
    if (v->val.cols() != 1 || v->val.rows() != a->val.rows())
        throw ContractError("mul_colvec: v must be rows(a) x 1");
    Var out = t.make(a->val.array().colwise() * v->val.col(0).array(),
                     a->needs_grad || v->needs_grad);
    if (out->needs_grad) out->back = [out, a, v] {
        if (a->needs_grad)
            a->accumulate(out->grad.array().colwise() * v->val.col(0).array());
        if (v->needs_grad)
            v->accumulate((out->grad.array() * a->val.array()).rowwise().sum().matrix());
    };
    return out;
}

inline Var tanh_op(Tape& t, Var a) {
    Var out = t.make(a->val.array().tanh().matrix(), a->needs_grad);
    if (out->needs_grad) out->back = [out, a] {
        a->accumulate((out->grad.array() * (1.0 - out->val.array().square())).matrix());
    };
    return out;
}

inline Var relu(Tape& t, Var a) {
    Var out = t.make(a->val.cwiseMax(0.0), a->needs_grad);
    if (out->needs_grad) out->back = [out, a] {
        a->accumulate((out->grad.array() * (a->val.array() > 0.0).cast<double>()).matrix());
    };
    return out;
}

inline Var sigmoid(Tape& t, Var a) {
    Mat y = (1.0 / (1.0 + (-a->val.array()).exp())).matrix();
    Var out = t.make(std::move(y), a->needs_grad);
    if (out->needs_grad) out->back = [out, a] {
        a->accumulate(
            (out->grad.array() * out->val.array() * (1.0 - out->val.array())).matrix());
    };
    return out;
}

/// Identity forward; backward multiplies the incoming gradient by -lambda.
inline Var gradient_reversal(Tape& t, Var a, double lambda) {
    if (lambda < 0) throw ContractError("gradient_reversal: lambda must be >= 0");
    Var out = t.make(a->val, a->needs_grad);
    if (out->needs_grad) out->back = [out, a, lambda] { a->accumulate(-lambda * out->grad); };
    return out;
}

/// Identity forward; backward multiplies the incoming gradient by s. Used to
/// decouple a term's contribution to the loss value from the strength of the
/// updates it drives.
inline Var grad_scale(Tape& t, Var a, double s) {
    Var out = t.make(a->val, a->needs_grad);
    if (out->needs_grad) out->back = [out, a, s] { a->accumulate(s * out->grad); };
    return out;
}

inline Var gather_rows(Tape& t, Var a, std::vector<int> idx) {
    Mat y(static_cast<long>(idx.size()), a->val.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= a->val.rows())
            throw ContractError("gather_rows: index out of range");
        y.row(static_cast<long>(i)) = a->val.row(idx[i]);
    }
    auto ix = std::make_shared<std::vector<int>>(std::move(idx));
    Var out = t.make(std::move(y), a->needs_grad);
    if (out->needs_grad) out->back = [out, a, ix] {
        Mat g = Mat::Zero(a->val.rows(), a->val.cols());
        for (size_t i = 0; i < ix->size(); ++i)
            g.row((*ix)[i]) += out->grad.row(static_cast<long>(i));
        a->accumulate(g);
    };
    return out;
}

inline Var vstack(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("vstack: empty input");
    long rows = 0;
    const long cols = parts[0]->val.cols();
    bool needs = false;
    for (Var p : parts) {
        if (p->val.cols() != cols) throw ContractError("vstack: column mismatch");
        rows += p->val.rows();
        needs = needs || p->needs_grad;
    }
    Mat y(rows, cols);
    long r = 0;
    for (Var p : parts) {
        y.middleRows(r, p->val.rows()) = p->val;
        r += p->val.rows();
    }
    auto ps = std::make_shared<std::vector<Var>>(parts);
    Var out = t.make(std::move(y), needs);
    if (out->needs_grad) out->back = [out, ps] {
        long r0 = 0;
        for (Var p : *ps) {
            if (p->needs_grad) p->accumulate(out->grad.middleRows(r0, p->val.rows()));
            r0 += p->val.rows();
        }
    };
    return out;
}

inline Var hstack(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("hstack: empty input");
    long cols = 0;
    const long rows = parts[0]->val.rows();
    bool needs = false;
    for (Var p : parts) {
        if (p->val.rows() != rows) throw ContractError("hstack: row mismatch");
        cols += p->val.cols();
        needs = needs || p->needs_grad;
    }
    Mat y(rows, cols);
    long c = 0;
    for (Var p : parts) {
        y.middleCols(c, p->val.cols()) = p->val;
        c += p->val.cols();
    }
    auto ps = std::make_shared<std::vector<Var>>(parts);
    Var out = t.make(std::move(y), needs);
    if (out->needs_grad) out->back = [out, ps] {
        long c0 = 0;
        for (Var p : *ps) {
            if (p->needs_grad) p->accumulate(out->grad.middleCols(c0, p->val.cols()));
            c0 += p->val.cols();
        }
    };
    return out;
}

inline Var block(Tape& t, Var a, long r0, long c0, long nr, long nc) {
    if (r0 < 0 || c0 < 0 || r0 + nr > a->val.rows() || c0 + nc > a->val.cols())
        throw ContractError("block: out of range");
    Var out = t.make(a->val.block(r0, c0, nr, nc), a->needs_grad);
    if (out->needs_grad) out->back = [out, a, r0, c0, nr, nc] {
        Mat g = Mat::Zero(a->val.rows(), a->val.cols());
        g.block(r0, c0, nr, nc) = out->grad;
        a->accumulate(g);
    };
    return out;
}

inline Var cols_block(Tape& t, Var a, long c0, long nc) {
    return block(t, a, 0, c0, a->val.rows(), nc);
}

inline Var rows_range(Tape& t, Var a, long r0, long nr) {
    return block(t, a, r0, 0, nr, a->val.cols());
}

/// Per-row dot product of two equally shaped matrices -> Nx1 column.
inline Var rowwise_dot(Tape& t, Var a, Var b) {
    detail::check_same_shape(a, b, "rowwise_dot");
    Mat y = (a->val.array() * b->val.array()).rowwise().sum().matrix();
    Var out = t.make(std::move(y), a->needs_grad || b->needs_grad);
    if (out->needs_grad) out->back = [out, a, b] {
        if (a->needs_grad)
            a->accumulate(b->val.array().colwise() * out->grad.col(0).array());
        if (b->needs_grad)
            b->accumulate(a->val.array().colwise() * out->grad.col(0).array());
    };
    return out;
}

/// Softmax of an Ex1 score column within segments; rows with seg id s are
/// normalized against all other rows of segment s.
inline Var segment_softmax(Tape& t, Var scores, std::vector<int> seg, int num_segments) {
    if (scores->val.cols() != 1) throw ContractError("segment_softmax: scores must be Ex1");
    if (static_cast<long>(seg.size()) != scores->val.rows())
        throw ContractError("segment_softmax: segment id count mismatch");
    const long e = scores->val.rows();
    Vec mx = Vec::Constant(num_segments, -std::numeric_limits<double>::infinity());
    for (long i = 0; i < e; ++i) mx(seg[i]) = std::max(mx(seg[i]), scores->val(i, 0));
    Vec denom = Vec::Zero(num_segments);
    Mat y(e, 1);
    for (long i = 0; i < e; ++i) {
        y(i, 0) = std::exp(scores->val(i, 0) - mx(seg[i]));
        denom(seg[i]) += y(i, 0);
    }
    for (long i = 0; i < e; ++i) y(i, 0) /= denom(seg[i]);
    auto sg = std::make_shared<std::vector<int>>(std::move(seg));
    Var out = t.make(std::move(y), scores->needs_grad);
    if (out->needs_grad) out->back = [out, scores, sg, num_segments] {
        // ds_i = y_i * (g_i - sum_{j in seg(i)} y_j g_j)
        Vec dot = Vec::Zero(num_segments);
        const long n = out->val.rows();
        for (long i = 0; i < n; ++i) dot((*sg)[i]) += out->val(i, 0) * out->grad(i, 0);
        Mat ds(n, 1);
        for (long i = 0; i < n; ++i)
            ds(i, 0) = out->val(i, 0) * (out->grad(i, 0) - dot((*sg)[i]));
        scores->accumulate(ds);
    };
    return out;
}

/// Sums rows of an Exd matrix into num_segments buckets by segment id.
inline Var segment_sum(Tape& t, Var a, std::vector<int> seg, int num_segments) {
    if (static_cast<long>(seg.size()) != a->val.rows())
        throw ContractError("segment_sum: segment id count mismatch");
    Mat y = Mat::Zero(num_segments, a->val.cols());
    for (long i = 0; i < a->val.rows(); ++i) y.row(seg[i]) += a->val.row(i);
    auto sg = std::make_shared<std::vector<int>>(std::move(seg));
    Var out = t.make(std::move(y), a->needs_grad);
    if (out->needs_grad) out->back = [out, a, sg] {
        Mat g(a->val.rows(), a->val.cols());
        for (long i = 0; i < a->val.rows(); ++i) g.row(i) = out->grad.row((*sg)[i]);
        a->accumulate(g);
    };
    return out;
}

/// Sum of squared differences against a constant target (no averaging).
inline Var sum_sq_diff(Tape& t, Var a, Mat target) {
    if (target.rows() != a->val.rows() || target.cols() != a->val.cols())
        throw ContractError("sum_sq_diff: shape mismatch");
    auto tg = std::make_shared<Mat>(std::move(target));
    double v = (a->val - *tg).squaredNorm();
    Var out = t.make(Mat::Constant(1, 1, v), a->needs_grad);
    if (out->needs_grad) out->back = [out, a, tg] {
        a->accumulate(out->grad(0, 0) * 2.0 * (a->val - *tg));
    };
    return out;
}

/// Mean over all entries of squared differences.
inline Var mse(Tape& t, Var a, Mat target) {
    const double n = static_cast<double>(a->val.size());
    return scale(t, sum_sq_diff(t, a, std::move(target)), 1.0 / n);
}

/// Mean softmax cross-entropy of logits rows against integer labels.
inline Var softmax_cross_entropy(Tape& t, Var logits, std::vector<int> labels) {
    const long n = logits->val.rows();
    const long c = logits->val.cols();
    if (n == 0) throw ContractError("softmax_cross_entropy: empty batch");
    if (static_cast<long>(labels.size()) != n)
        throw ContractError("softmax_cross_entropy: label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= c) throw ContractError("softmax_cross_entropy: label id out of range");
    Mat probs(n, c);
    double loss = 0;
    for (long i = 0; i < n; ++i) {
        double m = logits->val.row(i).maxCoeff();
        Eigen::RowVectorXd ex = (logits->val.row(i).array() - m).exp();
        double z = ex.sum();
        probs.row(i) = ex / z;
        loss += m + std::log(z) - logits->val(i, labels[i]);
    }
    loss /= static_cast<double>(n);
    auto pr = std::make_shared<Mat>(std::move(probs));
    auto lb = std::make_shared<std::vector<int>>(std::move(labels));
    Var out = t.make(Mat::Constant(1, 1, loss), logits->needs_grad);
    if (out->needs_grad) out->back = [out, logits, pr, lb] {
        Mat g = *pr;
        const long rows = g.rows();
        for (long i = 0; i < rows; ++i) g(i, (*lb)[i]) -= 1.0;
        logits->accumulate(out->grad(0, 0) / static_cast<double>(rows) * g);
    };
    return out;
}

/// Domain-adversarial binary cross-entropy: source labeled 0, target labeled 1,
/// averaged as (mean over source + mean over target) / 2. Probabilities are
/// clamped to [eps, 1-eps] before the log; clamped entries get zero gradient.
inline Var domain_bce(Tape& t, Var p_src, Var p_tgt, double eps = 1e-7) {
    if (p_src->val.cols() != 1 || p_tgt->val.cols() != 1)
        throw ContractError("domain_bce: probabilities must be Nx1");
    const long ns = p_src->val.rows();
    const long nt = p_tgt->val.rows();
    if (ns == 0 || nt == 0) throw ContractError("domain_bce: empty domain batch");
    double ls = 0, lt = 0;
    for (long i = 0; i < ns; ++i)
        ls += std::log(1.0 - std::clamp(p_src->val(i, 0), eps, 1.0 - eps));
    for (long i = 0; i < nt; ++i)
        lt += std::log(std::clamp(p_tgt->val(i, 0), eps, 1.0 - eps));
    double loss = -0.5 * (ls / ns + lt / nt);
    Var out = t.make(Mat::Constant(1, 1, loss), p_src->needs_grad || p_tgt->needs_grad);
    if (out->needs_grad) out->back = [out, p_src, p_tgt, eps] {
        const double g = out->grad(0, 0);
        const long ns2 = p_src->val.rows();
        const long nt2 = p_tgt->val.rows();
        if (p_src->needs_grad) {
            Mat gs(ns2, 1);
            for (long i = 0; i < ns2; ++i) {
                double p = p_src->val(i, 0);
                gs(i, 0) = (p < eps || p > 1.0 - eps)
                               ? 0.0
                               : g * 0.5 / static_cast<double>(ns2) / (1.0 - p);
            }
            p_src->accumulate(gs);
        }
        if (p_tgt->needs_grad) {
            Mat gt(nt2, 1);
            for (long i = 0; i < nt2; ++i) {
                double p = p_tgt->val(i, 0);
                gt(i, 0) = (p < eps || p > 1.0 - eps)
                               ? 0.0
                               : -g * 0.5 / static_cast<double>(nt2) / p;
            }
            p_tgt->accumulate(gt);
        }
    };
    return out;
}

/// Sum of singular values. Backward uses the SVD subgradient U V^T.
inline Var nuclear_norm_op(Tape& t, Var a) {
    if (!all_finite(a->val)) throw ContractError("nuclear_norm: non-finite entries");
    Eigen::BDCSVD<Mat> svd(a->val, Eigen::ComputeThinU | Eigen::ComputeThinV);
    double v = svd.singularValues().sum();
    auto sub = std::make_shared<Mat>(svd.matrixU() * svd.matrixV().transpose());
    Var out = t.make(Mat::Constant(1, 1, v), a->needs_grad);
    if (out->needs_grad) out->back = [out, a, sub] { a->accumulate(out->grad(0, 0) * *sub); };
    return out;
}

/// tr(H^T L H) for a symmetric sparse L; gradient is 2 L H.
inline Var quadratic_form(Tape& t, Var h, std::shared_ptr<const SpMat> lap) {
    if (lap->rows() != h->val.rows())
        throw ContractError("quadratic_form: row count does not match operator");
    Mat lh = *lap * h->val;
    double v = (h->val.array() * lh.array()).sum();
    Var out = t.make(Mat::Constant(1, 1, v), h->needs_grad);
    if (out->needs_grad) out->back = [out, h, lap] {
        h->accumulate(out->grad(0, 0) * 2.0 * (*lap * h->val));
    };
    return out;
}

inline Var add_scalars(Tape& t, const std::vector<Var>& xs) {
    if (xs.empty()) return scalar_const(t, 0.0);
    Var acc = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) acc = add(t, acc, xs[i]);
    return acc;
}

}  // namespace gda::ad
