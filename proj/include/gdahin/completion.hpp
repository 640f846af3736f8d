#pragma once

#include <Eigen/SVD>

#include <vector>

#include "gdahin/autodiff.hpp"
#include "gdahin/laplacian.hpp"
#include "gdahin/nn.hpp"

// Cross-domain block completion for one private type pair. The observed
// features sit on the diagonal of
//     W = [ X_S  0  ]        W_hat = [ X_S_hat  U_S_hat ]
//         [ 0   X_T ]                [ U_T_hat  X_T_hat ]
// and W_hat is recovered by minimizing observed-block MSE plus a nuclear-norm
// penalty. Row order (source private nodes first) matches LaplacianBlock.

namespace gda {

struct CompletionBlock {
    Mat x_source;  // n_s x d_s observed
    Mat x_target;  // n_t x d_t observed
    Mat w_hat;     // (n_s+n_t) x (d_s+d_t) learnable
    double delta = 0.1;

    long n_s() const { return x_source.rows(); }
    long n_t() const { return x_target.rows(); }
    long d_s() const { return x_source.cols(); }
    long d_t() const { return x_target.cols(); }
    long rows() const { return n_s() + n_t(); }
    long cols() const { return d_s() + d_t(); }

    void check_shapes() const {
        if (w_hat.rows() != rows() || w_hat.cols() != cols())
            throw ContractError(strfmt("completion block shape %ldx%ld, expected %ldx%ld",
                                       w_hat.rows(), w_hat.cols(), rows(), cols()));
    }
};

/// Sum of singular values.
inline double nuclear_norm(const Mat& m) {
    if (!all_finite(m)) throw ContractError("nuclear_norm: non-finite entries");
    Eigen::BDCSVD<Mat> svd(m);
    return svd.singularValues().sum();
}

/// Observed blocks copied into W_hat; unobserved blocks start as small
/// Gaussian noise (exact zeros sit on a subgradient saddle).
inline CompletionBlock assemble_block_matrix(const Mat& x_source, const Mat& x_target,
                                             Rng& rng, double delta = 0.1,
                                             double init_std = 0.01) {
    if (x_source.size() == 0 || x_target.size() == 0)
        throw ContractError("assemble_block_matrix: empty observed matrix");
    CompletionBlock b;
    b.x_source = x_source;
    b.x_target = x_target;
    b.delta = delta;
    b.w_hat = Mat::Zero(b.rows(), b.cols());
    b.w_hat.topLeftCorner(b.n_s(), b.d_s()) = x_source;
    b.w_hat.bottomRightCorner(b.n_t(), b.d_t()) = x_target;
    b.w_hat.topRightCorner(b.n_s(), b.d_t()) = gaussian_matrix(
        rng, static_cast<int>(b.n_s()), static_cast<int>(b.d_t()), init_std);
    b.w_hat.bottomLeftCorner(b.n_t(), b.d_s()) = gaussian_matrix(
        rng, static_cast<int>(b.n_t()), static_cast<int>(b.d_s()), init_std);
    b.check_shapes();
    return b;
}

/// The full recovered matrix; rows are per-node features in the common
/// (d_s + d_t)-dimensional space.
inline const Mat& recovered_features(const CompletionBlock& b) {
    b.check_shapes();
    return b.w_hat;
}

/// One pair's completion loss on the tape: pooled MSE over the two observed
/// blocks plus delta times the nuclear norm of the full matrix.
inline ad::Var completion_loss_term(ad::Tape& t, ad::Var w_hat, const CompletionBlock& b) {
    if (b.delta <= 0) throw ConfigError("completion: delta must be > 0");
    if (w_hat->val.rows() != b.rows() || w_hat->val.cols() != b.cols())
        throw ContractError("completion_loss: W_hat shape mismatch");
    ad::Var obs_s = ad::block(t, w_hat, 0, 0, b.n_s(), b.d_s());
    ad::Var obs_t = ad::block(t, w_hat, b.n_s(), b.d_s(), b.n_t(), b.d_t());
    const double n_obs = static_cast<double>(b.x_source.size() + b.x_target.size());
    ad::Var sq = ad::add(t, ad::sum_sq_diff(t, obs_s, b.x_source),
                         ad::sum_sq_diff(t, obs_t, b.x_target));
    ad::Var mse_obs = ad::scale(t, sq, 1.0 / n_obs);
    return ad::add(t, mse_obs, ad::scale(t, ad::nuclear_norm_op(t, w_hat), b.delta));
}

/// Loss summed over private pairs, evaluated at the blocks' current W_hat.
inline double completion_loss(const std::vector<CompletionBlock>& blocks) {
    if (blocks.empty()) throw ContractError("completion_loss: no blocks");
    double total = 0;
    for (const auto& b : blocks) {
        if (b.delta <= 0) throw ConfigError("completion: delta must be > 0");
        b.check_shapes();
        const double n_obs = static_cast<double>(b.x_source.size() + b.x_target.size());
        double sq = (b.w_hat.topLeftCorner(b.n_s(), b.d_s()) - b.x_source).squaredNorm() +
                    (b.w_hat.bottomRightCorner(b.n_t(), b.d_t()) - b.x_target).squaredNorm();
        total += sq / n_obs + b.delta * nuclear_norm(b.w_hat);
    }
    return total;
}

/// tr(H^T L^g H) with L^g = blockdiag(L_source, L_target); non-negative.
inline double laplacian_quadratic(const Mat& h, const LaplacianBlock& lap) {
    if (h.rows() != lap.total_nodes())
        throw ContractError(strfmt("laplacian_quadratic: %ld rows vs %ld private nodes",
                                   h.rows(), lap.total_nodes()));
    const Mat hs = h.topRows(lap.l_source.rows());
    const Mat ht = h.bottomRows(lap.l_target.rows());
    double v = (hs.array() * (lap.l_source * hs).array()).sum() +
               (ht.array() * (lap.l_target * ht).array()).sum();
    return v;
}

inline ad::Var laplacian_quadratic_op(ad::Tape& t, ad::Var h, const LaplacianBlock& lap) {
    if (h->val.rows() != lap.total_nodes())
        throw ContractError(strfmt("laplacian_quadratic: %ld rows vs %ld private nodes",
                                   h->val.rows(), lap.total_nodes()));
    return ad::quadratic_form(t, h, lap.composite());
}

struct CompletionOptimizeOptions {
    int steps = 2000;
    double learning_rate = 0.02;
};

/// Dedicated recovery optimization for a standalone block: Adam on the
/// completion loss over W_hat alone. Returns the per-step loss trace.
inline std::vector<double> optimize_completion(CompletionBlock& b,
                                               const CompletionOptimizeOptions& opts = {}) {
    b.check_shapes();
    ParamStore params;
    params.add("w_hat", b.w_hat);
    Adam adam(opts.learning_rate);
    std::vector<double> trace;
    trace.reserve(static_cast<size_t>(opts.steps));
    for (int s = 0; s < opts.steps; ++s) {
        ad::Tape tape;
        StepVars sv = StepVars::make(tape, params);
        ad::Var loss = completion_loss_term(tape, sv[0], b);
        trace.push_back(loss->scalar());
        if (!std::isfinite(loss->scalar()))
            throw TrainingError(strfmt("completion diverged at step %d", s));
        tape.backward(loss);
        adam.step(params, sv);
    }
    b.w_hat = params.value("w_hat");
    return trace;
}

}  // namespace gda
