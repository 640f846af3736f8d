#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gdahin/nn.hpp"

// Pairwise node-type alignment: one autoencoder per type pair encodes both
// domains' features into a common hidden width, and a per-pair domain
// discriminator behind a gradient reversal layer pulls the two encoded
// distributions together.

namespace gda {

/// Affine encoder to the common hidden width, shape-symmetric affine decoder.
/// One instance serves both domains of its type pair.
struct TypeAutoencoder {
    std::string prefix;  // e.g. "ae.s0" / "ae.p1"
    int input_dim = 0;
    int hidden_dim = 0;
    Activation act = Activation::tanh;
    int first_slot = -1;

    void register_params(ParamStore& p, Rng& rng) const {
        p.add(prefix + ".enc.W", glorot_uniform(rng, input_dim, hidden_dim));
        p.add(prefix + ".enc.b", Mat::Zero(1, hidden_dim));
        p.add(prefix + ".dec.W", glorot_uniform(rng, hidden_dim, input_dim));
        p.add(prefix + ".dec.b", Mat::Zero(1, input_dim));
    }

    void bind(const ParamStore& p) {
        for (size_t i = 0; i < p.entries().size(); ++i)
            if (p.entries()[i].name == prefix + ".enc.W") {
                first_slot = static_cast<int>(i);
                return;
            }
        throw ContractError("autoencoder parameters not registered: " + prefix);
    }

    ad::Var encode(ad::Tape& t, const StepVars& sv, ad::Var x) const {
        if (x->val.cols() != input_dim)
            throw ContractError(prefix + ": encode input dim " +
                                std::to_string(x->val.cols()) + " != " +
                                std::to_string(input_dim));
        ad::Var z = ad::add_rowvec(t, ad::matmul(t, x, slot(sv, 0)), slot(sv, 1));
        return apply_activation(t, z, act);
    }

    ad::Var decode(ad::Tape& t, const StepVars& sv, ad::Var h) const {
        if (h->val.cols() != hidden_dim)
            throw ContractError(prefix + ": decode input dim mismatch");
        return ad::add_rowvec(t, ad::matmul(t, h, slot(sv, 2)), slot(sv, 3));
    }

  private:
    ad::Var slot(const StepVars& sv, int k) const {
        return sv.leaves[static_cast<size_t>(first_slot + k)];
    }
};

using TypeDiscriminator = DiscriminatorNet;

/// Sum over pairs of mean squared reconstruction error; the mean runs over all
/// entries of each pair's stacked matrices.
inline ad::Var recon_loss(ad::Tape& t, const std::vector<std::pair<ad::Var, Mat>>& pairs) {
    std::vector<ad::Var> terms;
    terms.reserve(pairs.size());
    for (const auto& [xhat, x] : pairs) {
        if (xhat->val.rows() != x.rows() || xhat->val.cols() != x.cols())
            throw ContractError("recon_loss: shape mismatch between input and reconstruction");
        terms.push_back(ad::mse(t, xhat, x));
    }
    return ad::add_scalars(t, terms);
}

/// Ex-tape convenience used by tests: MSE summed over (X, X_hat) pairs.
inline double recon_loss_value(const std::vector<std::pair<Mat, Mat>>& pairs) {
    double total = 0;
    for (const auto& [x, xhat] : pairs) {
        if (x.rows() != xhat.rows() || x.cols() != xhat.cols())
            throw ContractError("recon_loss: shape mismatch between input and reconstruction");
        total += (x - xhat).squaredNorm() / static_cast<double>(x.size());
    }
    return total;
}

/// Domain-adversarial loss for one discriminator: encoded source/target pass a
/// gradient reversal layer, then the discriminator's binary cross-entropy with
/// source labeled 0 and target labeled 1 (per-domain means averaged).
/// `reversed = false` skips the reversal node so the loss differentiates as an
/// ordinary function; finite-difference suites need that form.
inline ad::Var adversarial_domain_loss(ad::Tape& t, const StepVars& sv,
                                       const DiscriminatorNet& disc, ad::Var encoded_source,
                                       ad::Var encoded_target, double lambda,
                                       bool reversed = true) {
    if (encoded_source->val.rows() == 0 || encoded_target->val.rows() == 0)
        throw ContractError("adversarial_domain_loss: empty domain batch");
    if (encoded_source->val.cols() != disc.in_dim ||
        encoded_target->val.cols() != disc.in_dim)
        throw ContractError("adversarial_domain_loss: hidden width mismatch");
    ad::Var hs = encoded_source;
    ad::Var ht = encoded_target;
    if (reversed) {
        hs = ad::gradient_reversal(t, hs, lambda);
        ht = ad::gradient_reversal(t, ht, lambda);
    }
    return ad::domain_bce(t, disc.forward(t, sv, hs), disc.forward(t, sv, ht));
}

/// Sum of per-pair adversarial losses, shared pairs plus private pairs.
/// Either list may be empty.
inline ad::Var nda_total(ad::Tape& t, const std::vector<ad::Var>& shared_losses,
                         const std::vector<ad::Var>& private_losses) {
    ad::Var s1 = ad::add_scalars(t, shared_losses);
    ad::Var s2 = ad::add_scalars(t, private_losses);
    return ad::add(t, s1, s2);
}

inline double nda_total_value(const std::vector<double>& shared_losses,
                              const std::vector<double>& private_losses) {
    double s = 0;
    for (double v : shared_losses) s += v;
    for (double v : private_losses) s += v;
    return s;
}

}  // namespace gda
