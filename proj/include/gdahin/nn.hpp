#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "gdahin/autodiff.hpp"
#include "gdahin/common.hpp"

namespace gda {

enum class Activation { tanh, relu, identity };

inline Activation parse_activation(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    if (s == "identity") return Activation::identity;
    throw ConfigError("unknown activation: " + s);
}

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
        case Activation::identity: return "identity";
    }
    return "?";
}

inline ad::Var apply_activation(ad::Tape& t, ad::Var x, Activation a) {
    switch (a) {
        case Activation::tanh: return ad::tanh_op(t, x);
        case Activation::relu: return ad::relu(t, x);
        case Activation::identity: return x;
    }
    return x;
}

/// Named, ordered registry of learnable tensors plus Adam moments.
/// Registration order is deterministic and defines the serialization order.
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Mat value;
        Mat m;  // Adam first moment
        Mat v;  // Adam second moment
    };

    int add(const std::string& name, Mat init) {
        if (index_.count(name)) throw ContractError("parameter registered twice: " + name);
        Entry e;
        e.name = name;
        e.m = Mat::Zero(init.rows(), init.cols());
        e.v = Mat::Zero(init.rows(), init.cols());
        e.value = std::move(init);
        index_[name] = static_cast<int>(entries_.size());
        entries_.push_back(std::move(e));
        return static_cast<int>(entries_.size()) - 1;
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    Mat& value(const std::string& name) { return entries_[checked(name)].value; }
    const Mat& value(const std::string& name) const { return entries_[checked(name)].value; }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }

  private:
    size_t checked(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return static_cast<size_t>(it->second);
    }
    std::vector<Entry> entries_;
    std::map<std::string, int> index_;
};

/// Leaf nodes for every parameter of one forward pass, in registry order.
struct StepVars {
    std::vector<ad::Var> leaves;

    static StepVars make(ad::Tape& tape, const ParamStore& params) {
        StepVars sv;
        sv.leaves.reserve(params.size());
        for (const auto& e : params.entries()) sv.leaves.push_back(ad::leaf(tape, e.value));
        return sv;
    }
    ad::Var operator[](size_t i) const { return leaves[i]; }
};

class Adam {
  public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    /// Applies one update from the gradients accumulated on the step leaves.
    /// Parameters named in `frozen` keep their values and moments.
    void step(ParamStore& params, const StepVars& sv, const std::set<std::string>& frozen = {}) {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, t_);
        const double c2 = 1.0 - std::pow(b2_, t_);
        auto& es = params.entries();
        for (size_t i = 0; i < es.size(); ++i) {
            if (frozen.count(es[i].name)) continue;
            ad::Var leaf = sv.leaves[i];
            if (!leaf->has_grad()) continue;
            const Mat& g = leaf->grad;
            es[i].m = b1_ * es[i].m + (1.0 - b1_) * g;
            es[i].v = b2_ * es[i].v + (1.0 - b2_) * g.cwiseProduct(g);
            es[i].value.array() -=
                lr_ * (es[i].m.array() / c1) /
                ((es[i].v.array() / c2).sqrt() + eps_);
        }
    }

    long steps_taken() const { return t_; }

  private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
};

/// Reversal coefficient schedule: constant, or the usual warm-up ramp
/// lambda * (2 / (1 + exp(-shape * p)) - 1) over training progress p in [0,1].
struct GrlConfig {
    enum class Schedule { constant, ramp };
    double lambda = 1.0;
    Schedule schedule = Schedule::ramp;
    double ramp_shape = 10.0;
    long max_step = 0;  // 0: use the running phase's epoch count

    double lambda_at(long step, long phase_steps) const {
        if (lambda < 0) throw ConfigError("grl lambda must be >= 0");
        if (schedule == Schedule::constant) return lambda;
        const long horizon = max_step > 0 ? max_step : phase_steps;
        double p = horizon > 0 ? std::min(1.0, static_cast<double>(step) / horizon) : 1.0;
        return lambda * (2.0 / (1.0 + std::exp(-ramp_shape * p)) - 1.0);
    }
};

/// Small feed-forward net with logistic output in (0,1); shared shape for the
/// per-type and topological domain discriminators.
struct DiscriminatorNet {
    std::string prefix;
    int in_dim = 0;
    int hidden = 32;

    void register_params(ParamStore& p, Rng& rng) const {
        p.add(prefix + ".W1", glorot_uniform(rng, in_dim, hidden));
        p.add(prefix + ".b1", Mat::Zero(1, hidden));
        p.add(prefix + ".W2", glorot_uniform(rng, hidden, 1));
        p.add(prefix + ".b2", Mat::Zero(1, 1));
    }

    ad::Var forward(ad::Tape& t, const StepVars& sv, ad::Var x) const {
        ad::Var h = ad::add_rowvec(t, ad::matmul(t, x, var(sv, 0)), var(sv, 1));
        h = ad::tanh_op(t, h);
        ad::Var z = ad::add_rowvec(t, ad::matmul(t, h, var(sv, 2)), var(sv, 3));
        return ad::sigmoid(t, z);
    }

    // Slot bookkeeping: the four parameters are registered contiguously.
    int first_slot = -1;
    void bind(const ParamStore& p) {
        for (size_t i = 0; i < p.entries().size(); ++i)
            if (p.entries()[i].name == prefix + ".W1") {
                first_slot = static_cast<int>(i);
                return;
            }
        throw ContractError("discriminator parameters not registered: " + prefix);
    }
    ad::Var var(const StepVars& sv, int k) const {
        return sv.leaves[static_cast<size_t>(first_slot + k)];
    }
};

}  // namespace gda
