#pragma once

#include <algorithm>
#include <chrono>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gdahin/alignment.hpp"
#include "gdahin/completion.hpp"
#include "gdahin/hgt.hpp"
#include "gdahin/laplacian.hpp"
#include "gdahin/tsv.hpp"

// Two-phase training. Phase one trains autoencoders, per-type discriminators,
// the extractor, the topological discriminator, and the classifier on the
// shared types only, then yields target predictions. Phase two warm-starts
// from that state, adds the private-type path (block completion, private
// autoencoders/discriminators, Laplacian smoothing) and confident target
// pseudo-labels, and optimizes the combined objective. The adversarial min/max
// is realized entirely through gradient reversal under a single optimizer.

namespace gda {

enum class Ablation { full, wo_P, wo_T, w_S, no_da };

inline Ablation parse_ablation(const std::string& s) {
    if (s == "full") return Ablation::full;
    if (s == "wo_P") return Ablation::wo_P;
    if (s == "wo_T") return Ablation::wo_T;
    if (s == "w_S") return Ablation::w_S;
    if (s == "no_da") return Ablation::no_da;
    throw ConfigError("unknown ablation: " + s);
}

inline const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::wo_P: return "wo_P";
        case Ablation::wo_T: return "wo_T";
        case Ablation::w_S: return "w_S";
        case Ablation::no_da: return "no_da";
    }
    return "?";
}

struct TrainConfig {
    double alpha = 1.0;
    double beta = 0.1;
    double gamma = 0.1;
    double delta = 0.1;
    double zeta = 0.01;
    double learning_rate = 1e-3;
    int epochs_phase1 = 200;
    int epochs_phase2 = 200;
    double pseudo_threshold = 0.9;     // tau
    double pseudo_max_fraction = 0.3;  // per predicted class
    GrlConfig grl;
    uint64_t seed = 0;
    Ablation ablation = Ablation::full;
    // Architecture overrides.
    int hidden_dim = 64;
    int num_heads = 4;
    int num_layers = 2;
    double dropout = 0.1;
    int disc_hidden = 32;
    int clf_hidden = 32;
    Activation activation = Activation::tanh;
    double completion_init_std = 0.01;
    bool phase2_cold_start = false;

    void validate() const {
        if (pseudo_threshold <= 0 || pseudo_threshold > 1)
            throw ConfigError("pseudo_threshold must be in (0,1]");
        if (pseudo_max_fraction < 0 || pseudo_max_fraction > 1)
            throw ConfigError("pseudo_max_fraction must be in [0,1]");
        for (double v : {alpha, beta, gamma, delta, zeta})
            if (v < 0) throw ConfigError("loss weights must be >= 0");
        if (learning_rate <= 0) throw ConfigError("learning_rate must be > 0");
        if (epochs_phase1 < 0 || epochs_phase2 < 0)
            throw ConfigError("epoch counts must be >= 0");
        if (grl.lambda < 0) throw ConfigError("grl_lambda must be >= 0");
        if (disc_hidden <= 0 || clf_hidden <= 0)
            throw ConfigError("disc_hidden and clf_hidden must be > 0");
        HgtConfig h{num_layers, num_heads, hidden_dim, dropout};
        h.validate();
    }

    std::map<std::string, std::string> to_kv() const {
        std::map<std::string, std::string> kv;
        kv["alpha"] = fmt_double(alpha);
        kv["beta"] = fmt_double(beta);
        kv["gamma"] = fmt_double(gamma);
        kv["delta"] = fmt_double(delta);
        kv["zeta"] = fmt_double(zeta);
        kv["learning_rate"] = fmt_double(learning_rate);
        kv["epochs_phase1"] = std::to_string(epochs_phase1);
        kv["epochs_phase2"] = std::to_string(epochs_phase2);
        kv["pseudo_threshold"] = fmt_double(pseudo_threshold);
        kv["pseudo_max_fraction"] = fmt_double(pseudo_max_fraction);
        kv["grl_lambda"] = fmt_double(grl.lambda);
        kv["grl_schedule"] =
            grl.schedule == GrlConfig::Schedule::constant ? "constant" : "ramp";
        kv["grl_ramp_shape"] = fmt_double(grl.ramp_shape);
        kv["grl_max_step"] = std::to_string(grl.max_step);
        kv["seed"] = std::to_string(seed);
        kv["ablation"] = ablation_name(ablation);
        kv["hidden_dim"] = std::to_string(hidden_dim);
        kv["num_heads"] = std::to_string(num_heads);
        kv["num_layers"] = std::to_string(num_layers);
        kv["dropout"] = fmt_double(dropout);
        kv["disc_hidden"] = std::to_string(disc_hidden);
        kv["clf_hidden"] = std::to_string(clf_hidden);
        kv["activation"] = activation_name(activation);
        kv["completion_init_std"] = fmt_double(completion_init_std);
        kv["phase2_cold_start"] = phase2_cold_start ? "true" : "false";
        return kv;
    }
};

inline TrainConfig parse_train_config(const std::map<std::string, std::string>& kv,
                                      const std::string& origin) {
    TrainConfig c;
    std::map<std::string, std::string> rest = kv;
    auto take = [&](const char* key) -> std::optional<std::string> {
        auto it = rest.find(key);
        if (it == rest.end()) return std::nullopt;
        std::string v = it->second;
        rest.erase(it);
        return v;
    };
    auto as_double = [&](const std::string& v) { return parse_double(v, origin); };
    auto as_int = [&](const std::string& v) { return static_cast<int>(parse_long(v, origin)); };
    if (auto v = take("alpha")) c.alpha = as_double(*v);
    if (auto v = take("beta")) c.beta = as_double(*v);
    if (auto v = take("gamma")) c.gamma = as_double(*v);
    if (auto v = take("delta")) c.delta = as_double(*v);
    if (auto v = take("zeta")) c.zeta = as_double(*v);
    if (auto v = take("learning_rate")) c.learning_rate = as_double(*v);
    if (auto v = take("epochs_phase1")) c.epochs_phase1 = as_int(*v);
    if (auto v = take("epochs_phase2")) c.epochs_phase2 = as_int(*v);
    if (auto v = take("pseudo_threshold")) c.pseudo_threshold = as_double(*v);
    if (auto v = take("pseudo_max_fraction")) c.pseudo_max_fraction = as_double(*v);
    if (auto v = take("grl_lambda")) c.grl.lambda = as_double(*v);
    if (auto v = take("grl_schedule")) {
        if (*v == "constant")
            c.grl.schedule = GrlConfig::Schedule::constant;
        else if (*v == "ramp")
            c.grl.schedule = GrlConfig::Schedule::ramp;
        else
            throw ConfigError(origin + ": grl_schedule must be constant or ramp");
    }
    if (auto v = take("grl_ramp_shape")) c.grl.ramp_shape = as_double(*v);
    if (auto v = take("grl_max_step")) c.grl.max_step = parse_long(*v, origin);
    if (auto v = take("seed")) c.seed = static_cast<uint64_t>(parse_long(*v, origin));
    if (auto v = take("ablation")) c.ablation = parse_ablation(*v);
    if (auto v = take("hidden_dim")) c.hidden_dim = as_int(*v);
    if (auto v = take("num_heads")) c.num_heads = as_int(*v);
    if (auto v = take("num_layers")) c.num_layers = as_int(*v);
    if (auto v = take("dropout")) c.dropout = as_double(*v);
    if (auto v = take("disc_hidden")) c.disc_hidden = as_int(*v);
    if (auto v = take("clf_hidden")) c.clf_hidden = as_int(*v);
    if (auto v = take("activation")) c.activation = parse_activation(*v);
    if (auto v = take("completion_init_std")) c.completion_init_std = as_double(*v);
    if (auto v = take("phase2_cold_start")) {
        if (*v == "true")
            c.phase2_cold_start = true;
        else if (*v == "false")
            c.phase2_cold_start = false;
        else
            throw ConfigError(origin + ": phase2_cold_start must be true or false");
    }
    if (!rest.empty()) throw ConfigError(origin + ": unknown key '" + rest.begin()->first + "'");
    c.validate();
    return c;
}

inline TrainConfig load_train_config(const fs::path& path) {
    return parse_train_config(read_kv_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Loss composition
// ---------------------------------------------------------------------------

struct LossComponents {
    double cls = 0, recon1 = 0, recon2 = 0, nda1 = 0, nda2 = 0, da = 0;
};

/// Phase-one objective: cls + alpha*recon1 + beta*nda1 + gamma*da.
inline double phase1_loss(const LossComponents& c, const TrainConfig& cfg) {
    return c.cls + cfg.alpha * c.recon1 + cfg.beta * c.nda1 + cfg.gamma * c.da;
}

/// Phase-two objective: cls + alpha*(recon1+recon2) + beta*(nda1+nda2) + gamma*da.
inline double phase2_loss(const LossComponents& c, const TrainConfig& cfg) {
    return c.cls + cfg.alpha * (c.recon1 + c.recon2) + cfg.beta * (c.nda1 + c.nda2) +
           cfg.gamma * c.da;
}

/// Cross-entropy over the labeled set plus zeta times the private-node
/// Laplacian smoothness terms.
inline ad::Var classifier_loss(ad::Tape& t, ad::Var logits, const std::vector<int>& labels,
                               const std::vector<std::pair<ad::Var, const LaplacianBlock*>>&
                                   smoothness,
                               double zeta) {
    ad::Var loss = ad::softmax_cross_entropy(t, logits, labels);
    for (const auto& [h, lap] : smoothness)
        loss = ad::add(t, loss, ad::scale(t, laplacian_quadratic_op(t, h, *lap), zeta));
    return loss;
}

// ---------------------------------------------------------------------------
// Pseudo-labels
// ---------------------------------------------------------------------------

struct PseudoLabel {
    int node = 0;
    int cls = 0;
    double confidence = 0;
};

struct PseudoLabelSet {
    std::vector<PseudoLabel> items;  // sorted by node index
    bool empty() const { return items.empty(); }
    size_t size() const { return items.size(); }
};

/// Selects target nodes whose top softmax probability reaches the threshold,
/// keeping at most floor(pseudo_max_fraction * predicted-class size) per
/// class, highest confidence first, ties broken by ascending node index.
inline PseudoLabelSet select_pseudo_labels(const Mat& probs, const TrainConfig& cfg) {
    const long n = probs.rows();
    for (long i = 0; i < n; ++i) {
        if (std::abs(probs.row(i).sum() - 1.0) > 1e-6)
            throw ContractError(strfmt("select_pseudo_labels: row %ld does not sum to 1", i));
    }
    std::vector<std::vector<PseudoLabel>> per_class(static_cast<size_t>(probs.cols()));
    std::vector<int> class_size(static_cast<size_t>(probs.cols()), 0);
    for (long i = 0; i < n; ++i) {
        int best = 0;
        double conf = probs(i, 0);
        for (long j = 1; j < probs.cols(); ++j)
            if (probs(i, j) > conf) {
                conf = probs(i, j);
                best = static_cast<int>(j);
            }
        ++class_size[static_cast<size_t>(best)];
        if (conf >= cfg.pseudo_threshold)
            per_class[static_cast<size_t>(best)].push_back(
                {static_cast<int>(i), best, conf});
    }
    PseudoLabelSet out;
    for (size_t c = 0; c < per_class.size(); ++c) {
        auto& cand = per_class[c];
        std::sort(cand.begin(), cand.end(), [](const PseudoLabel& a, const PseudoLabel& b) {
            if (a.confidence != b.confidence) return a.confidence > b.confidence;
            return a.node < b.node;
        });
        const size_t cap = static_cast<size_t>(
            std::floor(cfg.pseudo_max_fraction * class_size[c]));
        if (cand.size() > cap) cand.resize(cap);
        out.items.insert(out.items.end(), cand.begin(), cand.end());
    }
    std::sort(out.items.begin(), out.items.end(),
              [](const PseudoLabel& a, const PseudoLabel& b) { return a.node < b.node; });
    return out;
}

// ---------------------------------------------------------------------------
// Model state
// ---------------------------------------------------------------------------

/// Structural signature of the data a model was built for; checkpoints refuse
/// to run against a dataset with a different signature.
struct ModelSignature {
    TypeSchema schema;
    std::vector<int> shared_dims;                  // per shared pair
    std::vector<std::pair<int, int>> private_dims;    // (d_s, d_t) per private pair
    std::vector<std::pair<int, int>> private_counts;  // (n_s, n_t) per private pair
    bool include_private = false;

    bool operator==(const ModelSignature& o) const {
        return schema.shared_pairs == o.schema.shared_pairs &&
               schema.private_pairs == o.schema.private_pairs &&
               schema.relation_pairs == o.schema.relation_pairs &&
               schema.target_class_type == o.schema.target_class_type &&
               schema.num_classes == o.schema.num_classes && shared_dims == o.shared_dims &&
               private_dims == o.private_dims && private_counts == o.private_counts &&
               include_private == o.include_private;
    }
};

inline ModelSignature signature_of(const DomainPair& pair, bool include_private) {
    ModelSignature sig;
    sig.schema = pair.schema;
    sig.include_private = include_private;
    for (const auto& [s, t] : pair.schema.shared_pairs)
        sig.shared_dims.push_back(static_cast<int>(pair.source.feature_matrix(s).cols()));
    if (include_private) {
        for (const auto& [s, t] : pair.schema.private_pairs) {
            sig.private_dims.emplace_back(
                static_cast<int>(pair.source.feature_matrix(s).cols()),
                static_cast<int>(pair.target.feature_matrix(t).cols()));
            sig.private_counts.emplace_back(pair.source.node_count(s),
                                            pair.target.node_count(t));
        }
    } else {
        // Relations touching private types stay in the signature; the
        // extractor keeps (unused) tables for them so slot arithmetic is
        // stable across ablations.
        sig.schema.private_pairs.clear();
    }
    return sig;
}

/// All learnable parameters plus the bound module views over them.
struct ModelState {
    TrainConfig cfg;
    ModelSignature sig;
    ParamStore params;

    std::vector<TypeAutoencoder> shared_aes;
    std::vector<TypeDiscriminator> shared_discs;
    std::vector<TypeAutoencoder> private_aes;
    std::vector<TypeDiscriminator> private_discs;
    HgtExtractor extractor;
    TopoDiscriminator topo_disc;
    int clf_first_slot = -1;

    int class_slot() const {
        for (int k = 0; k < sig.schema.k1(); ++k)
            if (sig.schema.shared_pairs[static_cast<size_t>(k)].first ==
                sig.schema.target_class_type)
                return k;
        throw SchemaError("target class type is not a shared pair");
    }
};

namespace detail {

inline void register_classifier(ModelState& st, Rng& rng) {
    st.params.add("clf.W1", glorot_uniform(rng, st.cfg.hidden_dim, st.cfg.clf_hidden));
    st.params.add("clf.b1", Mat::Zero(1, st.cfg.clf_hidden));
    st.params.add("clf.W2", glorot_uniform(rng, st.cfg.clf_hidden, st.sig.schema.num_classes));
    st.params.add("clf.b2", Mat::Zero(1, st.sig.schema.num_classes));
    for (size_t i = 0; i < st.params.entries().size(); ++i)
        if (st.params.entries()[i].name == "clf.W1")
            st.clf_first_slot = static_cast<int>(i);
}

inline ad::Var classifier_forward(ad::Tape& t, const ModelState& st, const StepVars& sv,
                                  ad::Var h) {
    auto slot = [&](int k) {
        return sv.leaves[static_cast<size_t>(st.clf_first_slot + k)];
    };
    ad::Var z = ad::add_rowvec(t, ad::matmul(t, h, slot(0)), slot(1));
    z = apply_activation(t, z, st.cfg.activation);
    return ad::add_rowvec(t, ad::matmul(t, z, slot(2)), slot(3));
}

}  // namespace detail

/// Builds a freshly initialized model for the pair. Private-path parameters
/// (completion matrices, private autoencoders/discriminators) are registered
/// only when `include_private`.
inline ModelState build_model(const DomainPair& pair, const TrainConfig& cfg,
                              bool include_private) {
    cfg.validate();
    if (include_private && pair.schema.k2() > 0 && cfg.delta <= 0)
        throw ConfigError("delta must be > 0 when private pairs exist");
    ModelState st;
    st.cfg = cfg;
    st.sig = signature_of(pair, include_private);
    Rng rng(cfg.seed);

    const int d = cfg.hidden_dim;
    for (int k = 0; k < pair.schema.k1(); ++k) {
        TypeAutoencoder ae;
        ae.prefix = strfmt("ae.s%d", k);
        ae.input_dim = st.sig.shared_dims[static_cast<size_t>(k)];
        ae.hidden_dim = d;
        ae.act = cfg.activation;
        ae.register_params(st.params, rng);
        st.shared_aes.push_back(ae);
    }
    for (int k = 0; k < pair.schema.k1(); ++k) {
        TypeDiscriminator disc;
        disc.prefix = strfmt("disc.s%d", k);
        disc.in_dim = d;
        disc.hidden = cfg.disc_hidden;
        disc.register_params(st.params, rng);
        st.shared_discs.push_back(disc);
    }
    if (include_private) {
        for (int k = 0; k < pair.schema.k2(); ++k) {
            const auto& [sname, tname] = pair.schema.private_pairs[static_cast<size_t>(k)];
            CompletionBlock block =
                assemble_block_matrix(pair.source.feature_matrix(sname),
                                      pair.target.feature_matrix(tname), rng, cfg.delta,
                                      cfg.completion_init_std);
            st.params.add(strfmt("comp.p%d.What", k), block.w_hat);
            TypeAutoencoder ae;
            ae.prefix = strfmt("ae.p%d", k);
            ae.input_dim = static_cast<int>(block.cols());
            ae.hidden_dim = d;
            ae.act = cfg.activation;
            ae.register_params(st.params, rng);
            st.private_aes.push_back(ae);
            TypeDiscriminator disc;
            disc.prefix = strfmt("disc.p%d", k);
            disc.in_dim = d;
            disc.hidden = cfg.disc_hidden;
            disc.register_params(st.params, rng);
            st.private_discs.push_back(disc);
        }
    }
    HgtConfig hcfg{cfg.num_layers, cfg.num_heads, d, cfg.dropout};
    st.extractor = HgtExtractor(hcfg, relation_tables(pair.schema, include_private),
                                num_slots(pair.schema, include_private));
    st.extractor.register_params(st.params, rng);
    st.topo_disc.prefix = "topo";
    st.topo_disc.in_dim = d;
    st.topo_disc.hidden = cfg.disc_hidden;
    st.topo_disc.register_params(st.params, rng);
    detail::register_classifier(st, rng);

    for (auto& ae : st.shared_aes) ae.bind(st.params);
    for (auto& dc : st.shared_discs) dc.bind(st.params);
    for (auto& ae : st.private_aes) ae.bind(st.params);
    for (auto& dc : st.private_discs) dc.bind(st.params);
    st.extractor.bind(st.params);
    st.topo_disc.bind(st.params);
    return st;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct ForwardOptions {
    bool private_path = false;  // completion + private hidden states active
    double lambda = 0.0;        // gradient-reversal schedule coefficient
    bool train_mode = false;    // dropout on
    bool with_losses = true;
    bool grl_reversed = true;   // false: differentiate the objective as a plain
                                // function (finite-difference validation)
    // Standard adversarial scaling: discriminators minimize their own BCE at
    // full strength while the feature path receives the loss-weighted,
    // reversed gradient (weight * lambda). Loss values are unaffected.
    bool dann_scaling = false;
    double beta_eff = 0.0;
    double gamma_eff = 0.0;
    const PseudoLabelSet* pseudo = nullptr;
};

struct ForwardResult {
    LossComponents comps;
    ad::Var cls = nullptr, recon1 = nullptr, recon2 = nullptr;
    ad::Var nda1 = nullptr, nda2 = nullptr, da = nullptr;
    ad::Var source_logits = nullptr;
    ad::Var target_logits = nullptr;
    ad::Var source_class_state = nullptr;  // extractor output of the class type
    ad::Var target_class_state = nullptr;
};

/// Precomputed per-pair context that does not change across steps.
struct TrainContext {
    const DomainPair* pair = nullptr;
    std::vector<LaplacianBlock> laplacians;  // per private pair
    MessageGraph mg_src_shared, mg_tgt_shared;
    MessageGraph mg_src_full, mg_tgt_full;

    static TrainContext make(const DomainPair& pair, bool with_private) {
        TrainContext ctx;
        ctx.pair = &pair;
        ctx.mg_src_shared = build_message_graph(pair.source, pair.schema, false);
        ctx.mg_tgt_shared = build_message_graph(pair.target, pair.schema, false);
        if (with_private && pair.schema.k2() > 0) {
            ctx.mg_src_full = build_message_graph(pair.source, pair.schema, true);
            ctx.mg_tgt_full = build_message_graph(pair.target, pair.schema, true);
            for (int k = 0; k < pair.schema.k2(); ++k)
                ctx.laplacians.push_back(build_private_laplacian(pair, k));
        }
        return ctx;
    }
};

/// Builds the whole computation graph for one step: shared (and optionally
/// private) encoders, discriminator losses behind gradient reversal, the
/// extractor on both domains, and the classifier over source labels plus any
/// pseudo-labels.
inline ForwardResult model_forward(ad::Tape& t, const ModelState& st, const StepVars& sv,
                                   const TrainContext& ctx, const ForwardOptions& opt,
                                   Rng* dropout_rng = nullptr) {
    const DomainPair& pair = *ctx.pair;
    const TypeSchema& sch = pair.schema;
    const bool priv = opt.private_path && sch.k2() > 0;
    ForwardResult res;

    // Shared-type encoders; reconstruction pools both domains' entries.
    std::vector<ad::Var> src_hidden(static_cast<size_t>(num_slots(sch, priv)), nullptr);
    std::vector<ad::Var> tgt_hidden(static_cast<size_t>(num_slots(sch, priv)), nullptr);
    std::vector<std::pair<ad::Var, Mat>> recon_pairs;
    std::vector<ad::Var> nda1_terms, nda2_terms;
    for (int k = 0; k < sch.k1(); ++k) {
        const auto& [sname, tname] = sch.shared_pairs[static_cast<size_t>(k)];
        const Mat& xs = pair.source.feature_matrix(sname);
        const Mat& xt = pair.target.feature_matrix(tname);
        const auto& ae = st.shared_aes[static_cast<size_t>(k)];
        ad::Var vs = ad::constant(t, xs);
        ad::Var vt = ad::constant(t, xt);
        ad::Var hs = ae.encode(t, sv, vs);
        ad::Var ht = ae.encode(t, sv, vt);
        src_hidden[static_cast<size_t>(k)] = hs;
        tgt_hidden[static_cast<size_t>(k)] = ht;
        if (opt.with_losses) {
            ad::Var xhat = ad::vstack(t, {ae.decode(t, sv, hs), ae.decode(t, sv, ht)});
            Mat stacked(xs.rows() + xt.rows(), xs.cols());
            stacked << xs, xt;
            recon_pairs.emplace_back(xhat, std::move(stacked));
            nda1_terms.push_back(adversarial_domain_loss(
                t, sv, st.shared_discs[static_cast<size_t>(k)], hs, ht,
                opt.dann_scaling ? opt.beta_eff * opt.lambda : opt.lambda,
                opt.grl_reversed));
        }
    }

    // Private-type path: completion matrices feed the private encoders; the
    // hidden states feed discriminators, smoothing, and the extractor.
    std::vector<ad::Var> recon2_terms;
    std::vector<std::pair<ad::Var, const LaplacianBlock*>> smoothness;
    if (priv) {
        for (int k = 0; k < sch.k2(); ++k) {
            const auto& [sname, tname] = sch.private_pairs[static_cast<size_t>(k)];
            CompletionBlock block;
            block.x_source = pair.source.feature_matrix(sname);
            block.x_target = pair.target.feature_matrix(tname);
            block.delta = st.cfg.delta;
            ad::Var w_hat = nullptr;
            for (size_t i = 0; i < st.params.entries().size(); ++i)
                if (st.params.entries()[i].name == strfmt("comp.p%d.What", k))
                    w_hat = sv.leaves[i];
            if (!w_hat) throw ContractError("completion parameters missing");
            const auto& ae = st.private_aes[static_cast<size_t>(k)];
            ad::Var h_all = ae.encode(t, sv, w_hat);
            const long n_s = block.x_source.rows();
            const long n_t = block.x_target.rows();
            ad::Var h_src = ad::rows_range(t, h_all, 0, n_s);
            ad::Var h_tgt = ad::rows_range(t, h_all, n_s, n_t);
            src_hidden[static_cast<size_t>(sch.k1() + k)] = h_src;
            tgt_hidden[static_cast<size_t>(sch.k1() + k)] = h_tgt;
            if (opt.with_losses) {
                block.w_hat = w_hat->val;
                block.check_shapes();
                recon2_terms.push_back(completion_loss_term(t, w_hat, block));
                nda2_terms.push_back(adversarial_domain_loss(
                    t, sv, st.private_discs[static_cast<size_t>(k)], h_src, h_tgt,
                    opt.dann_scaling ? opt.beta_eff * opt.lambda : opt.lambda,
                    opt.grl_reversed));
                smoothness.emplace_back(h_all, &ctx.laplacians[static_cast<size_t>(k)]);
            }
        }
    }

    // Topology extraction on both domains (source first for a fixed dropout
    // draw order).
    const MessageGraph& mg_s = priv ? ctx.mg_src_full : ctx.mg_src_shared;
    const MessageGraph& mg_t = priv ? ctx.mg_tgt_full : ctx.mg_tgt_shared;
    Rng* drop = (opt.train_mode && st.cfg.dropout > 0) ? dropout_rng : nullptr;
    std::vector<ad::Var> src_out = st.extractor.extract(t, sv, mg_s, src_hidden, drop);
    std::vector<ad::Var> tgt_out = st.extractor.extract(t, sv, mg_t, tgt_hidden, drop);

    const int cls_slot = st.class_slot();
    ad::Var h_cls_src = src_out[static_cast<size_t>(cls_slot)];
    ad::Var h_cls_tgt = tgt_out[static_cast<size_t>(cls_slot)];
    res.source_class_state = h_cls_src;
    res.target_class_state = h_cls_tgt;
    res.source_logits = detail::classifier_forward(t, st, sv, h_cls_src);
    res.target_logits = detail::classifier_forward(t, st, sv, h_cls_tgt);
    if (!opt.with_losses) return res;

    // Classification over source labels plus selected target pseudo-labels.
    if (!pair.source.labels)
        throw ContractError("model_forward: source labels are required for training");
    std::vector<int> labels = *pair.source.labels;
    ad::Var logits = res.source_logits;
    if (opt.pseudo && !opt.pseudo->empty()) {
        std::vector<int> rows;
        rows.reserve(opt.pseudo->size());
        for (const auto& p : opt.pseudo->items) {
            rows.push_back(p.node);
            labels.push_back(p.cls);
        }
        logits = ad::vstack(t, {logits, ad::gather_rows(t, res.target_logits, rows)});
    }
    res.cls = classifier_loss(t, logits, labels, smoothness, st.cfg.zeta);
    res.recon1 = recon_loss(t, recon_pairs);
    res.recon2 = ad::add_scalars(t, recon2_terms);
    res.nda1 = ad::add_scalars(t, nda1_terms);
    res.nda2 = ad::add_scalars(t, nda2_terms);
    res.da = topo_da_loss(t, sv, st.topo_disc, h_cls_src, h_cls_tgt,
                          opt.dann_scaling ? opt.gamma_eff * opt.lambda : opt.lambda,
                          opt.grl_reversed);

    res.comps.cls = res.cls->scalar();
    res.comps.recon1 = res.recon1->scalar();
    res.comps.recon2 = res.recon2->scalar();
    res.comps.nda1 = res.nda1->scalar();
    res.comps.nda2 = res.nda2->scalar();
    res.comps.da = res.da->scalar();
    return res;
}

/// Weighted total on the tape; its value mirrors phase1_loss/phase2_loss
/// exactly. Under dann_scaling the adversarial terms contribute their
/// weighted value but an unweighted gradient, so discriminators train at
/// full strength regardless of beta/gamma (the feature path already carries
/// the weight through its reversal coefficient).
inline ad::Var weighted_total(ad::Tape& t, const ForwardResult& r, const TrainConfig& cfg,
                              bool dann_scaling = false) {
    auto adversarial = [&](ad::Var x, double w) {
        if (!dann_scaling || w <= 0) return ad::scale(t, x, w);
        return ad::grad_scale(t, ad::scale(t, x, w), 1.0 / w);
    };
    ad::Var total = r.cls;
    total = ad::add(t, total, ad::scale(t, ad::add(t, r.recon1, r.recon2), cfg.alpha));
    total = ad::add(t, total, adversarial(ad::add(t, r.nda1, r.nda2), cfg.beta));
    total = ad::add(t, total, adversarial(r.da, cfg.gamma));
    return total;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRow {
    int epoch = 0;
    int phase = 1;
    LossComponents comps;
    double total = 0;
};

struct RunReport {
    std::vector<EpochRow> rows;
    double accuracy = -1;  // fraction; -1 when target labels are unavailable
    int pseudo_count = 0;
    double wall_seconds = 0;
    uint64_t seed = 0;
    TrainConfig cfg;
    std::vector<std::string> warnings;
};

namespace detail {

/// Per-ablation effective weights and path switches for phase two.
struct PhasePlan {
    TrainConfig eff;       // weights actually applied
    bool private_path = false;
    bool use_pseudo = true;
    std::set<std::string> frozen;
};

inline PhasePlan phase2_plan(const ModelState& st, const TypeSchema& sch) {
    PhasePlan plan;
    plan.eff = st.cfg;
    switch (st.cfg.ablation) {
        case Ablation::full:
            plan.private_path = sch.k2() > 0;
            break;
        case Ablation::wo_P:
            plan.private_path = sch.k2() > 0;
            plan.eff.beta = 0;
            for (int k = 0; k < sch.k2(); ++k) plan.frozen.insert(strfmt("comp.p%d.What", k));
            break;
        case Ablation::wo_T:
            plan.private_path = sch.k2() > 0;
            plan.eff.gamma = 0;
            break;
        case Ablation::w_S:
            plan.private_path = false;
            break;
        case Ablation::no_da:
            plan.private_path = false;
            plan.use_pseudo = false;
            plan.eff.alpha = 0;
            plan.eff.beta = 0;
            plan.eff.gamma = 0;
            break;
    }
    return plan;
}

inline PhasePlan phase1_plan(const ModelState& st) {
    PhasePlan plan;
    plan.eff = st.cfg;
    plan.private_path = false;
    plan.use_pseudo = false;
    if (st.cfg.ablation == Ablation::no_da) {
        plan.eff.alpha = 0;
        plan.eff.beta = 0;
        plan.eff.gamma = 0;
    }
    return plan;
}

inline void run_phase(ModelState& st, const TrainContext& ctx, const PhasePlan& plan,
                      int phase, int epochs, const PseudoLabelSet* pseudo, Rng& train_rng,
                      RunReport& report) {
    Adam adam(st.cfg.learning_rate);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        ForwardOptions opt;
        opt.private_path = plan.private_path;
        opt.lambda = st.cfg.grl.lambda_at(epoch, epochs);
        opt.train_mode = true;
        opt.dann_scaling = true;
        opt.beta_eff = plan.eff.beta;
        opt.gamma_eff = plan.eff.gamma;
        opt.pseudo = (plan.use_pseudo && pseudo) ? pseudo : nullptr;
        ad::Tape tape;
        StepVars sv = StepVars::make(tape, st.params);
        ForwardResult res = model_forward(tape, st, sv, ctx, opt, &train_rng);
        ad::Var total = weighted_total(tape, res, plan.eff, true);
        const double total_v = total->scalar();
        if (!std::isfinite(total_v))
            throw TrainingError(strfmt("training diverged at phase %d epoch %d", phase, epoch));
        EpochRow row;
        row.epoch = epoch;
        row.phase = phase;
        row.comps = res.comps;
        row.total = total_v;
        report.rows.push_back(row);
        tape.backward(total);
        adam.step(st.params, sv, plan.frozen);
    }
}

inline Mat softmax_rows(const Mat& logits) {
    Mat p(logits.rows(), logits.cols());
    for (long i = 0; i < logits.rows(); ++i) {
        double m = logits.row(i).maxCoeff();
        Eigen::RowVectorXd ex = (logits.row(i).array() - m).exp();
        p.row(i) = ex / ex.sum();
    }
    return p;
}

}  // namespace detail

/// Evaluation-mode forward returning target-domain class probabilities.
inline Mat predict_target_probs(const ModelState& st, const TrainContext& ctx,
                                bool private_path) {
    ad::Tape tape;
    StepVars sv = StepVars::make(tape, st.params);
    ForwardOptions opt;
    opt.private_path = private_path;
    opt.with_losses = false;
    ForwardResult res =
        model_forward(tape, st, sv, ctx, opt, nullptr);
    return detail::softmax_rows(res.target_logits->val);
}

struct ClassEmbeddings {
    Mat source;
    Mat target;
};

/// Evaluation-mode extractor outputs of the classification type, per domain.
inline ClassEmbeddings class_type_embeddings(const ModelState& st, const TrainContext& ctx) {
    ad::Tape tape;
    StepVars sv = StepVars::make(tape, st.params);
    ForwardOptions opt;
    opt.private_path = st.sig.include_private;
    opt.with_losses = false;
    ForwardResult res = model_forward(tape, st, sv, ctx, opt, nullptr);
    return {res.source_class_state->val, res.target_class_state->val};
}

/// Trains the shared-type model and returns the state plus target predictions.
inline Mat train_phase1(ModelState& st, const TrainContext& ctx, Rng& train_rng,
                        RunReport& report) {
    detail::PhasePlan plan = detail::phase1_plan(st);
    detail::run_phase(st, ctx, plan, 1, st.cfg.epochs_phase1, nullptr, train_rng, report);
    return predict_target_probs(st, ctx, false);
}

/// Phase two over shared plus private paths, guided by pseudo-labels selected
/// from the phase-one predictions.
inline void train_phase2(ModelState& st, const TrainContext& ctx, const Mat& phase1_probs,
                         Rng& train_rng, RunReport& report) {
    detail::PhasePlan plan = detail::phase2_plan(st, ctx.pair->schema);
    PseudoLabelSet pseudo;
    if (plan.use_pseudo) pseudo = select_pseudo_labels(phase1_probs, st.cfg);
    report.pseudo_count = static_cast<int>(pseudo.size());
    if (st.cfg.phase2_cold_start) {
        ModelState fresh = build_model(*ctx.pair, st.cfg, st.sig.include_private);
        st.params = std::move(fresh.params);
    }
    detail::run_phase(st, ctx, plan, 2, st.cfg.epochs_phase2, &pseudo, train_rng, report);
}

struct EvalResult {
    double accuracy = 0;
    Mat confusion;  // rows: true class, cols: predicted
    std::vector<int> predictions;
};

/// Accuracy over the target class-type nodes; requires held-out labels.
inline EvalResult evaluate(const ModelState& st, const TrainContext& ctx) {
    const DomainPair& pair = *ctx.pair;
    if (!pair.target.labels)
        throw ContractError("evaluate: target labels are unavailable");
    Mat probs = predict_target_probs(st, ctx, st.sig.include_private);
    const auto& labels = *pair.target.labels;
    if (static_cast<long>(labels.size()) != probs.rows())
        throw ContractError("evaluate: label count does not match class-type nodes");
    EvalResult out;
    out.confusion = Mat::Zero(st.sig.schema.num_classes, st.sig.schema.num_classes);
    int correct = 0;
    out.predictions.resize(labels.size());
    for (long i = 0; i < probs.rows(); ++i) {
        int best = 0;
        for (long j = 1; j < probs.cols(); ++j)
            if (probs(i, j) > probs(i, best)) best = static_cast<int>(j);
        out.predictions[static_cast<size_t>(i)] = best;
        out.confusion(labels[static_cast<size_t>(i)], best) += 1;
        if (best == labels[static_cast<size_t>(i)]) ++correct;
    }
    out.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    return out;
}

/// Full two-phase run (or phase one alone); deterministic in (pair, config).
inline std::pair<ModelState, RunReport> run_training(const DomainPair& pair,
                                                     const TrainConfig& cfg,
                                                     int phases = 2) {
    cfg.validate();
    validate_pair(pair);
    const auto t0 = std::chrono::steady_clock::now();
    const bool wants_private = pair.schema.k2() > 0 && cfg.ablation != Ablation::w_S &&
                               cfg.ablation != Ablation::no_da;
    if (wants_private && cfg.delta <= 0)
        throw ConfigError("delta must be > 0 when private pairs exist");

    RunReport report;
    report.cfg = cfg;
    report.seed = cfg.seed;
    ModelState st = build_model(pair, cfg, wants_private);
    TrainContext ctx = TrainContext::make(pair, wants_private);
    for (size_t k = 0; k < ctx.laplacians.size(); ++k) {
        if (ctx.laplacians[k].source_isolated)
            report.warnings.push_back(strfmt(
                "private pair %zu: source type has no incident relations", k));
        if (ctx.laplacians[k].target_isolated)
            report.warnings.push_back(strfmt(
                "private pair %zu: target type has no incident relations", k));
    }

    Rng train_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    Mat probs = train_phase1(st, ctx, train_rng, report);
    if (phases >= 2) train_phase2(st, ctx, probs, train_rng, report);

    if (pair.target.labels) report.accuracy = evaluate(st, ctx).accuracy;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(st), std::move(report)};
}

}  // namespace gda
