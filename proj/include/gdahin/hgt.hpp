#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gdahin/alignment.hpp"
#include "gdahin/graph.hpp"
#include "gdahin/nn.hpp"

// Type-aware multi-head attention extractor. Each relation contributes two
// directed message channels (forward and reverse), every channel has its own
// key/query/value projections plus a scalar priority, attention is normalized
// per destination node over its whole typed in-neighborhood, and the
// aggregated message passes a per-type output projection with a residual
// connection. Parameters are keyed by schema pair indices, so one table entry
// serves both domains of a pair.

namespace gda {

struct HgtConfig {
    int num_layers = 2;
    int num_heads = 4;
    int hidden_dim = 64;
    double dropout = 0.1;

    void validate() const {
        if (num_layers < 0) throw ConfigError("hgt: num_layers must be >= 0");
        if (num_heads <= 0 || hidden_dim <= 0)
            throw ConfigError("hgt: heads and hidden_dim must be positive");
        if (hidden_dim % num_heads != 0)
            throw ConfigError("hgt: hidden_dim must be divisible by num_heads");
        if (dropout < 0 || dropout >= 1) throw ConfigError("hgt: dropout must be in [0,1)");
    }
};

/// Per-type extractor outputs for one domain, indexed by type-pair slot
/// (shared pairs first, then private pairs).
struct NodeEmbeddings {
    Domain domain_tag = Domain::source;
    std::vector<Mat> by_slot;
};

/// One directed message channel of one domain's graph.
struct MessageChannel {
    int rel_pair = 0;  // schema relation-pair index
    bool reverse = false;
    int src_slot = 0;
    int dst_slot = 0;
    std::vector<int> edge_src;
    std::vector<int> edge_dst;
};

struct MessageGraph {
    Domain domain_tag = Domain::source;
    std::vector<int> slot_counts;
    std::vector<MessageChannel> channels;
};

/// Slot layout shared by both domains: shared pair k1 -> slot k1, private pair
/// k2 -> slot K1 + k2.
inline int num_slots(const TypeSchema& sch, bool include_private) {
    return sch.k1() + (include_private ? sch.k2() : 0);
}

inline std::map<std::string, int> slot_of_type(const TypeSchema& sch, bool source_side,
                                               bool include_private) {
    std::map<std::string, int> m;
    for (int k = 0; k < sch.k1(); ++k)
        m[source_side ? sch.shared_pairs[k].first : sch.shared_pairs[k].second] = k;
    if (include_private)
        for (int k = 0; k < sch.k2(); ++k)
            m[source_side ? sch.private_pairs[k].first : sch.private_pairs[k].second] =
                sch.k1() + k;
    return m;
}

/// Expands one domain's relations into forward+reverse channels over slots.
/// Relations touching a private type are dropped when include_private is off.
inline MessageGraph build_message_graph(const HeteroGraph& g, const TypeSchema& sch,
                                        bool include_private) {
    const bool source_side = g.domain_tag == Domain::source;
    auto slots = slot_of_type(sch, source_side, include_private);
    MessageGraph mg;
    mg.domain_tag = g.domain_tag;
    mg.slot_counts.assign(static_cast<size_t>(num_slots(sch, include_private)), 0);
    for (const auto& [name, slot] : slots)
        mg.slot_counts[static_cast<size_t>(slot)] = g.node_count(name);

    for (size_t rp = 0; rp < sch.relation_pairs.size(); ++rp) {
        const std::string& rel_name =
            source_side ? sch.relation_pairs[rp].first : sch.relation_pairs[rp].second;
        auto it = g.relation_index.find(rel_name);
        if (it == g.relation_index.end()) continue;  // relation not in this view
        const auto& rel = g.relations[static_cast<size_t>(it->second)];
        auto s_it = slots.find(rel.src_type);
        auto d_it = slots.find(rel.dst_type);
        if (s_it == slots.end() || d_it == slots.end()) continue;  // private endpoint excluded
        MessageChannel fwd;
        fwd.rel_pair = static_cast<int>(rp);
        fwd.reverse = false;
        fwd.src_slot = s_it->second;
        fwd.dst_slot = d_it->second;
        MessageChannel rev;
        rev.rel_pair = static_cast<int>(rp);
        rev.reverse = true;
        rev.src_slot = d_it->second;
        rev.dst_slot = s_it->second;
        fwd.edge_src.reserve(rel.edges.size());
        for (const auto& [s, d] : rel.edges) {
            fwd.edge_src.push_back(s);
            fwd.edge_dst.push_back(d);
            rev.edge_src.push_back(d);
            rev.edge_dst.push_back(s);
        }
        mg.channels.push_back(std::move(fwd));
        mg.channels.push_back(std::move(rev));
    }
    return mg;
}

/// Per-slot, per-head attention weights grouped by destination node; used by
/// tests and diagnostics.
struct AttentionDebug {
    struct SlotHead {
        int slot = 0;
        int head = 0;
        std::vector<int> dst;  // destination node per weight
        Vec weights;
    };
    std::vector<SlotHead> entries;
};

/// Relation-pair index -> parameter-table index. Relations with a private
/// endpoint get no table in a shared-only model; table numbering is dense so
/// a shared-only model and a restricted pair register identical parameters.
inline std::vector<int> relation_tables(const TypeSchema& sch, bool include_private) {
    std::set<std::string> shared_src;
    for (const auto& p : sch.shared_pairs) shared_src.insert(p.first);
    std::vector<int> table(sch.relation_pairs.size(), -1);
    int next = 0;
    for (size_t i = 0; i < sch.relation_pairs.size(); ++i) {
        auto [a, b] = detail::relation_endpoints(sch.relation_pairs[i].first);
        if (include_private || (shared_src.count(a) && shared_src.count(b)))
            table[i] = next++;
    }
    return table;
}

class HgtExtractor {
  public:
    HgtExtractor() = default;
    HgtExtractor(HgtConfig cfg, std::vector<int> table_of_rel, int num_type_slots)
        : cfg_(cfg), table_of_rel_(std::move(table_of_rel)), n_slots_(num_type_slots) {
        cfg_.validate();
        for (int t : table_of_rel_) n_tables_ = std::max(n_tables_, t + 1);
    }

    const HgtConfig& config() const { return cfg_; }

    void register_params(ParamStore& p, Rng& rng) const {
        const int d = cfg_.hidden_dim;
        for (int l = 0; l < cfg_.num_layers; ++l) {
            for (int r = 0; r < n_tables_; ++r) {
                for (const char* dir : {"fwd", "rev"}) {
                    const std::string base = strfmt("hgt.l%d.r%d.%s.", l, r, dir);
                    p.add(base + "Wk", glorot_uniform(rng, d, d));
                    p.add(base + "Wq", glorot_uniform(rng, d, d));
                    p.add(base + "Wv", glorot_uniform(rng, d, d));
                    p.add(base + "mu", Mat::Ones(1, 1));
                }
            }
            for (int s = 0; s < n_slots_; ++s)
                p.add(strfmt("hgt.l%d.t%d.Wout", l, s), glorot_uniform(rng, d, d));
        }
    }

    void bind(const ParamStore& p) {
        if (cfg_.num_layers == 0) {
            first_slot_ = 0;
            return;
        }
        const std::string first = n_tables_ > 0 ? "hgt.l0.r0.fwd.Wk" : "hgt.l0.t0.Wout";
        for (size_t i = 0; i < p.entries().size(); ++i) {
            if (p.entries()[i].name == first) {
                first_slot_ = static_cast<int>(i);
                return;
            }
        }
        throw ContractError("extractor parameters not registered");
    }

    /// One attention layer over one domain's channels. Rows without any
    /// incoming message keep their input unchanged.
    std::vector<ad::Var> layer_forward(ad::Tape& t, const StepVars& sv, const MessageGraph& mg,
                                       const std::vector<ad::Var>& inputs, int layer,
                                       Rng* dropout_rng = nullptr,
                                       AttentionDebug* debug = nullptr) const {
        if (layer < 0 || layer >= cfg_.num_layers)
            throw ContractError("hgt layer index out of range");
        if (inputs.size() != mg.slot_counts.size())
            throw ContractError("hgt: inputs must cover every type slot");
        for (size_t s = 0; s < inputs.size(); ++s)
            if (inputs[s]->val.cols() != cfg_.hidden_dim)
                throw ContractError("hgt: input width must equal hidden_dim");
        const int d = cfg_.hidden_dim;
        const int heads = cfg_.num_heads;
        const int dk = d / heads;

        std::vector<ad::Var> out(inputs.size());
        for (int s = 0; s < static_cast<int>(inputs.size()); ++s) {
            std::vector<const MessageChannel*> incoming;
            for (const auto& c : mg.channels) {
                if (c.rel_pair < 0 ||
                    c.rel_pair >= static_cast<int>(table_of_rel_.size()) ||
                    table_of_rel_[static_cast<size_t>(c.rel_pair)] < 0)
                    throw ConfigError("hgt: relation not covered by parameter tables");
                if (c.dst_slot == s && !c.edge_src.empty()) incoming.push_back(&c);
            }
            if (incoming.empty()) {
                out[static_cast<size_t>(s)] = inputs[static_cast<size_t>(s)];
                continue;
            }
            std::vector<ad::Var> k_parts, q_parts, v_parts;
            std::vector<int> seg;
            for (const MessageChannel* c : incoming) {
                ad::Var xs = ad::gather_rows(t, inputs[static_cast<size_t>(c->src_slot)],
                                             c->edge_src);
                ad::Var xd = ad::gather_rows(t, inputs[static_cast<size_t>(c->dst_slot)],
                                             c->edge_dst);
                // The channel priority scales keys, hence attention logits.
                ad::Var k = ad::scale_by(t, ad::matmul(t, xs, rel_var(sv, layer, *c, 0)),
                                         rel_var(sv, layer, *c, 3));
                k_parts.push_back(k);
                q_parts.push_back(ad::matmul(t, xd, rel_var(sv, layer, *c, 1)));
                v_parts.push_back(ad::matmul(t, xs, rel_var(sv, layer, *c, 2)));
                seg.insert(seg.end(), c->edge_dst.begin(), c->edge_dst.end());
            }
            ad::Var k_all = ad::vstack(t, k_parts);
            ad::Var q_all = ad::vstack(t, q_parts);
            ad::Var v_all = ad::vstack(t, v_parts);
            const int n_dst = mg.slot_counts[static_cast<size_t>(s)];
            std::vector<ad::Var> head_aggs;
            for (int h = 0; h < heads; ++h) {
                ad::Var kh = ad::cols_block(t, k_all, static_cast<long>(h) * dk, dk);
                ad::Var qh = ad::cols_block(t, q_all, static_cast<long>(h) * dk, dk);
                ad::Var scores =
                    ad::scale(t, ad::rowwise_dot(t, kh, qh), 1.0 / std::sqrt(double(dk)));
                ad::Var attn = ad::segment_softmax(t, scores, seg, n_dst);
                if (debug) {
                    AttentionDebug::SlotHead e;
                    e.slot = s;
                    e.head = h;
                    e.dst = seg;
                    e.weights = attn->val.col(0);
                    debug->entries.push_back(std::move(e));
                }
                ad::Var vh = ad::cols_block(t, v_all, static_cast<long>(h) * dk, dk);
                head_aggs.push_back(
                    ad::segment_sum(t, ad::mul_colvec(t, vh, attn), seg, n_dst));
            }
            ad::Var agg = ad::hstack(t, head_aggs);
            ad::Var act = ad::tanh_op(t, agg);
            if (dropout_rng && cfg_.dropout > 0) {
                std::bernoulli_distribution keep(1.0 - cfg_.dropout);
                Mat mask(act->val.rows(), act->val.cols());
                for (long i = 0; i < mask.rows(); ++i)
                    for (long j = 0; j < mask.cols(); ++j)
                        mask(i, j) = keep(*dropout_rng) ? 1.0 / (1.0 - cfg_.dropout) : 0.0;
                act = ad::cwise_mul_const(t, act, std::move(mask));
            }
            ad::Var msg = ad::matmul(t, act, out_var(sv, layer, s));
            out[static_cast<size_t>(s)] = ad::add(t, inputs[static_cast<size_t>(s)], msg);
        }
        return out;
    }

    /// Stacks num_layers attention passes; with zero layers the inputs pass
    /// through untouched, and each extra layer widens the receptive field by
    /// one hop.
    std::vector<ad::Var> extract(ad::Tape& t, const StepVars& sv, const MessageGraph& mg,
                                 std::vector<ad::Var> inputs, Rng* dropout_rng = nullptr,
                                 AttentionDebug* debug = nullptr) const {
        for (int l = 0; l < cfg_.num_layers; ++l)
            inputs = layer_forward(t, sv, mg, inputs, l, dropout_rng, debug);
        return inputs;
    }

  private:
    // Parameter slot arithmetic mirrors register_params' order:
    // per layer: n_tables * 2 directions * 4 tensors, then n_slots Wout tables.
    int layer_stride() const { return n_tables_ * 8 + n_slots_; }
    ad::Var rel_var(const StepVars& sv, int layer, const MessageChannel& c, int k) const {
        const int table = table_of_rel_[static_cast<size_t>(c.rel_pair)];
        int base = first_slot_ + layer * layer_stride() + table * 8 + (c.reverse ? 4 : 0) + k;
        return sv.leaves[static_cast<size_t>(base)];
    }
    ad::Var out_var(const StepVars& sv, int layer, int slot) const {
        int base = first_slot_ + layer * layer_stride() + n_tables_ * 8 + slot;
        return sv.leaves[static_cast<size_t>(base)];
    }

    HgtConfig cfg_;
    std::vector<int> table_of_rel_;
    int n_tables_ = 0;
    int n_slots_ = 0;
    int first_slot_ = -1;
};

using TopoDiscriminator = DiscriminatorNet;

/// Adversarial alignment of extractor outputs across domains; the extractor
/// path gradient is reversed, the discriminator minimizes its own BCE.
inline ad::Var topo_da_loss(ad::Tape& t, const StepVars& sv, const TopoDiscriminator& disc,
                            ad::Var h_source, ad::Var h_target, double lambda,
                            bool reversed = true) {
    return adversarial_domain_loss(t, sv, disc, h_source, h_target, lambda, reversed);
}

}  // namespace gda
