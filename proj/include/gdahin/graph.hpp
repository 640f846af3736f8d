#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gdahin/common.hpp"
#include "gdahin/errors.hpp"

namespace gda {

/// One domain's typed multigraph. Node indices are dense, 0-based, local to
/// each type; a global id is the pair (type name, local index).
struct HeteroGraph {
    struct Relation {
        std::string name;  // "<src_type>-<dst_type>"
        std::string src_type;
        std::string dst_type;
        std::vector<std::pair<int, int>> edges;
    };

    Domain domain_tag = Domain::source;
    std::vector<std::string> type_names;
    std::map<std::string, int> type_index;
    std::vector<Mat> features;  // parallel to type_names
    std::vector<Relation> relations;
    std::map<std::string, int> relation_index;
    // Labels over the schema's class-carrying type; full on the source graph,
    // held out (present for evaluation only) or absent on the target graph.
    std::optional<std::vector<int>> labels;

    int add_type(const std::string& name, Mat feats) {
        if (type_index.count(name)) throw SchemaError("duplicate node type: " + name);
        if (name.find('-') != std::string::npos)
            throw SchemaError("node type names must not contain '-': " + name);
        type_index[name] = static_cast<int>(type_names.size());
        type_names.push_back(name);
        features.push_back(std::move(feats));
        return static_cast<int>(type_names.size()) - 1;
    }

    void add_relation(const std::string& name, std::vector<std::pair<int, int>> edges) {
        if (relation_index.count(name)) throw SchemaError("duplicate relation: " + name);
        auto dash = name.find('-');
        if (dash == std::string::npos || name.find('-', dash + 1) != std::string::npos)
            throw SchemaError("relation name must be '<src_type>-<dst_type>': " + name);
        Relation r;
        r.name = name;
        r.src_type = name.substr(0, dash);
        r.dst_type = name.substr(dash + 1);
        r.edges = std::move(edges);
        relation_index[name] = static_cast<int>(relations.size());
        relations.push_back(std::move(r));
    }

    bool has_type(const std::string& name) const { return type_index.count(name) > 0; }

    int node_count(const std::string& type) const {
        auto it = type_index.find(type);
        if (it == type_index.end()) throw SchemaError("unknown node type: " + type);
        return static_cast<int>(features[it->second].rows());
    }

    const Mat& feature_matrix(const std::string& type) const {
        auto it = type_index.find(type);
        if (it == type_index.end()) throw SchemaError("unknown node type: " + type);
        return features[it->second];
    }

    std::map<std::string, int> node_counts() const {
        std::map<std::string, int> out;
        for (size_t i = 0; i < type_names.size(); ++i)
            out[type_names[i]] = static_cast<int>(features[i].rows());
        return out;
    }

    void validate() const {
        for (const auto& r : relations) {
            if (!has_type(r.src_type) || !has_type(r.dst_type))
                throw SchemaError("relation " + r.name + " endpoint type not in graph");
            const int ns = node_count(r.src_type);
            const int nd = node_count(r.dst_type);
            for (const auto& [s, d] : r.edges) {
                if (s < 0 || s >= ns || d < 0 || d >= nd)
                    throw ValidationError(strfmt(
                        "relation %s: edge (%d,%d) out of range (%d x %d nodes)",
                        r.name.c_str(), s, d, ns, nd));
            }
        }
    }

    bool operator==(const HeteroGraph& o) const {
        if (domain_tag != o.domain_tag || type_names != o.type_names) return false;
        for (size_t i = 0; i < features.size(); ++i)
            if (features[i].rows() != o.features[i].rows() ||
                features[i].cols() != o.features[i].cols() || features[i] != o.features[i])
                return false;
        if (relations.size() != o.relations.size()) return false;
        for (size_t i = 0; i < relations.size(); ++i)
            if (relations[i].name != o.relations[i].name ||
                relations[i].edges != o.relations[i].edges)
                return false;
        return labels == o.labels;
    }
};

/// Pairing of node types and relations across the two domains.
struct TypeSchema {
    std::vector<std::pair<std::string, std::string>> shared_pairs;   // K1 entries
    std::vector<std::pair<std::string, std::string>> private_pairs;  // K2 entries
    std::vector<std::pair<std::string, std::string>> relation_pairs;
    std::string target_class_type;  // source-side name of a shared pair
    int num_classes = 0;

    int k1() const { return static_cast<int>(shared_pairs.size()); }
    int k2() const { return static_cast<int>(private_pairs.size()); }

    bool is_shared_source_type(const std::string& t) const {
        return std::any_of(shared_pairs.begin(), shared_pairs.end(),
                           [&](const auto& p) { return p.first == t; });
    }

    /// Maps a source-side shared type name to the paired target-side name.
    const std::string& target_name_of_shared(const std::string& src_name) const {
        for (const auto& p : shared_pairs)
            if (p.first == src_name) return p.second;
        throw SchemaError("not a shared source type: " + src_name);
    }
};

/// A source/target graph pair plus the schema that pairs their types.
struct DomainPair {
    HeteroGraph source;
    HeteroGraph target;
    TypeSchema schema;

    bool operator==(const DomainPair& o) const {
        return source == o.source && target == o.target &&
               schema.shared_pairs == o.schema.shared_pairs &&
               schema.private_pairs == o.schema.private_pairs &&
               schema.relation_pairs == o.schema.relation_pairs &&
               schema.target_class_type == o.schema.target_class_type &&
               schema.num_classes == o.schema.num_classes;
    }
};

namespace detail {

inline std::pair<std::string, std::string> relation_endpoints(const std::string& rel) {
    auto dash = rel.find('-');
    if (dash == std::string::npos || rel.find('-', dash + 1) != std::string::npos)
        throw SchemaError("relation name must be '<src_type>-<dst_type>': " + rel);
    return {rel.substr(0, dash), rel.substr(dash + 1)};
}

}  // namespace detail

/// Full invariant check for a pair; throws SchemaError / ValidationError.
inline void validate_pair(const DomainPair& pair) {
    const auto& sch = pair.schema;
    if (pair.source.domain_tag != Domain::source || pair.target.domain_tag != Domain::target)
        throw SchemaError("domain tags must be source/target");
    if (sch.k1() < 1) throw SchemaError("at least one shared type pair is required");
    if (sch.num_classes < 2) throw SchemaError("num_classes must be >= 2");

    // Each type appears in exactly one pair per domain, and resolves in its graph.
    std::set<std::string> src_seen, tgt_seen;
    auto check_pair = [&](const std::pair<std::string, std::string>& p, bool shared) {
        if (!pair.source.has_type(p.first))
            throw SchemaError("schema type not in source graph: " + p.first);
        if (!pair.target.has_type(p.second))
            throw SchemaError("schema type not in target graph: " + p.second);
        if (!src_seen.insert(p.first).second)
            throw SchemaError("source type paired twice: " + p.first);
        if (!tgt_seen.insert(p.second).second)
            throw SchemaError("target type paired twice: " + p.second);
        if (shared) {
            // One autoencoder serves both domains, so raw dims must agree.
            if (pair.source.feature_matrix(p.first).cols() !=
                pair.target.feature_matrix(p.second).cols())
                throw SchemaError("shared pair (" + p.first + "," + p.second +
                                  ") has mismatched feature dimensions");
        }
    };
    for (const auto& p : sch.shared_pairs) check_pair(p, true);
    for (const auto& p : sch.private_pairs) check_pair(p, false);
    for (const auto& t : pair.source.type_names)
        if (!src_seen.count(t)) throw SchemaError("source type not paired: " + t);
    for (const auto& t : pair.target.type_names)
        if (!tgt_seen.count(t)) throw SchemaError("target type not paired: " + t);

    // Relation pairs: endpoints of the two names must be consistently paired.
    auto paired_target_of = [&](const std::string& s) -> std::string {
        for (const auto& p : sch.shared_pairs)
            if (p.first == s) return p.second;
        for (const auto& p : sch.private_pairs)
            if (p.first == s) return p.second;
        throw SchemaError("type not paired: " + s);
    };
    std::set<std::string> src_rels_in_schema, tgt_rels_in_schema;
    for (const auto& [rs, rt] : sch.relation_pairs) {
        auto [ss, sd] = detail::relation_endpoints(rs);
        auto [ts, td] = detail::relation_endpoints(rt);
        if (paired_target_of(ss) != ts || paired_target_of(sd) != td)
            throw SchemaError("relation pair (" + rs + "," + rt +
                              ") endpoints are not consistently paired");
        if (pair.source.relation_index.count(rs) == 0)
            throw SchemaError("schema relation not in source graph: " + rs);
        if (pair.target.relation_index.count(rt) == 0)
            throw SchemaError("schema relation not in target graph: " + rt);
        src_rels_in_schema.insert(rs);
        tgt_rels_in_schema.insert(rt);
    }
    for (const auto& r : pair.source.relations)
        if (!src_rels_in_schema.count(r.name))
            throw SchemaError("source relation not in schema: " + r.name);
    for (const auto& r : pair.target.relations)
        if (!tgt_rels_in_schema.count(r.name))
            throw SchemaError("target relation not in schema: " + r.name);

    if (!sch.is_shared_source_type(sch.target_class_type))
        throw SchemaError("target_class_type must be the source-side name of a shared pair: " +
                          sch.target_class_type);

    pair.source.validate();
    pair.target.validate();

    // Fully-labeled source; target labels optional (evaluation only).
    const std::string& cls_src = sch.target_class_type;
    const std::string& cls_tgt = sch.target_name_of_shared(cls_src);
    if (!pair.source.labels.has_value())
        throw ValidationError("source graph must carry labels on type " + cls_src);
    auto check_labels = [&](const HeteroGraph& g, const std::string& type) {
        if (!g.labels) return;
        if (static_cast<int>(g.labels->size()) != g.node_count(type))
            throw ValidationError(std::string(domain_name(g.domain_tag)) +
                                  " labels must cover every node of type " + type);
        for (int y : *g.labels)
            if (y < 0 || y >= sch.num_classes)
                throw ValidationError(strfmt("label id %d out of range [0,%d)", y,
                                             sch.num_classes));
    };
    check_labels(pair.source, cls_src);
    check_labels(pair.target, cls_tgt);
}

/// Keeps only shared-pair types and relations whose both endpoints are shared.
/// Idempotent; the result carries no private pairs.
inline DomainPair restrict_to_shared(const DomainPair& pair) {
    DomainPair out;
    out.schema.shared_pairs = pair.schema.shared_pairs;
    out.schema.target_class_type = pair.schema.target_class_type;
    out.schema.num_classes = pair.schema.num_classes;

    auto shared_side = [&](bool source_side) {
        std::set<std::string> keep;
        for (const auto& p : pair.schema.shared_pairs)
            keep.insert(source_side ? p.first : p.second);
        return keep;
    };
    const auto src_keep = shared_side(true);
    const auto tgt_keep = shared_side(false);

    for (const auto& [rs, rt] : pair.schema.relation_pairs) {
        auto [ss, sd] = detail::relation_endpoints(rs);
        if (src_keep.count(ss) && src_keep.count(sd))
            out.schema.relation_pairs.emplace_back(rs, rt);
    }

    auto restrict_graph = [&](const HeteroGraph& g, const std::set<std::string>& keep,
                              bool source_side) {
        HeteroGraph r;
        r.domain_tag = g.domain_tag;
        for (const auto& t : g.type_names)
            if (keep.count(t)) r.add_type(t, g.feature_matrix(t));
        for (const auto& [rs, rt] : out.schema.relation_pairs) {
            const std::string& name = source_side ? rs : rt;
            auto it = g.relation_index.find(name);
            if (it != g.relation_index.end())
                r.add_relation(name, g.relations[it->second].edges);
        }
        r.labels = g.labels;
        return r;
    };
    out.source = restrict_graph(pair.source, src_keep, true);
    out.target = restrict_graph(pair.target, tgt_keep, false);
    return out;
}

}  // namespace gda
