#pragma once

#include <map>
#include <memory>
#include <set>
#include <vector>

#include "gdahin/graph.hpp"

namespace gda {

/// Unnormalized Laplacians over one private type pair's nodes, one per domain.
/// Row order of any matrix paired with this block is fixed: source private
/// nodes first, then target private nodes.
struct LaplacianBlock {
    SpMat l_source;
    SpMat l_target;
    bool source_isolated = false;  // private type had no incident relations
    bool target_isolated = false;

    long total_nodes() const { return l_source.rows() + l_target.rows(); }

    /// Block-diagonal composite; no cross-domain entries.
    std::shared_ptr<const SpMat> composite() const {
        auto lg = std::make_shared<SpMat>(total_nodes(), total_nodes());
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<size_t>(l_source.nonZeros() + l_target.nonZeros()));
        for (int k = 0; k < l_source.outerSize(); ++k)
            for (SpMat::InnerIterator it(l_source, k); it; ++it)
                trip.emplace_back(it.row(), it.col(), it.value());
        const long off = l_source.rows();
        for (int k = 0; k < l_target.outerSize(); ++k)
            for (SpMat::InnerIterator it(l_target, k); it; ++it)
                trip.emplace_back(off + it.row(), off + it.col(), it.value());
        lg->setFromTriplets(trip.begin(), trip.end());
        return lg;
    }
};

namespace detail {

/// Co-occurrence Laplacian of one domain's private type: two private nodes are
/// adjacent iff they share a neighbor through any incident relation, weighted
/// by the number of distinct shared neighbors. L = D - A, zero diagonal on A.
inline SpMat cooccurrence_laplacian(const HeteroGraph& g, const std::string& priv_type,
                                    bool* isolated) {
    const int n = g.node_count(priv_type);
    // Incidence of private nodes against all neighbor endpoints, deduplicated.
    // Neighbor ids are globalized as (relation-side type, local index).
    std::vector<std::set<std::pair<int, int>>> nbrs(static_cast<size_t>(n));
    bool any_relation = false;
    for (size_t ri = 0; ri < g.relations.size(); ++ri) {
        const auto& r = g.relations[ri];
        const bool src_is_priv = r.src_type == priv_type;
        const bool dst_is_priv = r.dst_type == priv_type;
        if (!src_is_priv && !dst_is_priv) continue;
        any_relation = true;
        for (const auto& [s, d] : r.edges) {
            // A self-relation contributes both directions.
            if (src_is_priv) {
                int other_key = g.type_index.at(r.dst_type);
                nbrs[static_cast<size_t>(s)].insert({other_key, d});
            }
            if (dst_is_priv) {
                int other_key = g.type_index.at(r.src_type);
                nbrs[static_cast<size_t>(d)].insert({other_key, s});
            }
        }
    }
    if (isolated) *isolated = !any_relation;

    // A = Z Z^T over the 0/1 incidence, diagonal dropped. Bucket private nodes
    // by neighbor so each shared neighbor contributes one count per node pair.
    std::map<std::pair<int, int>, std::vector<int>> by_neighbor;
    for (int i = 0; i < n; ++i)
        for (const auto& nb : nbrs[static_cast<size_t>(i)]) by_neighbor[nb].push_back(i);

    std::map<std::pair<int, int>, double> weights;  // (i<j) -> shared count
    for (const auto& [nb, members] : by_neighbor) {
        for (size_t a = 0; a < members.size(); ++a)
            for (size_t b = a + 1; b < members.size(); ++b)
                weights[{members[a], members[b]}] += 1.0;
    }

    std::vector<Eigen::Triplet<double>> trip;
    std::vector<double> degree(static_cast<size_t>(n), 0.0);
    trip.reserve(weights.size() * 2 + static_cast<size_t>(n));
    for (const auto& [ij, w] : weights) {
        trip.emplace_back(ij.first, ij.second, -w);
        trip.emplace_back(ij.second, ij.first, -w);
        degree[static_cast<size_t>(ij.first)] += w;
        degree[static_cast<size_t>(ij.second)] += w;
    }
    for (int i = 0; i < n; ++i)
        if (degree[static_cast<size_t>(i)] != 0.0) trip.emplace_back(i, i, degree[static_cast<size_t>(i)]);
    SpMat lap(n, n);
    lap.setFromTriplets(trip.begin(), trip.end());
    return lap;
}

}  // namespace detail

/// Builds the per-domain co-occurrence Laplacians for private pair k2.
inline LaplacianBlock build_private_laplacian(const DomainPair& pair, int k2) {
    if (k2 < 0 || k2 >= pair.schema.k2())
        throw ContractError(strfmt("private pair index %d out of range [0,%d)", k2,
                                   pair.schema.k2()));
    const auto& [src_type, tgt_type] = pair.schema.private_pairs[static_cast<size_t>(k2)];
    LaplacianBlock block;
    block.l_source =
        detail::cooccurrence_laplacian(pair.source, src_type, &block.source_isolated);
    block.l_target =
        detail::cooccurrence_laplacian(pair.target, tgt_type, &block.target_isolated);
    return block;
}

}  // namespace gda
