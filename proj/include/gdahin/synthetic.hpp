#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gdahin/graph.hpp"
#include "gdahin/tsv.hpp"

namespace gda {

/// Parameters for generating a source/target pair with a controlled shift:
/// class-conditioned Gaussian features (target class means translated by
/// feature_shift along a label-relevant direction), homophilous random edges
/// (target densities scaled by density_factor), and low-rank class-driven
/// private-type features projected from one shared latent space.
struct SyntheticConfig {
    int num_classes = 4;
    std::vector<std::string> shared_types;
    std::vector<int> shared_counts;
    std::vector<int> shared_dims;
    std::vector<std::string> private_source_types;
    std::vector<std::string> private_target_types;
    std::vector<int> private_source_counts;
    std::vector<int> private_target_counts;
    std::vector<int> private_source_dims;
    std::vector<int> private_target_dims;
    std::string target_type;
    struct RelationSpec {
        std::string source_rel;
        std::string target_rel;
    };
    std::vector<RelationSpec> relations;
    double edge_prob = 0.01;
    double homophily = 4.0;  // same-class edge probability multiplier
    double feature_shift = 0.0;
    // Portion of the shift direction lying in the class-mean span (the rest
    // is orthogonal); the translation magnitude is feature_shift either way.
    // The class-carrying type can use its own fraction (< 0: follow the rest).
    double shift_label_fraction = 0.5;
    double target_shift_label_fraction = -1.0;
    double density_factor = 1.0;
    double class_mean_scale = 0.5;
    double feature_noise = 1.0;
    int latent_rank = 6;
    double latent_noise = 0.5;

    void validate() const {
        if (num_classes < 2) throw ConfigError("synthetic: classes must be >= 2");
        if (shared_types.empty()) throw ConfigError("synthetic: need at least one shared type");
        if (shared_counts.size() != shared_types.size() ||
            shared_dims.size() != shared_types.size())
            throw ConfigError("synthetic: shared_types/counts/dims lengths differ");
        auto positive = [](const std::vector<int>& v, const char* what) {
            for (int x : v)
                if (x <= 0) throw ConfigError(std::string("synthetic: non-positive ") + what);
        };
        positive(shared_counts, "count");
        positive(shared_dims, "dim");
        const size_t k2 = private_source_types.size();
        if (private_target_types.size() != k2 || private_source_counts.size() != k2 ||
            private_target_counts.size() != k2 || private_source_dims.size() != k2 ||
            private_target_dims.size() != k2)
            throw ConfigError("synthetic: private_* lists must have equal lengths");
        positive(private_source_counts, "count");
        positive(private_target_counts, "count");
        positive(private_source_dims, "dim");
        positive(private_target_dims, "dim");
        if (target_type.empty()) throw ConfigError("synthetic: target_type missing");
        bool found = false;
        for (const auto& t : shared_types) found = found || t == target_type;
        if (!found) throw ConfigError("synthetic: target_type must be a shared type");
        if (edge_prob < 0 || edge_prob > 1) throw ConfigError("synthetic: edge_prob not in [0,1]");
        if (homophily <= 0) throw ConfigError("synthetic: homophily must be > 0");
        if (density_factor < 0) throw ConfigError("synthetic: density_factor must be >= 0");
        if (latent_rank <= 0) throw ConfigError("synthetic: latent_rank must be > 0");
        if (feature_noise < 0 || latent_noise < 0)
            throw ConfigError("synthetic: noise must be >= 0");
        if (shift_label_fraction < 0 || shift_label_fraction > 1)
            throw ConfigError("synthetic: shift_label_fraction not in [0,1]");
        if (target_shift_label_fraction > 1)
            throw ConfigError("synthetic: target_shift_label_fraction not in [0,1]");
    }
};

namespace detail {

inline std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
    std::vector<int> out;
    if (trim(s).empty()) return out;
    for (const auto& tok : split(s, ','))
        out.push_back(static_cast<int>(parse_long(trim(tok), key)));
    return out;
}

inline std::vector<std::string> parse_name_list(const std::string& s) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    for (const auto& tok : split(s, ',')) out.push_back(trim(tok));
    return out;
}

}  // namespace detail

inline SyntheticConfig parse_synthetic_config(const std::map<std::string, std::string>& kv,
                                              const std::string& origin) {
    SyntheticConfig c;
    std::map<std::string, std::string> rest = kv;
    auto take = [&](const char* key) -> std::optional<std::string> {
        auto it = rest.find(key);
        if (it == rest.end()) return std::nullopt;
        std::string v = it->second;
        rest.erase(it);
        return v;
    };
    if (auto v = take("classes")) c.num_classes = static_cast<int>(parse_long(*v, origin));
    if (auto v = take("shared_types")) c.shared_types = detail::parse_name_list(*v);
    if (auto v = take("shared_counts")) c.shared_counts = detail::parse_int_list(*v, origin);
    if (auto v = take("shared_dims")) c.shared_dims = detail::parse_int_list(*v, origin);
    if (auto v = take("private_source_types")) c.private_source_types = detail::parse_name_list(*v);
    if (auto v = take("private_target_types")) c.private_target_types = detail::parse_name_list(*v);
    if (auto v = take("private_source_counts"))
        c.private_source_counts = detail::parse_int_list(*v, origin);
    if (auto v = take("private_target_counts"))
        c.private_target_counts = detail::parse_int_list(*v, origin);
    if (auto v = take("private_source_dims"))
        c.private_source_dims = detail::parse_int_list(*v, origin);
    if (auto v = take("private_target_dims"))
        c.private_target_dims = detail::parse_int_list(*v, origin);
    if (auto v = take("target_type")) c.target_type = *v;
    if (auto v = take("relations")) {
        for (const auto& tok : detail::parse_name_list(*v)) {
            auto colon = tok.find(':');
            if (colon == std::string::npos)
                c.relations.push_back({tok, tok});
            else
                c.relations.push_back({tok.substr(0, colon), tok.substr(colon + 1)});
        }
    }
    if (auto v = take("edge_prob")) c.edge_prob = parse_double(*v, origin);
    if (auto v = take("homophily")) c.homophily = parse_double(*v, origin);
    if (auto v = take("feature_shift")) c.feature_shift = parse_double(*v, origin);
    if (auto v = take("shift_label_fraction"))
        c.shift_label_fraction = parse_double(*v, origin);
    if (auto v = take("target_shift_label_fraction"))
        c.target_shift_label_fraction = parse_double(*v, origin);
    if (auto v = take("density_factor")) c.density_factor = parse_double(*v, origin);
    if (auto v = take("class_mean_scale")) c.class_mean_scale = parse_double(*v, origin);
    if (auto v = take("feature_noise")) c.feature_noise = parse_double(*v, origin);
    if (auto v = take("latent_rank")) c.latent_rank = static_cast<int>(parse_long(*v, origin));
    if (auto v = take("latent_noise")) c.latent_noise = parse_double(*v, origin);
    if (!rest.empty()) throw ConfigError(origin + ": unknown key '" + rest.begin()->first + "'");
    c.validate();
    return c;
}

inline SyntheticConfig load_synthetic_config(const fs::path& path) {
    return parse_synthetic_config(read_kv_file(path), path.string());
}

namespace detail {

inline std::vector<int> draw_classes(Rng& rng, int n, int c) {
    std::uniform_int_distribution<int> dist(0, c - 1);
    std::vector<int> out(static_cast<size_t>(n));
    for (auto& x : out) x = dist(rng);
    return out;
}

/// Unit shift direction: a label_fraction portion lies in the span of the
/// centered class means (label-relevant damage), the rest orthogonal to it
/// (removable without losing class information). Falls back to a random
/// direction when a component is degenerate.
inline Vec shift_direction(Rng& rng, const Mat& class_means, double label_fraction) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int c = static_cast<int>(class_means.rows());
    const int d = static_cast<int>(class_means.cols());
    Eigen::RowVectorXd mean = class_means.colwise().mean();
    Mat centered = class_means.rowwise() - mean;

    Vec coeff(c);
    for (int i = 0; i < c; ++i) coeff(i) = gauss(rng);
    Vec in_span = centered.transpose() * coeff;
    Vec raw(d);
    for (int j = 0; j < d; ++j) raw(j) = gauss(rng);
    if (in_span.norm() < 1e-12) in_span = raw;
    in_span /= in_span.norm();

    // Orthogonalize a random vector against the whole class-mean span.
    Vec orth = raw;
    Eigen::JacobiSVD<Mat> svd(centered, Eigen::ComputeFullV);
    long rank = 0;
    for (long i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()(i) > 1e-10 * svd.singularValues()(0)) ++rank;
    for (long i = 0; i < rank; ++i) {
        Vec v = svd.matrixV().col(i);
        orth -= orth.dot(v) * v;
    }
    if (orth.norm() < 1e-12) return in_span;  // no orthogonal complement left
    orth /= orth.norm();

    const double f = std::clamp(label_fraction, 0.0, 1.0);
    Vec dir = f * in_span + std::sqrt(std::max(0.0, 1.0 - f * f)) * orth;
    return dir / dir.norm();
}

inline Mat class_conditioned_features(Rng& rng, const std::vector<int>& classes,
                                      const Mat& means, double noise) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat x(static_cast<long>(classes.size()), means.cols());
    for (size_t i = 0; i < classes.size(); ++i)
        for (long j = 0; j < means.cols(); ++j)
            x(static_cast<long>(i), j) = means(classes[i], j) + noise * gauss(rng);
    return x;
}

inline std::vector<std::pair<int, int>> draw_edges(Rng& rng, const std::vector<int>& cls_u,
                                                   const std::vector<int>& cls_v,
                                                   double base_prob, double homophily,
                                                   double density) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::pair<int, int>> edges;
    for (size_t u = 0; u < cls_u.size(); ++u) {
        for (size_t v = 0; v < cls_v.size(); ++v) {
            double p = base_prob * (cls_u[u] == cls_v[v] ? homophily : 1.0) * density;
            if (unif(rng) < std::min(p, 1.0))
                edges.emplace_back(static_cast<int>(u), static_cast<int>(v));
        }
    }
    return edges;
}

}  // namespace detail

/// Deterministic in (config, seed). Target labels are produced but only read
/// by evaluation code, never by training.
inline DomainPair generate_synthetic_pair(const SyntheticConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    DomainPair pair;
    pair.source.domain_tag = Domain::source;
    pair.target.domain_tag = Domain::target;
    pair.schema.num_classes = cfg.num_classes;
    pair.schema.target_class_type = cfg.target_type;

    // Latent classes per node, per domain.
    std::map<std::string, std::vector<int>> src_classes, tgt_classes;
    for (size_t k = 0; k < cfg.shared_types.size(); ++k) {
        src_classes[cfg.shared_types[k]] =
            detail::draw_classes(rng, cfg.shared_counts[k], cfg.num_classes);
        tgt_classes[cfg.shared_types[k]] =
            detail::draw_classes(rng, cfg.shared_counts[k], cfg.num_classes);
    }
    for (size_t k = 0; k < cfg.private_source_types.size(); ++k) {
        src_classes[cfg.private_source_types[k]] =
            detail::draw_classes(rng, cfg.private_source_counts[k], cfg.num_classes);
        tgt_classes[cfg.private_target_types[k]] =
            detail::draw_classes(rng, cfg.private_target_counts[k], cfg.num_classes);
    }

    // Shared types: one mean table per pair, target means translated.
    for (size_t k = 0; k < cfg.shared_types.size(); ++k) {
        const std::string& name = cfg.shared_types[k];
        const int dim = cfg.shared_dims[k];
        Mat means = cfg.class_mean_scale * gaussian_matrix(rng, cfg.num_classes, dim, 1.0);
        const double frac = (name == cfg.target_type && cfg.target_shift_label_fraction >= 0)
                                ? cfg.target_shift_label_fraction
                                : cfg.shift_label_fraction;
        Vec dir = detail::shift_direction(rng, means, frac);
        Mat tgt_means = means;
        tgt_means.rowwise() += (cfg.feature_shift * dir).transpose();
        pair.source.add_type(name, detail::class_conditioned_features(
                                       rng, src_classes[name], means, cfg.feature_noise));
        pair.target.add_type(name, detail::class_conditioned_features(
                                       rng, tgt_classes[name], tgt_means, cfg.feature_noise));
        pair.schema.shared_pairs.emplace_back(name, name);
    }

    // Private pairs: class-driven latents in a shared space, projected into
    // each domain's own feature dimension; target latents translated.
    for (size_t k = 0; k < cfg.private_source_types.size(); ++k) {
        const int r = cfg.latent_rank;
        Mat lat_means = cfg.class_mean_scale * gaussian_matrix(rng, cfg.num_classes, r, 1.0);
        Vec dir = detail::shift_direction(rng, lat_means, cfg.shift_label_fraction);
        Mat tgt_lat_means = lat_means;
        tgt_lat_means.rowwise() += (cfg.feature_shift * dir).transpose();
        Mat proj_s = gaussian_matrix(rng, r, cfg.private_source_dims[k], 1.0 / std::sqrt(r));
        Mat proj_t = gaussian_matrix(rng, r, cfg.private_target_dims[k], 1.0 / std::sqrt(r));
        Mat z_s = detail::class_conditioned_features(
            rng, src_classes[cfg.private_source_types[k]], lat_means, cfg.latent_noise);
        Mat z_t = detail::class_conditioned_features(
            rng, tgt_classes[cfg.private_target_types[k]], tgt_lat_means, cfg.latent_noise);
        pair.source.add_type(cfg.private_source_types[k], z_s * proj_s);
        pair.target.add_type(cfg.private_target_types[k], z_t * proj_t);
        pair.schema.private_pairs.emplace_back(cfg.private_source_types[k],
                                               cfg.private_target_types[k]);
    }

    for (const auto& rel : cfg.relations) {
        auto [ss, sd] = detail::relation_endpoints(rel.source_rel);
        auto [ts, td] = detail::relation_endpoints(rel.target_rel);
        if (!src_classes.count(ss) || !src_classes.count(sd))
            throw ConfigError("synthetic: relation " + rel.source_rel + " has unknown type");
        if (!tgt_classes.count(ts) || !tgt_classes.count(td))
            throw ConfigError("synthetic: relation " + rel.target_rel + " has unknown type");
        pair.source.add_relation(
            rel.source_rel, detail::draw_edges(rng, src_classes[ss], src_classes[sd],
                                               cfg.edge_prob, cfg.homophily, 1.0));
        pair.target.add_relation(
            rel.target_rel, detail::draw_edges(rng, tgt_classes[ts], tgt_classes[td],
                                               cfg.edge_prob, cfg.homophily,
                                               cfg.density_factor));
        pair.schema.relation_pairs.emplace_back(rel.source_rel, rel.target_rel);
    }

    pair.source.labels = src_classes[cfg.target_type];
    pair.target.labels = tgt_classes[cfg.target_type];  // evaluation only

    validate_pair(pair);
    return pair;
}

}  // namespace gda
