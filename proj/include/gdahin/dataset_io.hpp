#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gdahin/graph.hpp"
#include "gdahin/tsv.hpp"

// On-disk dataset layout (UTF-8, tab-separated):
//   schema.tsv                     shared/private/relation pairings + target type + classes
//   <domain>/<type>.nodes.tsv      one row per node, columns = feature values
//   <domain>/<relation>.edges.tsv  rows "src_index \t dst_index"
//   <domain>/labels.tsv            rows "node_index \t class_id" over the class type
// Labels are required for the source domain; a target labels file is held out
// for evaluation only.

namespace gda {

namespace detail {

inline Mat load_feature_file(const fs::path& path) {
    auto rows = read_tsv(path);
    if (rows.empty()) throw ValidationError("empty node file: " + path.string());
    const size_t dim = rows[0].size();
    Mat m(static_cast<long>(rows.size()), static_cast<long>(dim));
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != dim)
            throw ValidationError(strfmt("%s: row %zu has %zu columns, expected %zu",
                                         path.string().c_str(), i, rows[i].size(), dim));
        for (size_t j = 0; j < dim; ++j)
            m(static_cast<long>(i), static_cast<long>(j)) =
                parse_double(rows[i][j], path.string());
    }
    return m;
}

inline std::vector<std::pair<int, int>> load_edge_file(const fs::path& path) {
    std::vector<std::pair<int, int>> edges;
    if (!fs::exists(path)) throw IoError("missing edge file: " + path.string());
    for (const auto& row : read_tsv(path)) {
        if (row.size() != 2)
            throw ValidationError(path.string() + ": edge rows need 2 columns");
        edges.emplace_back(static_cast<int>(parse_long(row[0], path.string())),
                           static_cast<int>(parse_long(row[1], path.string())));
    }
    return edges;
}

inline std::vector<int> load_label_file(const fs::path& path, int node_count,
                                        int num_classes) {
    std::vector<int> labels(node_count, -1);
    for (const auto& row : read_tsv(path)) {
        if (row.size() != 2)
            throw ValidationError(path.string() + ": label rows need 2 columns");
        long idx = parse_long(row[0], path.string());
        long cls = parse_long(row[1], path.string());
        if (idx < 0 || idx >= node_count)
            throw ValidationError(strfmt("%s: node index %ld out of range [0,%d)",
                                         path.string().c_str(), idx, node_count));
        if (cls < 0 || cls >= num_classes)
            throw ValidationError(strfmt("%s: class id %ld out of range [0,%d)",
                                         path.string().c_str(), cls, num_classes));
        if (labels[idx] != -1)
            throw ValidationError(strfmt("%s: duplicate label for node %ld",
                                         path.string().c_str(), idx));
        labels[idx] = static_cast<int>(cls);
    }
    for (int i = 0; i < node_count; ++i)
        if (labels[i] == -1)
            throw ValidationError(strfmt("%s: node %d has no label", path.string().c_str(), i));
    return labels;
}

}  // namespace detail

/// Loads and validates a dataset directory; see the layout note above.
inline DomainPair load_dataset(const fs::path& root) {
    const fs::path schema_path = root / "schema.tsv";
    if (!fs::exists(schema_path)) throw IoError("missing schema file: " + schema_path.string());

    DomainPair pair;
    pair.source.domain_tag = Domain::source;
    pair.target.domain_tag = Domain::target;
    TypeSchema& sch = pair.schema;

    for (const auto& row : read_tsv(schema_path)) {
        const std::string& kind = row[0];
        if (kind == "shared" || kind == "private") {
            if (row.size() != 3)
                throw SchemaError(schema_path.string() + ": '" + kind + "' rows need 3 columns");
            if (kind == "shared")
                sch.shared_pairs.emplace_back(row[1], row[2]);
            else
                sch.private_pairs.emplace_back(row[1], row[2]);
        } else if (kind == "relation") {
            if (row.size() != 3)
                throw SchemaError(schema_path.string() + ": 'relation' rows need 3 columns");
            sch.relation_pairs.emplace_back(row[1], row[2]);
        } else if (kind == "target_type") {
            if (row.size() != 2)
                throw SchemaError(schema_path.string() + ": 'target_type' rows need 2 columns");
            sch.target_class_type = row[1];
        } else if (kind == "classes") {
            if (row.size() != 2)
                throw SchemaError(schema_path.string() + ": 'classes' rows need 2 columns");
            sch.num_classes = static_cast<int>(parse_long(row[1], schema_path.string()));
        } else {
            throw SchemaError(schema_path.string() + ": unknown row kind '" + kind + "'");
        }
    }
    if (sch.target_class_type.empty())
        throw SchemaError(schema_path.string() + ": missing target_type row");
    if (sch.num_classes == 0) throw SchemaError(schema_path.string() + ": missing classes row");

    auto load_graph = [&](HeteroGraph& g, bool source_side) {
        const fs::path dir = root / (source_side ? "source" : "target");
        auto type_of = [&](const std::pair<std::string, std::string>& p) {
            return source_side ? p.first : p.second;
        };
        for (const auto& p : sch.shared_pairs) {
            fs::path f = dir / (type_of(p) + ".nodes.tsv");
            if (!fs::exists(f)) throw IoError("missing node file: " + f.string());
            g.add_type(type_of(p), detail::load_feature_file(f));
        }
        for (const auto& p : sch.private_pairs) {
            fs::path f = dir / (type_of(p) + ".nodes.tsv");
            if (!fs::exists(f)) throw IoError("missing node file: " + f.string());
            g.add_type(type_of(p), detail::load_feature_file(f));
        }
        for (const auto& rp : sch.relation_pairs) {
            const std::string rel = source_side ? rp.first : rp.second;
            g.add_relation(rel, detail::load_edge_file(dir / (rel + ".edges.tsv")));
        }
        const std::string cls_type =
            source_side ? sch.target_class_type : sch.target_name_of_shared(sch.target_class_type);
        const fs::path label_path = dir / "labels.tsv";
        if (source_side && !fs::exists(label_path))
            throw IoError("missing label file: " + label_path.string());
        if (fs::exists(label_path))
            g.labels = detail::load_label_file(label_path, g.node_count(cls_type),
                                               sch.num_classes);
    };
    load_graph(pair.source, true);
    load_graph(pair.target, false);

    validate_pair(pair);
    return pair;
}

/// Writes a pair in the directory layout load_dataset reads. Feature values
/// round-trip exactly (17 significant digits).
inline void save_dataset(const DomainPair& pair, const fs::path& root) {
    fs::create_directories(root / "source");
    fs::create_directories(root / "target");

    std::vector<std::string> schema_lines;
    for (const auto& [a, b] : pair.schema.shared_pairs)
        schema_lines.push_back("shared\t" + a + "\t" + b);
    for (const auto& [a, b] : pair.schema.private_pairs)
        schema_lines.push_back("private\t" + a + "\t" + b);
    for (const auto& [a, b] : pair.schema.relation_pairs)
        schema_lines.push_back("relation\t" + a + "\t" + b);
    schema_lines.push_back("target_type\t" + pair.schema.target_class_type);
    schema_lines.push_back("classes\t" + std::to_string(pair.schema.num_classes));
    write_lines(root / "schema.tsv", schema_lines);

    auto save_graph = [&](const HeteroGraph& g, const std::string& sub, const std::string& cls) {
        const fs::path dir = root / sub;
        for (size_t ti = 0; ti < g.type_names.size(); ++ti) {
            std::vector<std::string> lines;
            const Mat& m = g.features[ti];
            lines.reserve(static_cast<size_t>(m.rows()));
            for (long i = 0; i < m.rows(); ++i) {
                std::vector<std::string> cells;
                cells.reserve(static_cast<size_t>(m.cols()));
                for (long j = 0; j < m.cols(); ++j) cells.push_back(fmt_double(m(i, j)));
                lines.push_back(join(cells, "\t"));
            }
            write_lines(dir / (g.type_names[ti] + ".nodes.tsv"), lines);
        }
        for (const auto& r : g.relations) {
            std::vector<std::string> lines;
            lines.reserve(r.edges.size());
            for (const auto& [s, d] : r.edges)
                lines.push_back(std::to_string(s) + "\t" + std::to_string(d));
            write_lines(dir / (r.name + ".edges.tsv"), lines);
        }
        if (g.labels) {
            std::vector<std::string> lines;
            for (size_t i = 0; i < g.labels->size(); ++i)
                lines.push_back(std::to_string(i) + "\t" + std::to_string((*g.labels)[i]));
            write_lines(dir / "labels.tsv", lines);
        }
        (void)cls;
    };
    save_graph(pair.source, "source", pair.schema.target_class_type);
    save_graph(pair.target, "target",
               pair.schema.target_name_of_shared(pair.schema.target_class_type));
}

}  // namespace gda
