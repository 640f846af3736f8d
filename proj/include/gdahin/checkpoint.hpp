#pragma once

#include <fstream>
#include <sstream>

#include "gdahin/trainer.hpp"

// Self-describing text checkpoint: the config that produced the model, the
// structural signature it was built for, and every parameter tensor with a
// shape header. Values are written with 17 significant digits, so save/load
// round-trips are exact and repeated saves are byte-identical.

namespace gda {

inline void save_checkpoint(const ModelState& st, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint: " + path.string());
    out << "gda-hin-checkpoint v1\n";
    auto kv = st.cfg.to_kv();
    out << "config " << kv.size() << "\n";
    for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
    const auto& sig = st.sig;
    out << "signature\n";
    for (size_t k = 0; k < sig.schema.shared_pairs.size(); ++k)
        out << "shared\t" << sig.schema.shared_pairs[k].first << "\t"
            << sig.schema.shared_pairs[k].second << "\t" << sig.shared_dims[k] << "\n";
    for (size_t k = 0; k < sig.schema.private_pairs.size(); ++k)
        out << "private\t" << sig.schema.private_pairs[k].first << "\t"
            << sig.schema.private_pairs[k].second << "\t" << sig.private_dims[k].first
            << "\t" << sig.private_dims[k].second << "\t" << sig.private_counts[k].first
            << "\t" << sig.private_counts[k].second << "\n";
    for (const auto& [rs, rt] : sig.schema.relation_pairs)
        out << "relation\t" << rs << "\t" << rt << "\n";
    out << "target_type\t" << sig.schema.target_class_type << "\n";
    out << "classes\t" << sig.schema.num_classes << "\n";
    out << "include_private\t" << (sig.include_private ? 1 : 0) << "\n";
    out << "tensors " << st.params.size() << "\n";
    for (const auto& e : st.params.entries()) {
        out << "tensor " << e.name << " " << e.value.rows() << " " << e.value.cols() << "\n";
        for (long i = 0; i < e.value.rows(); ++i) {
            for (long j = 0; j < e.value.cols(); ++j) {
                if (j) out << "\t";
                out << fmt_double(e.value(i, j));
            }
            out << "\n";
        }
    }
    if (!out) throw IoError("write failed: " + path.string());
}

/// Reads a checkpoint and rebuilds the module bindings for it. The returned
/// state is usable with any pair whose signature matches.
inline ModelState load_checkpoint(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    std::string line;
    auto next_line = [&]() -> std::string {
        if (!std::getline(in, line)) throw IoError("truncated checkpoint: " + path.string());
        return line;
    };
    if (next_line() != "gda-hin-checkpoint v1")
        throw IoError("not a checkpoint file: " + path.string());

    std::istringstream hdr(next_line());
    std::string word;
    size_t n_cfg = 0;
    hdr >> word >> n_cfg;
    if (word != "config") throw IoError("malformed checkpoint header: " + path.string());
    std::map<std::string, std::string> kv;
    for (size_t i = 0; i < n_cfg; ++i) {
        std::string l = next_line();
        auto eq = l.find('=');
        if (eq == std::string::npos) throw IoError("malformed config line: " + l);
        kv[l.substr(0, eq)] = l.substr(eq + 1);
    }
    TrainConfig cfg = parse_train_config(kv, path.string());

    if (next_line() != "signature") throw IoError("missing signature: " + path.string());
    ModelSignature sig;
    while (true) {
        std::string l = next_line();
        auto cells = split(l, '\t');
        if (cells[0] == "shared") {
            sig.schema.shared_pairs.emplace_back(cells.at(1), cells.at(2));
            sig.shared_dims.push_back(static_cast<int>(parse_long(cells.at(3), path.string())));
        } else if (cells[0] == "private") {
            sig.schema.private_pairs.emplace_back(cells.at(1), cells.at(2));
            sig.private_dims.emplace_back(
                static_cast<int>(parse_long(cells.at(3), path.string())),
                static_cast<int>(parse_long(cells.at(4), path.string())));
            sig.private_counts.emplace_back(
                static_cast<int>(parse_long(cells.at(5), path.string())),
                static_cast<int>(parse_long(cells.at(6), path.string())));
        } else if (cells[0] == "relation") {
            sig.schema.relation_pairs.emplace_back(cells.at(1), cells.at(2));
        } else if (cells[0] == "target_type") {
            sig.schema.target_class_type = cells.at(1);
        } else if (cells[0] == "classes") {
            sig.schema.num_classes = static_cast<int>(parse_long(cells.at(1), path.string()));
        } else if (cells[0] == "include_private") {
            sig.include_private = cells.at(1) == "1";
            break;
        } else {
            throw IoError("unknown signature row: " + l);
        }
    }

    // Rebuild the module structure, then overwrite values from the file.
    ModelState st;
    st.cfg = cfg;
    st.sig = sig;
    Rng rng(cfg.seed);
    const int d = cfg.hidden_dim;
    for (int k = 0; k < sig.schema.k1(); ++k) {
        TypeAutoencoder ae;
        ae.prefix = strfmt("ae.s%d", k);
        ae.input_dim = sig.shared_dims[static_cast<size_t>(k)];
        ae.hidden_dim = d;
        ae.act = cfg.activation;
        ae.register_params(st.params, rng);
        st.shared_aes.push_back(ae);
    }
    for (int k = 0; k < sig.schema.k1(); ++k) {
        TypeDiscriminator disc;
        disc.prefix = strfmt("disc.s%d", k);
        disc.in_dim = d;
        disc.hidden = cfg.disc_hidden;
        disc.register_params(st.params, rng);
        st.shared_discs.push_back(disc);
    }
    if (sig.include_private) {
        for (int k = 0; k < sig.schema.k2(); ++k) {
            const auto [ds, dt] = sig.private_dims[static_cast<size_t>(k)];
            const auto [ns, nt] = sig.private_counts[static_cast<size_t>(k)];
            st.params.add(strfmt("comp.p%d.What", k), Mat::Zero(ns + nt, ds + dt));
            TypeAutoencoder ae;
            ae.prefix = strfmt("ae.p%d", k);
            ae.input_dim = ds + dt;
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
    st.extractor = HgtExtractor(hcfg, relation_tables(sig.schema, sig.include_private),
                                num_slots(sig.schema, sig.include_private));
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

    std::istringstream th(next_line());
    size_t n_tensors = 0;
    th >> word >> n_tensors;
    if (word != "tensors") throw IoError("missing tensors header: " + path.string());
    if (n_tensors != st.params.size())
        throw IoError(strfmt("checkpoint has %zu tensors, model expects %zu", n_tensors,
                             st.params.size()));
    for (size_t i = 0; i < n_tensors; ++i) {
        std::istringstream ts(next_line());
        std::string tag, name;
        long rows = 0, cols = 0;
        ts >> tag >> name >> rows >> cols;
        if (tag != "tensor") throw IoError("malformed tensor header: " + line);
        auto& entry = st.params.entries()[i];
        if (entry.name != name)
            throw IoError("tensor order mismatch: expected " + entry.name + ", got " + name);
        if (entry.value.rows() != rows || entry.value.cols() != cols)
            throw IoError("tensor shape mismatch for " + name);
        for (long r = 0; r < rows; ++r) {
            auto cells = split(next_line(), '\t');
            if (static_cast<long>(cells.size()) != cols)
                throw IoError("tensor row width mismatch for " + name);
            for (long c = 0; c < cols; ++c)
                entry.value(r, c) = parse_double(cells[static_cast<size_t>(c)], name);
        }
    }
    return st;
}

/// Structural compatibility between a checkpoint and a dataset.
inline void check_signature_match(const ModelState& st, const DomainPair& pair) {
    ModelSignature expect = signature_of(pair, st.sig.include_private);
    if (!(expect == st.sig))
        throw SchemaError("checkpoint signature does not match the dataset schema");
}

}  // namespace gda
