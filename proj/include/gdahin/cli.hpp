#pragma once

#include <CLI11.hpp>

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <thread>

#include "gdahin/checkpoint.hpp"
#include "gdahin/dataset_io.hpp"
#include "gdahin/report.hpp"
#include "gdahin/synthetic.hpp"
#include "gdahin/trainer.hpp"

// Command-line surface:
//   gda-hin train               --data DIR | --synthetic FILE  --config FILE --out DIR
//   gda-hin evaluate            --checkpoint FILE --data|--synthetic --out DIR
//   gda-hin export-embeddings   --checkpoint FILE --data|--synthetic --out FILE
//   gda-hin sweep               --ablations a,b --seeds 1,2 ... --out DIR
//   gda-hin generate-synthetic  --synthetic FILE --seed N --out DIR
// Exit codes: 0 ok, 1 I/O failure, 2 invalid config/schema/data, 3 divergence.

namespace gda::cli {

struct DataArgs {
    std::string data_dir;
    std::string synthetic_file;
    uint64_t seed = 0;  // dataset seed for --synthetic
};

inline DomainPair acquire_pair(const DataArgs& a) {
    if (!a.data_dir.empty() && !a.synthetic_file.empty())
        throw ConfigError("use either --data or --synthetic, not both");
    if (!a.data_dir.empty()) return load_dataset(a.data_dir);
    if (!a.synthetic_file.empty())
        return generate_synthetic_pair(load_synthetic_config(a.synthetic_file), a.seed);
    throw ConfigError("one of --data or --synthetic is required");
}

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const TrainingError*>(&e)) return 3;
    if (dynamic_cast<const IoError*>(&e)) return 1;
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const SchemaError*>(&e) ||
        dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ContractError*>(&e))
        return 2;
    return 1;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    DataArgs data;
    std::string config_file;
    std::string out_dir;
    std::string ablation_override;
    std::optional<uint64_t> seed_override;
    std::string phase = "both";
};

inline int cmd_train(const TrainArgs& a) {
    try {
        TrainConfig cfg =
            a.config_file.empty() ? TrainConfig{} : load_train_config(a.config_file);
        if (a.seed_override) cfg.seed = *a.seed_override;
        if (!a.ablation_override.empty()) cfg.ablation = parse_ablation(a.ablation_override);
        cfg.validate();
        int phases = 2;
        if (a.phase == "1")
            phases = 1;
        else if (a.phase != "2" && a.phase != "both")
            throw ConfigError("--phase must be 1, 2, or both");

        DataArgs d = a.data;
        d.seed = cfg.seed;
        DomainPair pair = acquire_pair(d);
        auto [state, report] = run_training(pair, cfg, phases);
        fs::create_directories(a.out_dir);
        write_report(report, a.out_dir);
        save_checkpoint(state, fs::path(a.out_dir) / "checkpoint.tsv");
        for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
        if (report.accuracy >= 0)
            std::cout << strfmt("accuracy %.2f\n", report.accuracy * 100.0);
        std::cout << "report written to " << a.out_dir << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
    DataArgs data;
    std::string checkpoint_file;
    std::string out_dir;
};

inline int cmd_evaluate(const EvaluateArgs& a) {
    try {
        ModelState st = load_checkpoint(a.checkpoint_file);
        DataArgs d = a.data;
        if (d.seed == 0) d.seed = st.cfg.seed;
        DomainPair pair = acquire_pair(d);
        check_signature_match(st, pair);
        TrainContext ctx = TrainContext::make(pair, st.sig.include_private);
        EvalResult ev = evaluate(st, ctx);
        std::cout << strfmt("%.2f\n", ev.accuracy * 100.0);
        if (!a.out_dir.empty()) {
            fs::create_directories(a.out_dir);
            std::vector<std::string> lines;
            for (long i = 0; i < ev.confusion.rows(); ++i) {
                std::vector<std::string> cells;
                for (long j = 0; j < ev.confusion.cols(); ++j)
                    cells.push_back(std::to_string(static_cast<long>(ev.confusion(i, j))));
                lines.push_back(join(cells, "\t"));
            }
            write_lines(fs::path(a.out_dir) / "confusion.tsv", lines);
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------------------

struct ExportArgs {
    DataArgs data;
    std::string checkpoint_file;
    std::string out_file;
};

/// Writes one row per classification-type node of both domains:
/// domain, type, node_index, then the hidden coordinates.
inline int cmd_export_embeddings(const ExportArgs& a) {
    try {
        ModelState st = load_checkpoint(a.checkpoint_file);
        DataArgs d = a.data;
        if (d.seed == 0) d.seed = st.cfg.seed;
        DomainPair pair = acquire_pair(d);
        check_signature_match(st, pair);
        TrainContext ctx = TrainContext::make(pair, st.sig.include_private);
        ClassEmbeddings emb = class_type_embeddings(st, ctx);
        const std::string src_type = st.sig.schema.target_class_type;
        const std::string tgt_type = st.sig.schema.target_name_of_shared(src_type);
        std::vector<std::string> lines;
        auto emit = [&](const char* domain, const std::string& type, const Mat& m) {
            for (long i = 0; i < m.rows(); ++i) {
                std::vector<std::string> cells = {domain, type, std::to_string(i)};
                for (long j = 0; j < m.cols(); ++j) cells.push_back(fmt_double(m(i, j)));
                lines.push_back(join(cells, "\t"));
            }
        };
        emit("source", src_type, emb.source);
        emit("target", tgt_type, emb.target);
        if (!fs::path(a.out_file).parent_path().empty())
            fs::create_directories(fs::path(a.out_file).parent_path());
        write_lines(a.out_file, lines);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------------------

struct SweepArgs {
    DataArgs data;
    std::string config_file;
    std::string out_dir;
    std::vector<std::string> ablations = {"full", "wo_P", "wo_T", "w_S"};
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
};

struct SweepCell {
    std::string ablation;
    uint64_t seed = 0;
    double accuracy = -1;
    bool failed = false;
    std::string error;
};

inline int sweep_thread_cap() {
    if (const char* env = std::getenv("GDA_HIN_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<int>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs every (ablation, seed) cell on one fixed dataset and aggregates
/// mean/std accuracies per ablation. Cells run in parallel up to
/// GDA_HIN_THREADS; each cell is self-contained and deterministic.
inline int cmd_sweep(const SweepArgs& a) {
    try {
        TrainConfig base =
            a.config_file.empty() ? TrainConfig{} : load_train_config(a.config_file);
        if (a.ablations.empty() || a.seeds.empty())
            throw ConfigError("sweep needs at least one ablation and one seed");
        DataArgs d = a.data;
        d.seed = base.seed;
        DomainPair pair = acquire_pair(d);

        std::vector<SweepCell> cells;
        for (const auto& ab : a.ablations)
            for (uint64_t s : a.seeds) cells.push_back({ab, s});
        std::atomic<size_t> next{0};
        auto worker = [&] {
            while (true) {
                size_t i = next.fetch_add(1);
                if (i >= cells.size()) return;
                SweepCell& cell = cells[i];
                try {
                    TrainConfig cfg = base;
                    cfg.ablation = parse_ablation(cell.ablation);
                    cfg.seed = cell.seed;
                    auto [state, report] = run_training(pair, cfg, 2);
                    cell.accuracy = report.accuracy;
                    fs::path cell_dir = fs::path(a.out_dir) / "cells" /
                                        (cell.ablation + "_s" + std::to_string(cell.seed));
                    fs::create_directories(cell_dir);
                    write_report(report, cell_dir);
                    save_checkpoint(state, cell_dir / "checkpoint.tsv");
                } catch (const std::exception& e) {
                    cell.failed = true;
                    cell.error = e.what();
                }
            }
        };
        const int n_threads =
            std::min<int>(sweep_thread_cap(), static_cast<int>(cells.size()));
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();

        fs::create_directories(a.out_dir);
        std::vector<std::string> lines;
        lines.push_back("ablation\tn_seeds\tmean_accuracy\tstd_accuracy\taccuracies");
        size_t failures = 0;
        for (const auto& ab : a.ablations) {
            std::vector<double> accs;
            std::vector<std::string> acc_strs;
            for (const auto& cell : cells) {
                if (cell.ablation != ab) continue;
                if (cell.failed) {
                    ++failures;
                    acc_strs.push_back("failed");
                    std::cerr << "cell " << ab << " seed " << cell.seed
                              << " failed: " << cell.error << "\n";
                    continue;
                }
                accs.push_back(cell.accuracy);
                acc_strs.push_back(strfmt("%.4f", cell.accuracy));
            }
            double mean = 0, stdev = 0;
            if (!accs.empty()) {
                mean = std::accumulate(accs.begin(), accs.end(), 0.0) / accs.size();
                for (double v : accs) stdev += (v - mean) * (v - mean);
                stdev = std::sqrt(stdev / accs.size());
            }
            lines.push_back(strfmt("%s\t%zu\t%.4f\t%.4f\t%s", ab.c_str(), accs.size(), mean,
                                   stdev, join(acc_strs, ",").c_str()));
        }
        write_lines(fs::path(a.out_dir) / "table.tsv", lines);
        for (size_t i = 1; i < lines.size(); ++i) std::cout << lines[i] << "\n";
        return failures == cells.size() ? 1 : 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
    std::string synthetic_file;
    uint64_t seed = 0;
    std::string out_dir;
};

inline int cmd_generate_synthetic(const GenerateArgs& a) {
    try {
        SyntheticConfig cfg = load_synthetic_config(a.synthetic_file);
        DomainPair pair = generate_synthetic_pair(cfg, a.seed);
        save_dataset(pair, a.out_dir);
        std::cout << "dataset written to " << a.out_dir << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------------------

inline int run(int argc, char** argv) {
    CLI::App app{"Cross-network node classification with shared/private type "
                 "alignment, block completion, and adversarial topology matching"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train =
        app.add_subcommand("train", "Train phase one and two, write report + checkpoint");
    train->add_option("--data", train_args.data.data_dir, "dataset directory");
    train->add_option("--synthetic", train_args.data.synthetic_file, "synthetic config file");
    train->add_option("--config", train_args.config_file, "training config file");
    train->add_option("--out", train_args.out_dir, "output directory")->required();
    train->add_option("--ablation", train_args.ablation_override,
                      "full|wo_P|wo_T|w_S|no_da (overrides config)");
    uint64_t seed_tmp = 0;
    auto* seed_opt = train->add_option("--seed", seed_tmp, "seed override");
    train->add_option("--phase", train_args.phase, "1|2|both (default both)");

    EvaluateArgs eval_args;
    auto* eval = app.add_subcommand("evaluate", "Accuracy + confusion matrix of a checkpoint");
    eval->add_option("--checkpoint", eval_args.checkpoint_file, "checkpoint file")->required();
    eval->add_option("--data", eval_args.data.data_dir, "dataset directory");
    eval->add_option("--synthetic", eval_args.data.synthetic_file, "synthetic config file");
    eval->add_option("--seed", eval_args.data.seed, "dataset seed for --synthetic");
    eval->add_option("--out", eval_args.out_dir, "directory for confusion.tsv");

    ExportArgs export_args;
    auto* exp =
        app.add_subcommand("export-embeddings", "Write per-node class-type embeddings as TSV");
    exp->add_option("--checkpoint", export_args.checkpoint_file, "checkpoint file")->required();
    exp->add_option("--data", export_args.data.data_dir, "dataset directory");
    exp->add_option("--synthetic", export_args.data.synthetic_file, "synthetic config file");
    exp->add_option("--seed", export_args.data.seed, "dataset seed for --synthetic");
    exp->add_option("--out", export_args.out_file, "output TSV file")->required();

    SweepArgs sweep_args;
    std::string ablations_csv = "full,wo_P,wo_T,w_S";
    std::string seeds_csv = "1,2,3,4,5";
    auto* sweep = app.add_subcommand("sweep", "Run an (ablation x seed) grid and tabulate");
    sweep->add_option("--data", sweep_args.data.data_dir, "dataset directory");
    sweep->add_option("--synthetic", sweep_args.data.synthetic_file, "synthetic config file");
    sweep->add_option("--config", sweep_args.config_file, "training config file");
    sweep->add_option("--out", sweep_args.out_dir, "output directory")->required();
    sweep->add_option("--ablations", ablations_csv, "comma list of ablations");
    sweep->add_option("--seeds", seeds_csv, "comma list of seeds");

    GenerateArgs gen_args;
    auto* gen = app.add_subcommand("generate-synthetic", "Materialize a synthetic dataset");
    gen->add_option("--synthetic", gen_args.synthetic_file, "synthetic config file")->required();
    gen->add_option("--seed", gen_args.seed, "generation seed");
    gen->add_option("--out", gen_args.out_dir, "output dataset directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    if (*train) {
        if (seed_opt->count()) train_args.seed_override = seed_tmp;
        return cmd_train(train_args);
    }
    if (*eval) return cmd_evaluate(eval_args);
    if (*exp) return cmd_export_embeddings(export_args);
    if (*sweep) {
        try {
            sweep_args.ablations.clear();
            for (const auto& s : split(ablations_csv, ','))
                sweep_args.ablations.push_back(trim(s));
            sweep_args.seeds.clear();
            for (const auto& s : split(seeds_csv, ','))
                sweep_args.seeds.push_back(
                    static_cast<uint64_t>(parse_long(trim(s), "--seeds")));
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 2;
        }
        return cmd_sweep(sweep_args);
    }
    if (*gen) return cmd_generate_synthetic(gen_args);
    return 2;
}

}  // namespace gda::cli
