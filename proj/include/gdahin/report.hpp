#pragma once

#include "gdahin/trainer.hpp"

// Run outputs as TSV: report.tsv holds one row per epoch with every loss
// component, summary.tsv holds scalars plus the config snapshot. Loss columns
// are deterministic in (inputs, seed); wall-clock time lives only in the
// summary.

namespace gda {

inline void write_report(const RunReport& rep, const fs::path& dir) {
    fs::create_directories(dir);
    {
        std::vector<std::string> lines;
        lines.push_back("epoch\tphase\tcls\trecon1\trecon2\tnda1\tnda2\tda\ttotal");
        for (const auto& r : rep.rows) {
            lines.push_back(strfmt("%d\t%d\t%s\t%s\t%s\t%s\t%s\t%s\t%s", r.epoch, r.phase,
                                   fmt_double(r.comps.cls).c_str(),
                                   fmt_double(r.comps.recon1).c_str(),
                                   fmt_double(r.comps.recon2).c_str(),
                                   fmt_double(r.comps.nda1).c_str(),
                                   fmt_double(r.comps.nda2).c_str(),
                                   fmt_double(r.comps.da).c_str(),
                                   fmt_double(r.total).c_str()));
        }
        write_lines(dir / "report.tsv", lines);
    }
    {
        std::vector<std::string> lines;
        lines.push_back("accuracy\t" + fmt_double(rep.accuracy));
        lines.push_back("pseudo_label_count\t" + std::to_string(rep.pseudo_count));
        lines.push_back("wall_seconds\t" + fmt_double(rep.wall_seconds));
        lines.push_back("seed\t" + std::to_string(rep.seed));
        for (const auto& [k, v] : rep.cfg.to_kv()) lines.push_back("config." + k + "\t" + v);
        for (const auto& w : rep.warnings) lines.push_back("warning\t" + w);
        write_lines(dir / "summary.tsv", lines);
    }
}

struct LoadedReport {
    std::vector<EpochRow> rows;
    std::map<std::string, std::string> summary;
};

inline LoadedReport read_report(const fs::path& dir) {
    LoadedReport out;
    auto rows = read_tsv(dir / "report.tsv");
    for (size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.size() != 9) throw IoError("malformed report row");
        EpochRow e;
        e.epoch = static_cast<int>(parse_long(r[0], "report"));
        e.phase = static_cast<int>(parse_long(r[1], "report"));
        e.comps.cls = parse_double(r[2], "report");
        e.comps.recon1 = parse_double(r[3], "report");
        e.comps.recon2 = parse_double(r[4], "report");
        e.comps.nda1 = parse_double(r[5], "report");
        e.comps.nda2 = parse_double(r[6], "report");
        e.comps.da = parse_double(r[7], "report");
        e.total = parse_double(r[8], "report");
        out.rows.push_back(e);
    }
    for (const auto& r : read_tsv(dir / "summary.tsv"))
        if (r.size() >= 2) out.summary[r[0]] = r[1];
    return out;
}

}  // namespace gda
