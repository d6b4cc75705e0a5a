// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "metaseg/errors.hpp"
#include "metaseg/metrics.hpp"
#include "metaseg/stats.hpp"
#include "metaseg/trainer.hpp"
#include "metaseg/unet.hpp"

namespace metaseg {

namespace detail {

// shortest round-trip decimal form; deterministic across runs
inline std::string fmt_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline void check_csv_field(const std::string& s) {
    if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos)
        throw ContractError("CSV fields must not contain commas or newlines: '" + s + "'");
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double_field(const std::string& s, const std::string& what) {
    double v = 0;
    const auto* begin = s.data();
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end)
        throw FormatError("bad numeric field '" + s + "' in " + what);
    return v;
}

} // namespace detail

// epoch, F, G (blank when not evaluated), validation Dice, checkpoint path
inline void write_train_log_csv(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream os(path);
    if (!os) throw IOError("cannot open for writing: " + path);
    os << "epoch,f_loss,g_loss,val_dice,checkpoint\n";
    for (const auto& e : log) {
        detail::check_csv_field(e.checkpoint_path);
        os << e.epoch << "," << detail::fmt_double(e.f_loss) << ",";
        if (!std::isnan(e.g_loss)) os << detail::fmt_double(e.g_loss);
        os << "," << detail::fmt_double(e.val_dice) << "," << e.checkpoint_path << "\n";
    }
    if (!os) throw IOError("failed writing: " + path);
}

using ProcedureRecords = std::vector<std::pair<std::string, std::vector<MetricsRecord>>>;

// subject, procedure, dice, assd -- one row per (procedure, subject)
inline void write_records_csv(const std::string& path, const ProcedureRecords& records) {
    std::ofstream os(path);
    if (!os) throw IOError("cannot open for writing: " + path);
    os << "subject,procedure,dice,assd\n";
    for (const auto& [procedure, recs] : records) {
        detail::check_csv_field(procedure);
        for (const auto& r : recs) {
            detail::check_csv_field(r.subject);
            os << r.subject << "," << procedure << "," << detail::fmt_double(r.dice) << ","
               << detail::fmt_double(r.assd) << "\n";
        }
    }
    if (!os) throw IOError("failed writing: " + path);
}

inline ProcedureRecords read_records_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IOError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line) || line != "subject,procedure,dice,assd")
        throw FormatError("bad records header in " + path);
    ProcedureRecords out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 4) throw FormatError("bad records row in " + path);
        MetricsRecord r;
        r.subject = fields[0];
        r.dice = detail::parse_double_field(fields[2], path);
        r.assd = detail::parse_double_field(fields[3], path);
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const auto& p) { return p.first == fields[1]; });
        if (it == out.end()) {
            out.push_back({fields[1], {r}});
        } else {
            it->second.push_back(r);
        }
    }
    return out;
}

struct ReportPaths {
    std::string long_csv;
    std::string summary_csv;
};

// Long-format CSV for spaghetti plotting plus a per-procedure summary with
// mean/std and Dice-based Wilcoxon stars against the baseline procedure.
inline void emit_report(const ProcedureRecords& records, const ReportPaths& paths,
                        const std::string& baseline_name = "baseline") {
    if (records.empty()) throw ContractError("emit_report needs at least one procedure");
    const auto* baseline = [&]() -> const std::vector<MetricsRecord>* {
        for (const auto& [name, recs] : records)
            if (name == baseline_name) return &recs;
        return nullptr;
    }();
    if (!baseline)
        throw ContractError("emit_report: no '" + baseline_name + "' procedure present");

    // every procedure must report the same subject id set
    auto sorted_ids = [](const std::vector<MetricsRecord>& recs) {
        std::vector<std::string> ids;
        for (const auto& r : recs) ids.push_back(r.subject);
        std::sort(ids.begin(), ids.end());
        return ids;
    };
    const auto base_ids = sorted_ids(*baseline);
    for (const auto& [name, recs] : records) {
        if (sorted_ids(recs) != base_ids)
            throw ContractError("procedure '" + name + "' reports a different subject set");
    }

    std::ofstream lcsv(paths.long_csv);
    if (!lcsv) throw IOError("cannot open for writing: " + paths.long_csv);
    lcsv << "subject,procedure,dice,assd\n";
    for (const auto& [name, recs] : records) {
        detail::check_csv_field(name);
        auto sorted = recs;
        std::sort(sorted.begin(), sorted.end(),
                  [](const MetricsRecord& a, const MetricsRecord& b) {
                      return a.subject < b.subject;
                  });
        for (const auto& r : sorted) {
            detail::check_csv_field(r.subject);
            lcsv << r.subject << "," << name << "," << detail::fmt_double(r.dice) << ","
                 << detail::fmt_double(r.assd) << "\n";
        }
    }
    if (!lcsv) throw IOError("failed writing: " + paths.long_csv);

    auto by_id = [](const std::vector<MetricsRecord>& recs) {
        std::map<std::string, const MetricsRecord*> m;
        for (const auto& r : recs) m[r.subject] = &r;
        return m;
    };
    const auto base_map = by_id(*baseline);

    std::ofstream scsv(paths.summary_csv);
    if (!scsv) throw IOError("cannot open for writing: " + paths.summary_csv);
    scsv << "procedure,dice_mean,dice_std,assd_mean,assd_std,stars\n";
    for (const auto& [name, recs] : records) {
        double dmean = 0, amean = 0;
        for (const auto& r : recs) {
            dmean += r.dice;
            amean += r.assd;
        }
        const double n = static_cast<double>(recs.size());
        dmean /= n;
        amean /= n;
        double dvar = 0, avar = 0;
        for (const auto& r : recs) {
            dvar += (r.dice - dmean) * (r.dice - dmean);
            avar += (r.assd - amean) * (r.assd - amean);
        }
        const double denom = recs.size() > 1 ? n - 1.0 : 1.0;
        std::string stars;
        if (name != baseline_name) {
            std::vector<double> x, y;
            for (const auto& id : base_ids) {
                const auto it = std::find_if(recs.begin(), recs.end(),
                                             [&](const MetricsRecord& r) { return r.subject == id; });
                x.push_back(it->dice);
                y.push_back(base_map.at(id)->dice);
            }
            try {
                stars = wilcoxon_signed_rank(x, y).stars;
            } catch (const DegenerateInputError&) {
                stars.clear();
            } catch (const ContractError&) {
                stars.clear(); // fewer than 2 subjects: no test
            }
        }
        scsv << name << "," << detail::fmt_double(dmean) << ","
             << detail::fmt_double(std::sqrt(dvar / denom)) << "," << detail::fmt_double(amean)
             << "," << detail::fmt_double(std::sqrt(avar / denom)) << "," << stars << "\n";
    }
    if (!scsv) throw IOError("failed writing: " + paths.summary_csv);
}

// One row per patch: subject, domain, then the flattened bottleneck vector.
template <typename T>
void export_features_csv(const std::string& path, const Network& net, const ParamSet<T>& params,
                         const std::vector<PatchPair>& patches) {
    std::ofstream os(path);
    if (!os) throw IOError("cannot open for writing: " + path);
    const int64_t len = bottleneck_feature_length(net);
    os << "subject,domain";
    for (int64_t i = 0; i < len; ++i) os << ",f" << i;
    os << "\n";
    Tensor<T> image, target;
    for (const auto& p : patches) {
        detail::check_csv_field(p.subject_id);
        detail::check_csv_field(p.domain);
        detail::patch_to_tensors(p, net.config.in_channels, image, target);
        const Tensor<T> features = extract_bottleneck_features(net, params, image);
        os << p.subject_id << "," << p.domain;
        for (int64_t i = 0; i < features.numel(); ++i)
            os << "," << detail::fmt_double(static_cast<double>(features[i]));
        os << "\n";
    }
    if (!os) throw IOError("failed writing: " + path);
}

} // namespace metaseg
