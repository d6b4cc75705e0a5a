// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "metaseg/errors.hpp"
#include "metaseg/inference.hpp"
#include "metaseg/params.hpp"
#include "metaseg/phantom.hpp"
#include "metaseg/report.hpp"
#include "metaseg/trainer.hpp"
#include "metaseg/unet.hpp"
#include "metaseg/volume.hpp"

namespace metaseg {

// Experiment description shared by all subcommands. Defaults are the
// desk-scale profile (patch 16, channels [4,8,16], 48^3 phantoms); the
// full-scale profile ships as configs/full_scale.cfg.
struct ExperimentConfig {
    std::string manifest;
    std::vector<std::string> sources; // empty = all manifest domains except target
    std::string target;
    std::string procedure = "mldg"; // baseline | mldg | oracle | kshot
    int k = 1;
    TrainConfig train;
    NetworkConfig network;
    PhantomConfig phantom;
    std::string out = "out";
    uint64_t seed = 0;
    std::string checkpoint;            // source checkpoint (kshot, predict, features)
    std::vector<std::string> records;  // input records CSVs (stats)
    int feature_patches = 10;

    ExperimentConfig() {
        network.encoder_channels = {4, 8, 16};
        network.patch_extent = 16;
        train.epochs = 6;
        train.batch_size = 4;
        train.patches_per_subject = 8;
        train.augment_per_subject = 5;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!trim(cur).empty()) out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

inline int64_t parse_int(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    }
}

inline double parse_real(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

// "name=upper blob_count=6 aspect=3.0:4.0 gap=2 fg_mean=0.7 fg_gamma=1.9
//  texture=0.2 noise=0.1"
inline PhantomDomainParams parse_phantom_domain(const std::string& spec) {
    PhantomDomainParams d;
    std::istringstream is(spec);
    std::string tok;
    bool named = false;
    while (is >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw ConfigError("phantom.domain entry '" + tok + "' is not key=value");
        const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
        if (key == "name") {
            d.name = value;
            named = true;
        } else if (key == "blob_count") {
            d.blob_count = static_cast<int>(parse_int(value, key));
        } else if (key == "aspect") {
            const auto colon = value.find(':');
            if (colon == std::string::npos)
                throw ConfigError("phantom domain aspect must be lo:hi");
            d.aspect_lo = parse_real(value.substr(0, colon), key);
            d.aspect_hi = parse_real(value.substr(colon + 1), key);
        } else if (key == "gap") {
            d.gap = static_cast<int>(parse_int(value, key));
        } else if (key == "fg_mean") {
            d.fg_mean = parse_real(value, key);
        } else if (key == "fg_gamma") {
            d.fg_gamma = parse_real(value, key);
        } else if (key == "texture") {
            d.texture_amp = parse_real(value, key);
        } else if (key == "noise") {
            d.noise_sigma = parse_real(value, key);
        } else {
            throw ConfigError("unknown phantom domain key '" + key + "'");
        }
    }
    if (!named) throw ConfigError("phantom.domain entry needs a name");
    return d;
}

} // namespace detail

inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value, bool& domains_reset) {
    using detail::parse_int;
    using detail::parse_real;
    if (key == "manifest") cfg.manifest = value;
    else if (key == "sources") cfg.sources = detail::split_list(value);
    else if (key == "target") cfg.target = value;
    else if (key == "procedure") cfg.procedure = value;
    else if (key == "k") cfg.k = static_cast<int>(parse_int(value, key));
    else if (key == "out") cfg.out = value;
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_int(value, key));
    else if (key == "checkpoint") cfg.checkpoint = value;
    else if (key == "records") cfg.records = detail::split_list(value);
    else if (key == "feature_patches") cfg.feature_patches = static_cast<int>(parse_int(value, key));
    else if (key == "train.alpha") cfg.train.alpha = parse_real(value, key);
    else if (key == "train.beta") cfg.train.beta = parse_real(value, key);
    else if (key == "train.gamma") cfg.train.gamma = parse_real(value, key);
    else if (key == "train.lr") cfg.train.lr = parse_real(value, key);
    else if (key == "train.momentum") cfg.train.momentum = parse_real(value, key);
    else if (key == "train.weight_decay") cfg.train.weight_decay = parse_real(value, key);
    else if (key == "train.epochs") cfg.train.epochs = static_cast<int>(parse_int(value, key));
    else if (key == "train.batch_size") cfg.train.batch_size = static_cast<int>(parse_int(value, key));
    else if (key == "train.meta_mode") cfg.train.meta_mode = parse_meta_mode(value);
    else if (key == "train.seed") cfg.train.seed = static_cast<uint64_t>(parse_int(value, key));
    else if (key == "train.patches_per_subject")
        cfg.train.patches_per_subject = static_cast<int>(parse_int(value, key));
    else if (key == "train.augment_per_subject")
        cfg.train.augment_per_subject = static_cast<int>(parse_int(value, key));
    else if (key == "train.finetune_epochs")
        cfg.train.finetune_epochs = static_cast<int>(parse_int(value, key));
    else if (key == "train.kshot_patches_per_subject")
        cfg.train.kshot_patches_per_subject = static_cast<int>(parse_int(value, key));
    else if (key == "network.in_channels")
        cfg.network.in_channels = static_cast<int>(parse_int(value, key));
    else if (key == "network.out_channels")
        cfg.network.out_channels = static_cast<int>(parse_int(value, key));
    else if (key == "network.encoder_channels") {
        cfg.network.encoder_channels.clear();
        for (const auto& c : detail::split_list(value))
            cfg.network.encoder_channels.push_back(static_cast<int>(parse_int(c, key)));
    } else if (key == "network.patch_extent")
        cfg.network.patch_extent = static_cast<int>(parse_int(value, key));
    else if (key == "network.dropout_p") cfg.network.dropout_p = parse_real(value, key);
    else if (key == "network.groupnorm_groups")
        cfg.network.groupnorm_groups = static_cast<int>(parse_int(value, key));
    else if (key == "phantom.extent") cfg.phantom.extent = static_cast<int>(parse_int(value, key));
    else if (key == "phantom.spacing") {
        const auto parts = detail::split_list(value);
        if (parts.size() != 3) throw ConfigError("phantom.spacing needs three values");
        for (int i = 0; i < 3; ++i)
            cfg.phantom.spacing[static_cast<size_t>(i)] = parse_real(parts[static_cast<size_t>(i)], key);
    } else if (key == "phantom.seed")
        cfg.phantom.seed = static_cast<uint64_t>(parse_int(value, key));
    else if (key == "phantom.subjects_per_domain")
        cfg.phantom.subjects_per_domain = static_cast<int>(parse_int(value, key));
    else if (key == "phantom.val_per_domain")
        cfg.phantom.val_per_domain = static_cast<int>(parse_int(value, key));
    else if (key == "phantom.test_per_domain")
        cfg.phantom.test_per_domain = static_cast<int>(parse_int(value, key));
    else if (key == "phantom.domain") {
        if (!domains_reset) {
            cfg.phantom.domains.clear();
            domains_reset = true;
        }
        cfg.phantom.domains.push_back(detail::parse_phantom_domain(value));
    } else
        throw ConfigError("unknown config key '" + key + "'");
}

// key = value lines, '#' comments; keys mirror ExperimentConfig fields with
// dotted prefixes for the nested configs.
inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IOError("cannot open config: " + path);
    ExperimentConfig cfg;
    bool domains_reset = false;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string trimmed = detail::trim(line);
        if (trimmed.empty()) continue;
        const auto eq = trimmed.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        apply_config_entry(cfg, detail::trim(trimmed.substr(0, eq)),
                           detail::trim(trimmed.substr(eq + 1)), domains_reset);
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// commands; each writes only under cfg.out and throws metaseg errors
// ---------------------------------------------------------------------------

namespace detail {

inline void ensure_out_dir(const std::string& out) {
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec) throw IOError("cannot create output directory: " + out);
}

inline std::vector<std::string> resolve_sources(const DatasetManifest& m,
                                                const ExperimentConfig& cfg) {
    if (cfg.target.empty()) throw ConfigError("target domain is required");
    std::vector<std::string> sources = cfg.sources;
    if (sources.empty()) {
        for (const auto& d : m.domains)
            if (d.name != cfg.target) sources.push_back(d.name);
    }
    for (const auto& s : sources)
        if (s == cfg.target)
            throw ConfigError("target domain must not be among the sources");
    if (sources.empty()) throw ConfigError("no source domains");
    return sources;
}

inline uint64_t run_seed(const ExperimentConfig& cfg, const std::string& component) {
    return seed_fold(cfg.seed, component, cfg.target, cfg.train.seed);
}

} // namespace detail

inline int cmd_synth(const ExperimentConfig& cfg) {
    detail::ensure_out_dir(cfg.out);
    PhantomConfig pc = cfg.phantom;
    pc.seed = seed_fold(cfg.seed, "synth", cfg.phantom.seed);
    generate_phantom_dataset(pc, cfg.out);
    std::cout << (std::filesystem::path(cfg.out) / "manifest.txt").string() << "\n";
    return 0;
}

inline int cmd_train(const ExperimentConfig& cfg) {
    if (cfg.procedure != "baseline" && cfg.procedure != "mldg" && cfg.procedure != "oracle")
        throw ConfigError("cmd_train procedure must be baseline, mldg, or oracle");
    if (cfg.manifest.empty()) throw ConfigError("manifest is required");
    detail::ensure_out_dir(cfg.out);
    const DatasetManifest manifest = read_manifest(cfg.manifest);
    const auto sources = detail::resolve_sources(manifest, cfg);

    Network net = build_graph(cfg.network);
    ParamSet<float> params = init_params<float>(net, seed_fold(cfg.seed, "init"));
    TrainConfig tc = cfg.train;
    tc.seed = detail::run_seed(cfg, "train/" + cfg.procedure);

    const std::string ckpt_name = "checkpoint_best.mckpt";
    const std::string ckpt_path = (std::filesystem::path(cfg.out) / ckpt_name).string();
    const std::function<std::string(const ParamSet<float>&, int)> save_best =
        [&](const ParamSet<float>& p, int) {
            save_checkpoint(ckpt_path, p);
            return ckpt_name; // relative path keeps logs reproducible across out dirs
        };

    TrainResult<float> result;
    if (cfg.procedure == "oracle") {
        Domain target_train = load_domain_role(manifest, cfg.target, Role::train);
        auto validation = load_subjects(manifest, cfg.target, Role::validation);
        result = oracle_train(target_train, net, std::move(params), tc, validation, save_best);
    } else {
        std::vector<Domain> domains;
        std::vector<Subject> validation;
        for (const auto& s : sources) {
            domains.push_back(load_domain_role(manifest, s, Role::train));
            for (auto& v : load_subjects(manifest, s, Role::validation))
                validation.push_back(std::move(v));
        }
        if (cfg.procedure == "mldg")
            result = mldg_train(domains, net, std::move(params), tc, validation, save_best);
        else
            result = baseline_train(domains, net, std::move(params), tc, validation, save_best);
    }
    write_train_log_csv((std::filesystem::path(cfg.out) / "train_log.csv").string(), result.log);
    std::cout << cfg.procedure << " best validation dice "
              << detail::fmt_double(result.best_val_dice) << " at epoch " << result.best_epoch
              << ", checkpoint " << ckpt_path << "\n";
    return 0;
}

inline int cmd_finetune(const ExperimentConfig& cfg) {
    if (cfg.checkpoint.empty())
        throw ConfigError("kshot requires a source checkpoint path");
    if (cfg.k < 1) throw ConfigError("k must be >= 1");
    if (cfg.manifest.empty()) throw ConfigError("manifest is required");
    detail::ensure_out_dir(cfg.out);
    const DatasetManifest manifest = read_manifest(cfg.manifest);

    auto pool = load_subjects(manifest, cfg.target, Role::train);
    if (static_cast<size_t>(cfg.k) > pool.size())
        throw ConfigError("k = " + std::to_string(cfg.k) + " exceeds the " +
                          std::to_string(pool.size()) + " available target training subjects");
    // seeded selection without replacement
    Rng rng(seed_fold(cfg.seed, "kshot_select", cfg.target, cfg.train.seed));
    std::vector<Subject> chosen;
    std::vector<int64_t> idx(pool.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
    for (int i = 0; i < cfg.k; ++i) {
        const int64_t j = rng.uniform_int(i, static_cast<int64_t>(idx.size()) - 1);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        chosen.push_back(pool[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
    }

    Network net = build_graph(cfg.network);
    ParamSet<float> params = load_checkpoint<float>(cfg.checkpoint);
    TrainConfig tc = cfg.train;
    tc.seed = detail::run_seed(cfg, "kshot");
    auto result = kshot_finetune(std::move(params), chosen, net, tc);

    const std::string out_ckpt =
        (std::filesystem::path(cfg.out) / "checkpoint_kshot.mckpt").string();
    save_checkpoint(out_ckpt, result.params);
    std::ofstream log((std::filesystem::path(cfg.out) / "finetune_log.csv").string());
    log << "epoch,loss\n";
    for (size_t i = 0; i < result.epoch_losses.size(); ++i)
        log << (i + 1) << "," << detail::fmt_double(result.epoch_losses[i]) << "\n";
    std::cout << "kshot k=" << cfg.k << " fine-tuned on " << result.patches_used
              << " patches, checkpoint " << out_ckpt << "\n";
    return 0;
}

inline int cmd_predict(const ExperimentConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("predict requires a checkpoint path");
    if (cfg.manifest.empty()) throw ConfigError("manifest is required");
    detail::ensure_out_dir(cfg.out);
    const DatasetManifest manifest = read_manifest(cfg.manifest);
    Network net = build_graph(cfg.network);
    ParamSet<float> params = load_checkpoint<float>(cfg.checkpoint);

    const int stride = std::max(1, cfg.network.patch_extent / 2);
    int count = 0;
    for (const auto& ms : manifest.domain(cfg.target).subjects) {
        if (ms.role != Role::test) continue;
        const Subject s = load_subject(manifest, ms);
        const Volume norm = standardize_normalize(s.volume);
        LabelMap pred =
            sliding_window_predict(net, params, norm, cfg.network.patch_extent, stride);
        pred = largest_connected_component(pred);
        write_mvol((std::filesystem::path(cfg.out) / ("pred_" + s.id + ".mvol")).string(), pred);
        ++count;
    }
    if (count == 0) throw DataError("target domain has no test subjects");
    std::cout << "predicted " << count << " test subjects of domain " << cfg.target << "\n";
    return 0;
}

inline int cmd_evaluate(const ExperimentConfig& cfg) {
    if (cfg.manifest.empty()) throw ConfigError("manifest is required");
    detail::ensure_out_dir(cfg.out);
    const DatasetManifest manifest = read_manifest(cfg.manifest);
    std::vector<MetricsRecord> records;
    for (const auto& ms : manifest.domain(cfg.target).subjects) {
        if (ms.role != Role::test) continue;
        const Subject s = load_subject(manifest, ms);
        const std::string pred_path =
            (std::filesystem::path(cfg.out) / ("pred_" + s.id + ".mvol")).string();
        const LabelMap pred = read_mvol_label(pred_path);
        MetricsRecord r;
        r.subject = s.id;
        r.dice = dice(pred, s.label);
        r.assd = assd(pred, s.label, s.label.spacing);
        records.push_back(std::move(r));
    }
    if (records.empty()) throw DataError("target domain has no test subjects");
    const std::string out_csv =
        (std::filesystem::path(cfg.out) / ("records_" + cfg.procedure + ".csv")).string();
    write_records_csv(out_csv, {{cfg.procedure, records}});
    std::cout << "wrote " << out_csv << "\n";
    return 0;
}

inline int cmd_stats(const ExperimentConfig& cfg) {
    if (cfg.records.size() < 2)
        throw ConfigError("stats needs at least two records CSVs (baseline + others)");
    detail::ensure_out_dir(cfg.out);
    ProcedureRecords merged;
    for (const auto& path : cfg.records)
        for (auto& [name, recs] : read_records_csv(path)) {
            auto it = std::find_if(merged.begin(), merged.end(),
                                   [&](const auto& p) { return p.first == name; });
            if (it == merged.end())
                merged.push_back({name, std::move(recs)});
            else
                it->second.insert(it->second.end(), recs.begin(), recs.end());
        }
    ReportPaths paths{(std::filesystem::path(cfg.out) / "report_long.csv").string(),
                      (std::filesystem::path(cfg.out) / "report_summary.csv").string()};
    emit_report(merged, paths);
    std::cout << "wrote " << paths.long_csv << " and " << paths.summary_csv << "\n";
    return 0;
}

inline int cmd_export_features(const ExperimentConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("export-features requires a checkpoint path");
    if (cfg.manifest.empty()) throw ConfigError("manifest is required");
    detail::ensure_out_dir(cfg.out);
    const DatasetManifest manifest = read_manifest(cfg.manifest);
    Network net = build_graph(cfg.network);
    ParamSet<float> params = load_checkpoint<float>(cfg.checkpoint);

    std::vector<PatchPair> patches;
    for (const auto& d : manifest.domains)
        for (const auto& ms : d.subjects) {
            Subject s = load_subject(manifest, ms);
            s.volume = standardize_normalize(s.volume);
            Rng rng(seed_fold(cfg.seed, "features", s.id));
            auto ps = sample_patches(s, cfg.feature_patches, cfg.network.patch_extent, rng);
            for (auto& p : ps) {
                p.domain = d.name;
                patches.push_back(std::move(p));
            }
        }
    const std::string path = (std::filesystem::path(cfg.out) / "features.csv").string();
    export_features_csv(path, net, params, patches);
    std::cout << "wrote " << path << " (" << patches.size() << " rows)\n";
    return 0;
}

// Leave-one-domain-out sweep: trains, predicts, and evaluates the configured
// procedure with every manifest domain held out in turn, then merges the
// per-target records.
inline int cmd_sweep(const ExperimentConfig& cfg) {
    if (cfg.manifest.empty()) throw ConfigError("manifest is required");
    detail::ensure_out_dir(cfg.out);
    const DatasetManifest manifest = read_manifest(cfg.manifest);
    ProcedureRecords merged;
    merged.push_back({cfg.procedure, {}});
    for (const auto& d : manifest.domains) {
        ExperimentConfig sub = cfg;
        sub.target = d.name;
        sub.sources.clear();
        sub.out = (std::filesystem::path(cfg.out) / d.name).string();
        cmd_train(sub);
        sub.checkpoint =
            (std::filesystem::path(sub.out) / "checkpoint_best.mckpt").string();
        cmd_predict(sub);
        cmd_evaluate(sub);
        for (auto& [name, recs] : read_records_csv(
                 (std::filesystem::path(sub.out) / ("records_" + cfg.procedure + ".csv"))
                     .string()))
            if (name == cfg.procedure)
                merged[0].second.insert(merged[0].second.end(), recs.begin(), recs.end());
    }
    const std::string out_csv =
        (std::filesystem::path(cfg.out) / ("records_" + cfg.procedure + ".csv")).string();
    write_records_csv(out_csv, merged);
    std::cout << "sweep complete, merged records in " << out_csv << "\n";
    return 0;
}

} // namespace metaseg
