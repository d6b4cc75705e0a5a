// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metaseg/errors.hpp"
#include "metaseg/rng.hpp"
#include "metaseg/volume.hpp"

namespace metaseg {

// One synthetic domain: a vertical column of ellipsoidal blobs (vertebra
// analogue) separated by gap voxels (disc analogue), with domain-specific
// shape and intensity statistics.
struct PhantomDomainParams {
    std::string name;
    int blob_count = 4;
    double aspect_lo = 2.0; // rx/rz, width over height
    double aspect_hi = 2.8;
    int gap = 3;
    double fg_mean = 0.8;
    double fg_gamma = 1.0; // rendered foreground value is fg_mean^fg_gamma
    double texture_amp = 0.1;
    double noise_sigma = 0.05;
};

struct PhantomConfig {
    int extent = 48;
    std::array<double, 3> spacing = {1.0, 1.0, 1.0};
    uint64_t seed = 1;
    int subjects_per_domain = 6;
    int val_per_domain = 1;
    int test_per_domain = 1;
    std::vector<PhantomDomainParams> domains;

    static std::vector<PhantomDomainParams> default_domains() {
        return {
            {"lumbar", 3, 1.7, 2.1, 4, 0.90, 1.0, 0.12, 0.09},
            {"lower_thoracic", 4, 2.2, 2.7, 3, 0.85, 2.4, 0.06, 0.05},
            {"middle_thoracic", 4, 2.5, 3.0, 3, 0.80, 1.6, 0.16, 0.03},
            {"upper_thoracic", 5, 2.9, 3.5, 2, 0.75, 2.2, 0.09, 0.10},
        };
    }

    PhantomConfig() : domains(default_domains()) {}

    void validate() const {
        if (extent < 16) throw ConfigError("phantom extent must be >= 16");
        if (domains.empty()) throw ConfigError("phantom needs at least one domain");
        if (subjects_per_domain < 1) throw ConfigError("subjects_per_domain must be >= 1");
        if (val_per_domain < 0 || test_per_domain < 0 ||
            val_per_domain + test_per_domain >= subjects_per_domain)
            throw ConfigError("role split leaves no training subjects");
        for (const auto& d : domains) {
            if (d.blob_count < 1) throw ConfigError("blob_count must be >= 1");
            if (d.noise_sigma < 0) throw ConfigError("noise_sigma must be >= 0");
            if (!(d.aspect_lo > 0 && d.aspect_hi >= d.aspect_lo))
                throw ConfigError("bad aspect ratio range");
            if (d.gap < 0) throw ConfigError("gap must be >= 0");
        }
    }
};

namespace detail {

struct SmoothField {
    // three seeded cosine plane waves; smooth low-frequency texture
    double kx[3], ky[3], kz[3], phase[3];

    explicit SmoothField(Rng& rng) {
        for (int j = 0; j < 3; ++j) {
            kx[j] = rng.uniform(0.5, 2.5);
            ky[j] = rng.uniform(0.5, 2.5);
            kz[j] = rng.uniform(0.5, 2.5);
            phase[j] = rng.uniform(0.0, 6.283185307179586);
        }
    }

    double at(double x, double y, double z, double extent) const {
        const double tau = 6.283185307179586 / extent;
        double v = 0;
        for (int j = 0; j < 3; ++j)
            v += std::cos(tau * (kx[j] * x + ky[j] * y + kz[j] * z) + phase[j]);
        return v / 3.0;
    }
};

} // namespace detail

// Renders one subject: labels are the exact blob masks; the noiseless
// foreground is the constant fg_mean^fg_gamma over a 0.25 background base.
// Foreground voxels carry attenuated noise (homogeneous-interior cue).
inline Subject generate_phantom_subject(const PhantomDomainParams& d, int extent,
                                        const std::array<double, 3>& spacing,
                                        const std::string& subject_id, Rng& rng) {
    constexpr double kBgBase = 0.25;
    constexpr double kFgNoiseFactor = 0.35;
    constexpr int kMarginZ = 2;
    const double usable =
        extent - 2.0 * kMarginZ - static_cast<double>(d.blob_count - 1) * d.gap;
    const double slot = usable / d.blob_count;
    if (slot < 3.0)
        throw ConfigError("phantom domain '" + d.name + "': " + std::to_string(d.blob_count) +
                          " blobs with gap " + std::to_string(d.gap) +
                          " do not fit in extent " + std::to_string(extent));

    Subject s;
    s.id = subject_id;
    s.volume.extents = {extent, extent, extent};
    s.volume.spacing = spacing;
    s.volume.voxels.assign(static_cast<size_t>(s.volume.numel()), 0.0f);
    s.label.extents = s.volume.extents;
    s.label.spacing = spacing;
    s.label.voxels.assign(static_cast<size_t>(s.label.numel()), 0);

    const double fg_value = std::pow(d.fg_mean, d.fg_gamma);
    detail::SmoothField field(rng);
    const double rx_cap = extent / 2.0 - 4.0;

    struct Blob {
        double cx, cy, cz, rx, ry, rz;
    };
    // consecutive beads overlap slightly so the rendered column is one
    // connected structure (connected-component post-processing then only
    // strips detached false positives, never true beads)
    constexpr double kBeadOverlap = 1.5;
    std::vector<Blob> blobs;
    for (int b = 0; b < d.blob_count; ++b) {
        Blob blob{};
        const double aspect = rng.uniform(d.aspect_lo, d.aspect_hi);
        blob.rz = (slot + d.gap) / 2.0 + kBeadOverlap;
        blob.rx = std::min(aspect * slot / 2.0, rx_cap);
        blob.ry = blob.rx * rng.uniform(0.82, 1.0);
        blob.cx = extent / 2.0 + rng.uniform(-2.0, 2.0);
        blob.cy = extent / 2.0 + rng.uniform(-2.0, 2.0);
        blob.cz = kMarginZ + slot / 2.0 + b * (slot + d.gap) + rng.uniform(-0.8, 0.8);
        if (blob.rz < 1.0 || blob.rx < 1.0)
            throw ConfigError("phantom domain '" + d.name + "': blob radii degenerate");
        blobs.push_back(blob);
    }

    for (int64_t z = 0; z < extent; ++z)
        for (int64_t y = 0; y < extent; ++y)
            for (int64_t x = 0; x < extent; ++x) {
                bool fg = false;
                for (const Blob& blob : blobs) {
                    const double dx = (x - blob.cx) / blob.rx;
                    const double dy = (y - blob.cy) / blob.ry;
                    const double dz = (z - blob.cz) / blob.rz;
                    if (dx * dx + dy * dy + dz * dz <= 1.0) {
                        fg = true;
                        break;
                    }
                }
                if (fg) s.label.at(x, y, z) = 1;
                double v = fg ? fg_value : kBgBase;
                if (d.texture_amp > 0)
                    v += d.texture_amp * field.at(static_cast<double>(x), static_cast<double>(y),
                                                  static_cast<double>(z), extent);
                if (d.noise_sigma > 0)
                    v += d.noise_sigma * (fg ? kFgNoiseFactor : 1.0) * rng.normal();
                s.volume.at(x, y, z) = static_cast<float>(v);
            }
    return s;
}

inline std::string phantom_subject_id(const std::string& domain, int index) {
    return domain + "_s" + std::to_string(index);
}

inline Role phantom_role(const PhantomConfig& cfg, int index) {
    const int train_n = cfg.subjects_per_domain - cfg.val_per_domain - cfg.test_per_domain;
    if (index < train_n) return Role::train;
    if (index < train_n + cfg.val_per_domain) return Role::validation;
    return Role::test;
}

// In-memory generation; file emission below uses the same seed derivation,
// so both routes produce identical subjects.
inline Subject generate_phantom_subject(const PhantomConfig& cfg, const PhantomDomainParams& d,
                                        int index) {
    Rng rng(seed_fold(cfg.seed, "phantom", d.name, static_cast<uint64_t>(index)));
    return generate_phantom_subject(d, cfg.extent, cfg.spacing, phantom_subject_id(d.name, index),
                                    rng);
}

inline std::vector<Domain> generate_phantom_domains(const PhantomConfig& cfg) {
    cfg.validate();
    std::vector<Domain> out;
    for (const auto& d : cfg.domains) {
        Domain dom;
        dom.name = d.name;
        for (int i = 0; i < cfg.subjects_per_domain; ++i)
            dom.subjects.push_back(generate_phantom_subject(cfg, d, i));
        out.push_back(std::move(dom));
    }
    return out;
}

// Renders every subject to MVOL files under out_dir and writes manifest.txt;
// returns the manifest. Deterministic under cfg.seed.
inline DatasetManifest generate_phantom_dataset(const PhantomConfig& cfg,
                                                const std::string& out_dir) {
    cfg.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IOError("cannot create output directory: " + out_dir);
    DatasetManifest m;
    m.base_dir = out_dir;
    for (const auto& d : cfg.domains) {
        ManifestDomain md;
        md.name = d.name;
        for (int i = 0; i < cfg.subjects_per_domain; ++i) {
            Subject s = generate_phantom_subject(cfg, d, i);
            ManifestSubject ms;
            ms.id = s.id;
            ms.role = phantom_role(cfg, i);
            ms.volume_path = s.id + ".mvol";
            ms.label_path = s.id + "_label.mvol";
            write_mvol((fs::path(out_dir) / ms.volume_path).string(), s.volume);
            write_mvol((fs::path(out_dir) / ms.label_path).string(), s.label);
            md.subjects.push_back(std::move(ms));
        }
        m.domains.push_back(std::move(md));
    }
    write_manifest((fs::path(out_dir) / "manifest.txt").string(), m);
    return m;
}

} // namespace metaseg
