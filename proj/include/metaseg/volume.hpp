// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "metaseg/errors.hpp"
#include "metaseg/rng.hpp"

namespace metaseg {

// Scalar intensity grid, row-major with x fastest, spacing in mm/voxel.
struct Volume {
    std::array<int64_t, 3> extents{};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<float> voxels;

    int64_t numel() const { return extents[0] * extents[1] * extents[2]; }
    int64_t index(int64_t x, int64_t y, int64_t z) const {
        return (z * extents[1] + y) * extents[0] + x;
    }
    float& at(int64_t x, int64_t y, int64_t z) { return voxels[static_cast<size_t>(index(x, y, z))]; }
    float at(int64_t x, int64_t y, int64_t z) const {
        return voxels[static_cast<size_t>(index(x, y, z))];
    }
};

// Binary mask congruent with its Volume: 0 = background, 1 = foreground.
struct LabelMap {
    std::array<int64_t, 3> extents{};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<uint8_t> voxels;

    int64_t numel() const { return extents[0] * extents[1] * extents[2]; }
    int64_t index(int64_t x, int64_t y, int64_t z) const {
        return (z * extents[1] + y) * extents[0] + x;
    }
    uint8_t& at(int64_t x, int64_t y, int64_t z) {
        return voxels[static_cast<size_t>(index(x, y, z))];
    }
    uint8_t at(int64_t x, int64_t y, int64_t z) const {
        return voxels[static_cast<size_t>(index(x, y, z))];
    }
    int64_t foreground_count() const {
        int64_t n = 0;
        for (uint8_t v : voxels) n += v;
        return n;
    }
};

struct Subject {
    std::string id;
    Volume volume;
    LabelMap label;
};

struct Domain {
    std::string name;
    std::vector<Subject> subjects;
};

enum class Role { train, validation, test };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::train: return "train";
        case Role::validation: return "validation";
        case Role::test: return "test";
    }
    return "?";
}

inline Role parse_role(const std::string& s) {
    if (s == "train") return Role::train;
    if (s == "validation") return Role::validation;
    if (s == "test") return Role::test;
    throw FormatError("unknown role tag '" + s + "'");
}

struct ManifestSubject {
    std::string id;
    Role role{};
    std::string volume_path;
    std::string label_path;
};

struct ManifestDomain {
    std::string name;
    std::vector<ManifestSubject> subjects;
};

struct DatasetManifest {
    std::string base_dir;
    std::vector<ManifestDomain> domains;

    const ManifestDomain& domain(const std::string& name) const {
        for (const auto& d : domains)
            if (d.name == name) return d;
        throw DataError("manifest has no domain '" + name + "'");
    }
};

// ---------------------------------------------------------------------------
// MVOL format: magic "MVOL1\0" (6 bytes), u8 kind (0 = intensity f32,
// 1 = label u8), 3 x u32 LE extents (x,y,z), 3 x f32 LE spacing, raw voxel
// buffer with x fastest.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kMvolMagic[6] = {'M', 'V', 'O', 'L', '1', '\0'};

inline void mvol_write_header(std::ostream& os, uint8_t kind,
                              const std::array<int64_t, 3>& extents,
                              const std::array<double, 3>& spacing) {
    os.write(kMvolMagic, sizeof(kMvolMagic));
    os.put(static_cast<char>(kind));
    for (int64_t e : extents) {
        const uint32_t v = static_cast<uint32_t>(e);
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        os.write(reinterpret_cast<const char*>(b), 4);
    }
    for (double s : spacing) {
        const float f = static_cast<float>(s);
        os.write(reinterpret_cast<const char*>(&f), 4);
    }
}

struct MvolHeader {
    uint8_t kind;
    std::array<int64_t, 3> extents;
    std::array<double, 3> spacing;
};

inline MvolHeader mvol_read_header(std::istream& is, const std::string& path) {
    char magic[sizeof(kMvolMagic)];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMvolMagic, sizeof(magic)) != 0)
        throw FormatError("bad MVOL magic: " + path);
    MvolHeader h{};
    int kind = is.get();
    if (kind < 0) throw FormatError("truncated MVOL header: " + path);
    if (kind != 0 && kind != 1) throw FormatError("unknown MVOL kind byte: " + path);
    h.kind = static_cast<uint8_t>(kind);
    for (auto& e : h.extents) {
        unsigned char b[4];
        if (!is.read(reinterpret_cast<char*>(b), 4))
            throw FormatError("truncated MVOL header: " + path);
        const uint32_t v = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                           (static_cast<uint32_t>(b[2]) << 16) |
                           (static_cast<uint32_t>(b[3]) << 24);
        if (v == 0) throw FormatError("zero extent in MVOL header: " + path);
        e = v;
    }
    for (auto& s : h.spacing) {
        float f;
        if (!is.read(reinterpret_cast<char*>(&f), 4))
            throw FormatError("truncated MVOL header: " + path);
        if (!(f > 0)) throw ContractError("non-positive spacing in MVOL: " + path);
        s = f;
    }
    return h;
}

} // namespace detail

inline void write_mvol(const std::string& path, const Volume& v) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IOError("cannot open for writing: " + path);
    detail::mvol_write_header(os, 0, v.extents, v.spacing);
    os.write(reinterpret_cast<const char*>(v.voxels.data()),
             static_cast<std::streamsize>(v.voxels.size() * sizeof(float)));
    if (!os) throw IOError("failed writing: " + path);
}

inline void write_mvol(const std::string& path, const LabelMap& l) {
    for (uint8_t v : l.voxels)
        if (v > 1) throw ContractError("label map contains value > 1");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IOError("cannot open for writing: " + path);
    detail::mvol_write_header(os, 1, l.extents, l.spacing);
    os.write(reinterpret_cast<const char*>(l.voxels.data()),
             static_cast<std::streamsize>(l.voxels.size()));
    if (!os) throw IOError("failed writing: " + path);
}

inline std::variant<Volume, LabelMap> read_mvol(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IOError("cannot open: " + path);
    const auto h = detail::mvol_read_header(is, path);
    const int64_t n = h.extents[0] * h.extents[1] * h.extents[2];
    if (h.kind == 0) {
        Volume v;
        v.extents = h.extents;
        v.spacing = h.spacing;
        v.voxels.resize(static_cast<size_t>(n));
        if (!is.read(reinterpret_cast<char*>(v.voxels.data()),
                     static_cast<std::streamsize>(n * sizeof(float))))
            throw FormatError("truncated MVOL data: " + path);
        for (float x : v.voxels)
            if (!std::isfinite(x)) throw ContractError("non-finite voxel in " + path);
        return v;
    }
    LabelMap l;
    l.extents = h.extents;
    l.spacing = h.spacing;
    l.voxels.resize(static_cast<size_t>(n));
    if (!is.read(reinterpret_cast<char*>(l.voxels.data()), static_cast<std::streamsize>(n)))
        throw FormatError("truncated MVOL data: " + path);
    for (uint8_t v : l.voxels)
        if (v > 1) throw ContractError("label value out of {0,1} in " + path);
    return l;
}

inline Volume read_mvol_volume(const std::string& path) {
    auto v = read_mvol(path);
    if (!std::holds_alternative<Volume>(v))
        throw ContractError("expected an intensity MVOL file: " + path);
    return std::get<Volume>(std::move(v));
}

inline LabelMap read_mvol_label(const std::string& path) {
    auto v = read_mvol(path);
    if (!std::holds_alternative<LabelMap>(v))
        throw ContractError("expected a label MVOL file: " + path);
    return std::get<LabelMap>(std::move(v));
}

// ---------------------------------------------------------------------------
// Manifest: line-oriented text, '#' comments; "domain <name>" opens a domain,
// "subject <id> <role> <volume_path> <label_path>" adds one. Paths are
// relative to the manifest location.
// ---------------------------------------------------------------------------

inline void write_manifest(const std::string& path, const DatasetManifest& m) {
    std::ofstream os(path);
    if (!os) throw IOError("cannot open for writing: " + path);
    os << "# metaseg dataset manifest\n";
    for (const auto& d : m.domains) {
        os << "domain " << d.name << "\n";
        for (const auto& s : d.subjects)
            os << "subject " << s.id << " " << role_name(s.role) << " " << s.volume_path << " "
               << s.label_path << "\n";
    }
    if (!os) throw IOError("failed writing: " + path);
}

inline DatasetManifest read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IOError("cannot open: " + path);
    DatasetManifest m;
    m.base_dir = std::filesystem::path(path).parent_path().string();
    std::string line;
    std::vector<std::string> seen_ids;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string word;
        if (!(ls >> word)) continue;
        if (word == "domain") {
            std::string name;
            if (!(ls >> name))
                throw FormatError(path + ":" + std::to_string(lineno) + ": missing domain name");
            for (const auto& d : m.domains)
                if (d.name == name)
                    throw DataError("duplicate domain '" + name + "' in manifest");
            m.domains.push_back({name, {}});
        } else if (word == "subject") {
            if (m.domains.empty())
                throw FormatError(path + ":" + std::to_string(lineno) +
                                  ": subject before any domain");
            ManifestSubject s;
            std::string role;
            if (!(ls >> s.id >> role >> s.volume_path >> s.label_path))
                throw FormatError(path + ":" + std::to_string(lineno) + ": malformed subject line");
            s.role = parse_role(role);
            if (std::find(seen_ids.begin(), seen_ids.end(), s.id) != seen_ids.end())
                throw DataError("duplicate subject id '" + s.id + "' in manifest");
            seen_ids.push_back(s.id);
            m.domains.back().subjects.push_back(std::move(s));
        } else {
            throw FormatError(path + ":" + std::to_string(lineno) + ": unknown directive '" +
                              word + "'");
        }
    }
    return m;
}

inline Subject load_subject(const DatasetManifest& m, const ManifestSubject& ms) {
    const auto base = std::filesystem::path(m.base_dir);
    Subject s;
    s.id = ms.id;
    s.volume = read_mvol_volume((base / ms.volume_path).string());
    s.label = read_mvol_label((base / ms.label_path).string());
    if (s.volume.extents != s.label.extents)
        throw DataError("subject '" + s.id + "': volume/label extents differ");
    return s;
}

inline std::vector<Subject> load_subjects(const DatasetManifest& m, const std::string& domain,
                                          Role role) {
    std::vector<Subject> out;
    for (const auto& ms : m.domain(domain).subjects)
        if (ms.role == role) out.push_back(load_subject(m, ms));
    return out;
}

inline Domain load_domain_role(const DatasetManifest& m, const std::string& domain, Role role) {
    return Domain{domain, load_subjects(m, domain, role)};
}

// ---------------------------------------------------------------------------
// Preprocessing and patch sampling
// ---------------------------------------------------------------------------

// z-score over all voxels, then affine min-max rescale to [0,1].
inline Volume standardize_normalize(const Volume& v) {
    float lo = v.voxels.empty() ? 0.0f : v.voxels[0];
    float hi = lo;
    double sum = 0;
    for (float x : v.voxels) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
        sum += x;
    }
    if (!(hi > lo)) throw DegenerateInputError("volume has a single distinct value");
    const double mean = sum / static_cast<double>(v.voxels.size());
    double var = 0;
    for (float x : v.voxels) {
        const double d = x - mean;
        var += d * d;
    }
    var /= static_cast<double>(v.voxels.size());
    const double inv_std = 1.0 / std::sqrt(var);
    const double zlo = (lo - mean) * inv_std;
    const double zhi = (hi - mean) * inv_std;
    Volume out;
    out.extents = v.extents;
    out.spacing = v.spacing;
    out.voxels.resize(v.voxels.size());
    const double scale = 1.0 / (zhi - zlo);
    for (size_t i = 0; i < v.voxels.size(); ++i) {
        const double z = (v.voxels[i] - mean) * inv_std;
        out.voxels[i] = static_cast<float>((z - zlo) * scale);
    }
    return out;
}

// Image/label patch pair plus provenance for audit trails.
struct PatchPair {
    int extent = 0;
    std::vector<float> image;
    std::vector<uint8_t> label;
    std::string subject_id;
    std::string domain;

    int64_t foreground_count() const {
        int64_t n = 0;
        for (uint8_t v : label) n += v;
        return n;
    }
};

// Corners drawn uniformly over valid positions; exactly `count` patches.
inline std::vector<PatchPair> sample_patches(const Subject& s, int count, int extent, Rng& rng) {
    for (int a = 0; a < 3; ++a)
        if (s.volume.extents[static_cast<size_t>(a)] < extent)
            throw ConfigError("subject '" + s.id + "' smaller than patch extent on axis " +
                              std::to_string(a));
    std::vector<PatchPair> out;
    out.reserve(static_cast<size_t>(count));
    const int64_t n3 = static_cast<int64_t>(extent) * extent * extent;
    for (int i = 0; i < count; ++i) {
        const int64_t cx = rng.uniform_int(0, s.volume.extents[0] - extent);
        const int64_t cy = rng.uniform_int(0, s.volume.extents[1] - extent);
        const int64_t cz = rng.uniform_int(0, s.volume.extents[2] - extent);
        PatchPair p;
        p.extent = extent;
        p.subject_id = s.id;
        p.image.resize(static_cast<size_t>(n3));
        p.label.resize(static_cast<size_t>(n3));
        int64_t w = 0;
        for (int64_t z = 0; z < extent; ++z)
            for (int64_t y = 0; y < extent; ++y)
                for (int64_t x = 0; x < extent; ++x, ++w) {
                    p.image[static_cast<size_t>(w)] = s.volume.at(cx + x, cy + y, cz + z);
                    p.label[static_cast<size_t>(w)] = s.label.at(cx + x, cy + y, cz + z);
                }
        out.push_back(std::move(p));
    }
    return out;
}

namespace detail {

// 90-degree rotation within the (a,b) axis plane of a cubic grid, repeated
// k times, then per-axis mirror flips. Coordinates are (x,y,z) = axes 0,1,2.
struct PatchTransform {
    int axis_a = 0, axis_b = 1;
    int quarter_turns = 1;
    bool mirror[3] = {false, false, false};

    void map(int n, int64_t x, int64_t y, int64_t z, int64_t& sx, int64_t& sy,
             int64_t& sz) const {
        int64_t c[3] = {x, y, z};
        // invert mirrors (self-inverse), then invert rotation by rotating
        // the remaining 4-k quarter turns
        for (int a = 0; a < 3; ++a)
            if (mirror[a]) c[a] = n - 1 - c[a];
        const int inv = (4 - (quarter_turns % 4)) % 4;
        for (int t = 0; t < inv; ++t) {
            const int64_t ia = c[axis_a], ib = c[axis_b];
            c[axis_a] = ib;
            c[axis_b] = n - 1 - ia;
        }
        sx = c[0];
        sy = c[1];
        sz = c[2];
    }
};

template <typename T>
std::vector<T> apply_transform(const std::vector<T>& src, int n, const PatchTransform& t) {
    std::vector<T> dst(src.size());
    int64_t w = 0;
    for (int64_t z = 0; z < n; ++z)
        for (int64_t y = 0; y < n; ++y)
            for (int64_t x = 0; x < n; ++x, ++w) {
                int64_t sx, sy, sz;
                t.map(n, x, y, z, sx, sy, sz);
                dst[static_cast<size_t>(w)] =
                    src[static_cast<size_t>((sz * n + sy) * n + sx)];
            }
    return dst;
}

} // namespace detail

// Replaces a seeded subset of `augment_count` patches in place with a random
// axis-aligned 90-degree rotation followed by independent per-axis mirrors,
// applied identically to image and label.
inline void augment(std::vector<PatchPair>& patches, int augment_count, Rng& rng) {
    if (augment_count < 0 || augment_count > static_cast<int>(patches.size()))
        throw ContractError("augment_count exceeds patch list length");
    if (augment_count == 0) return;
    std::vector<int64_t> idx(patches.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
    for (int i = 0; i < augment_count; ++i) {
        const int64_t j = rng.uniform_int(i, static_cast<int64_t>(idx.size()) - 1);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    static constexpr int kAxisPairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (int i = 0; i < augment_count; ++i) {
        PatchPair& p = patches[static_cast<size_t>(idx[static_cast<size_t>(i)])];
        detail::PatchTransform t;
        const int pair = static_cast<int>(rng.uniform_int(0, 2));
        t.axis_a = kAxisPairs[pair][0];
        t.axis_b = kAxisPairs[pair][1];
        t.quarter_turns = static_cast<int>(rng.uniform_int(1, 3));
        for (int a = 0; a < 3; ++a) t.mirror[a] = rng.coin();
        p.image = detail::apply_transform(p.image, p.extent, t);
        p.label = detail::apply_transform(p.label, p.extent, t);
    }
}

} // namespace metaseg
