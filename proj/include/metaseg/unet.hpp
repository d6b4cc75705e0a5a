// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "metaseg/autodiff.hpp"
#include "metaseg/errors.hpp"
#include "metaseg/graph.hpp"
#include "metaseg/params.hpp"
#include "metaseg/rng.hpp"

namespace metaseg {

// 3D U-Net style encoder/decoder. The encoder list doubles at every level;
// the last encoder block is the bottleneck. The first decoder block carries
// a single conv-gn-relu set, deeper layout mirrors the encoder.
struct NetworkConfig {
    int in_channels = 1;
    int out_channels = 2;
    std::vector<int> encoder_channels = {16, 32, 64, 128, 256};
    int patch_extent = 64;
    double dropout_p = 0.3;
    int groupnorm_groups = 8;

    int depth() const { return static_cast<int>(encoder_channels.size()); }

    void validate() const {
        if (depth() < 2) throw ConfigError("encoder depth must be >= 2");
        if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
        if (out_channels != 2) throw ConfigError("network is binary: out_channels must be 2");
        for (size_t i = 0; i + 1 < encoder_channels.size(); ++i)
            if (encoder_channels[i + 1] != 2 * encoder_channels[i])
                throw ConfigError("encoder channels must increase strictly by factor 2");
        if (encoder_channels[0] < 1) throw ConfigError("encoder channels must be positive");
        const int down = 1 << (depth() - 1);
        if (patch_extent < down || patch_extent % down != 0)
            throw ConfigError("patch_extent " + std::to_string(patch_extent) +
                              " must be divisible by 2^(depth-1) = " + std::to_string(down));
        if (!(dropout_p >= 0.0 && dropout_p < 1.0))
            throw ConfigError("dropout_p must be in [0,1)");
        if (groupnorm_groups < 1) throw ConfigError("groupnorm_groups must be >= 1");
        for (int c : encoder_channels) {
            const int g = std::min(groupnorm_groups, c);
            if (c % g != 0)
                throw ConfigError("groupnorm groups " + std::to_string(g) +
                                  " do not divide channel count " + std::to_string(c));
        }
    }
};

struct Network {
    Graph graph;
    NetworkConfig config;
    int image_input = -1;
    int target_input = -1;
    int logits = -1;
    int probs = -1;
    int bottleneck = -1;
    int loss = -1;
    std::vector<int> encoder_outputs;
    std::vector<int> decoder_outputs;
};

namespace detail {

struct ConvSpec {
    std::string name;
    Shape shape;
    int64_t fan_in;
};

} // namespace detail

inline Network build_graph(const NetworkConfig& cfg) {
    cfg.validate();
    Network net;
    net.config = cfg;
    Graph& g = net.graph;
    const int P = cfg.patch_extent;
    const int depth = cfg.depth();
    const auto gn_groups = [&](int c) { return std::min(cfg.groupnorm_groups, c); };
    constexpr double kGnEps = 1e-5;
    constexpr double kGdlEps = 1e-5;

    net.image_input = g.add_input("image", {cfg.in_channels, P, P, P});
    net.target_input = g.add_input("target", {cfg.out_channels, P, P, P});

    auto conv_block = [&](int x, const std::string& prefix, int cin, int cout) {
        int w = g.add_param(prefix + ".weight", {cout, cin, 3, 3, 3});
        int b = g.add_param(prefix + ".bias", {cout});
        return g.conv3d(x, w, b, 3, 1, prefix);
    };
    auto gn_block = [&](int x, const std::string& prefix, int c) {
        int sc = g.add_param(prefix + ".scale", {c});
        int sh = g.add_param(prefix + ".shift", {c});
        return g.groupnorm(x, sc, sh, gn_groups(c), kGnEps, prefix);
    };

    // encoder; skip taps are pre-dropout
    std::vector<int> skips;
    int x = net.image_input;
    for (int i = 1; i <= depth; ++i) {
        const std::string blk = "enc" + std::to_string(i);
        const int cin = i == 1 ? cfg.in_channels : cfg.encoder_channels[static_cast<size_t>(i - 2)];
        const int c = cfg.encoder_channels[static_cast<size_t>(i - 1)];
        if (i > 1) x = g.maxpool3d(x, 2, 2, blk + ".pool");
        x = conv_block(x, blk + ".conv1", cin, c);
        x = gn_block(x, blk + ".gn1", c);
        x = g.relu(x, blk + ".relu1");
        x = conv_block(x, blk + ".conv2", c, c);
        x = gn_block(x, blk + ".gn2", c);
        x = g.relu(x, blk + ".relu2");
        skips.push_back(x);
        x = g.dropout(x, cfg.dropout_p, blk + ".dropout");
        net.encoder_outputs.push_back(x);
    }
    net.bottleneck = x;

    // decoder: block j upsamples, concatenates the enc(depth-j) skip, and
    // convolves to enc(depth+1-j) channels; block 1 has one conv set
    for (int j = 1; j <= depth - 1; ++j) {
        const std::string blk = "dec" + std::to_string(j);
        const int cin = static_cast<int>(g.nodes[static_cast<size_t>(x)].out_shape[0]);
        const int cup = cin / 2;
        const int cout = cfg.encoder_channels[static_cast<size_t>(depth - j)];
        int w = g.add_param(blk + ".up.weight", {cin, cup, 2, 2, 2});
        int b = g.add_param(blk + ".up.bias", {cup});
        x = g.conv_transpose3d(x, w, b, 2, 2, blk + ".up");
        x = g.concat_c(x, skips[static_cast<size_t>(depth - j - 1)], blk + ".concat");
        const int ccat = static_cast<int>(g.nodes[static_cast<size_t>(x)].out_shape[0]);
        x = conv_block(x, blk + ".conv1", ccat, cout);
        x = gn_block(x, blk + ".gn1", cout);
        x = g.relu(x, blk + ".relu1");
        if (j > 1) {
            x = conv_block(x, blk + ".conv2", cout, cout);
            x = gn_block(x, blk + ".gn2", cout);
            x = g.relu(x, blk + ".relu2");
        }
        x = g.dropout(x, cfg.dropout_p, blk + ".dropout");
        net.decoder_outputs.push_back(x);
    }

    // 1x1x1 output head, channel softmax, dice loss branch
    int hw = g.add_param("head.weight", {cfg.out_channels,
                                         cfg.encoder_channels[1], 1, 1, 1});
    int hb = g.add_param("head.bias", {cfg.out_channels});
    net.logits = g.conv3d(x, hw, hb, 1, 0, "head");
    net.probs = g.softmax_c(net.logits, "probs");
    net.loss = g.gdl(net.probs, net.target_input, kGdlEps, "loss");
    g.output = net.loss;
    return net;
}

// Seeded He-style uniform fan-in initialization; each entry draws from its
// own derived stream so the result is independent of initialization order.
template <typename T>
ParamSet<T> init_params(const Network& net, uint64_t init_seed) {
    ParamSet<T> params;
    for (const auto& [name, shape] : net.graph.param_slots) {
        Tensor<T> t(shape);
        Rng rng(seed_fold(init_seed, name));
        if (name.ends_with(".weight")) {
            int64_t fan_in = 1;
            for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
        } else if (name.ends_with(".scale")) {
            for (auto& v : t.data) v = T(1);
        }
        // biases and shifts stay zero
        params.add(name, std::move(t));
    }
    return params;
}

template <typename T>
std::pair<Network, ParamSet<T>> build_network(const NetworkConfig& cfg, uint64_t init_seed) {
    Network net = build_graph(cfg);
    ParamSet<T> params = init_params<T>(net, init_seed);
    return {std::move(net), std::move(params)};
}

template <typename T>
Tensor<T> predict_patch(const Network& net, const ParamSet<T>& params, const Tensor<T>& patch,
                        Mode mode = Mode::eval, uint64_t seed = 0) {
    std::vector<const Tensor<T>*> inputs(net.graph.input_slots.size(), nullptr);
    inputs[static_cast<size_t>(net.graph.nodes[static_cast<size_t>(net.image_input)].slot)] =
        &patch;
    Evaluator<T> ev(net.graph, params, std::move(inputs), mode, seed);
    return ev.value(net.probs);
}

template <typename T>
Tensor<T> extract_bottleneck_features(const Network& net, const ParamSet<T>& params,
                                      const Tensor<T>& patch) {
    std::vector<const Tensor<T>*> inputs(net.graph.input_slots.size(), nullptr);
    inputs[static_cast<size_t>(net.graph.nodes[static_cast<size_t>(net.image_input)].slot)] =
        &patch;
    Evaluator<T> ev(net.graph, params, std::move(inputs), Mode::eval, 0);
    Tensor<T> flat({ev.value(net.bottleneck).numel()});
    flat.data = ev.value(net.bottleneck).data;
    return flat;
}

inline int64_t bottleneck_feature_length(const Network& net) {
    return numel_of(net.graph.nodes[static_cast<size_t>(net.bottleneck)].out_shape);
}

// Per-entry trainable/frozen partition, congruent with a ParamSet.
struct FreezeMask {
    std::vector<uint8_t> frozen;

    int64_t frozen_count() const {
        int64_t n = 0;
        for (uint8_t f : frozen) n += f;
        return n;
    }
};

// Marks every encoder entry (bottleneck included) frozen; decoder blocks
// and the output head stay trainable.
template <typename T>
FreezeMask encoder_bottleneck_freeze_mask(const ParamSet<T>& params) {
    FreezeMask mask;
    mask.frozen.reserve(params.size());
    for (const auto& [name, _] : params.entries) {
        if (name.starts_with("enc"))
            mask.frozen.push_back(1);
        else if (name.starts_with("dec") || name.starts_with("head"))
            mask.frozen.push_back(0);
        else
            throw ContractError("unrecognized parameter entry '" + name + "'");
    }
    return mask;
}

} // namespace metaseg
