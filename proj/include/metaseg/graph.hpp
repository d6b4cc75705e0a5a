// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "metaseg/errors.hpp"
#include "metaseg/tensor.hpp"

namespace metaseg {

enum class OpKind {
    Input,
    Param,
    Conv3d,          // inputs: x, weight [Cout,Cin,k,k,k], bias [Cout]; stride 1
    ConvTranspose3d, // inputs: x, weight [Cin,Cout,k,k,k], bias [Cout]
    MaxPool3d,
    Relu,
    GroupNorm,       // inputs: x, scale [C], shift [C]
    Dropout,
    ConcatC,         // channel-axis concat of two rank-4 tensors
    Add,
    Mul,
    SoftmaxC,        // softmax over the channel axis of a rank-4 tensor
    SumAll,
    MeanAll,
    Gdl,             // inputs: probs [2,D,H,W], one-hot target; scalar out
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Input: return "input";
        case OpKind::Param: return "param";
        case OpKind::Conv3d: return "conv3d";
        case OpKind::ConvTranspose3d: return "conv_transpose3d";
        case OpKind::MaxPool3d: return "maxpool3d";
        case OpKind::Relu: return "relu";
        case OpKind::GroupNorm: return "groupnorm";
        case OpKind::Dropout: return "dropout";
        case OpKind::ConcatC: return "concat";
        case OpKind::Add: return "add";
        case OpKind::Mul: return "mul";
        case OpKind::SoftmaxC: return "softmax";
        case OpKind::SumAll: return "sum";
        case OpKind::MeanAll: return "mean";
        case OpKind::Gdl: return "generalized_dice_loss";
    }
    return "?";
}

struct Node {
    OpKind kind{};
    std::string name;          // diagnostic label used in error messages
    std::vector<int> inputs;   // upstream node ids (builder keeps topo order)
    Shape out_shape;

    int slot = -1;             // Input/Param: index into the slot table
    int kernel = 0;            // conv / transposed conv / pool
    int pad = 0;
    int stride = 1;
    int groups = 0;            // groupnorm
    double eps = 0.0;          // groupnorm / gdl
    double p = 0.0;            // dropout probability
};

// Static graph of primitive operations. Nodes are appended in topological
// order; every node's output shape is inferred when it is added, so shape
// failures happen before any numeric work.
struct Graph {
    std::vector<Node> nodes;
    std::vector<std::pair<std::string, Shape>> input_slots;
    std::vector<std::pair<std::string, Shape>> param_slots;
    int output = -1; // default output node

    int add_input(std::string name, Shape shape) {
        numel_of(shape);
        input_slots.emplace_back(name, shape);
        Node n;
        n.kind = OpKind::Input;
        n.name = std::move(name);
        n.slot = static_cast<int>(input_slots.size()) - 1;
        n.out_shape = std::move(shape);
        return push(std::move(n));
    }

    int add_param(std::string name, Shape shape) {
        numel_of(shape);
        for (const auto& [pname, _] : param_slots)
            if (pname == name) throw ContractError("duplicate param slot '" + name + "'");
        param_slots.emplace_back(name, shape);
        Node n;
        n.kind = OpKind::Param;
        n.name = std::move(name);
        n.slot = static_cast<int>(param_slots.size()) - 1;
        n.out_shape = std::move(shape);
        return push(std::move(n));
    }

    int conv3d(int x, int w, int b, int kernel, int pad, std::string name) {
        const Shape& xs = shape_of(x, name);
        const Shape& ws = shape_of(w, name);
        const Shape& bs = shape_of(b, name);
        require(xs.size() == 4, name, "conv input must be rank-4 [C,D,H,W], got " + shape_str(xs));
        require(ws.size() == 5, name, "conv weight must be rank-5, got " + shape_str(ws));
        require(ws[1] == xs[0], name, "conv weight in-channels " + std::to_string(ws[1]) +
                                           " != input channels " + std::to_string(xs[0]));
        require(ws[2] == kernel && ws[3] == kernel && ws[4] == kernel, name,
                "conv weight kernel mismatch");
        require(bs.size() == 1 && bs[0] == ws[0], name, "conv bias shape mismatch");
        Shape out{ws[0], 0, 0, 0};
        for (int a = 0; a < 3; ++a) {
            const int64_t e = xs[static_cast<size_t>(a) + 1] + 2 * pad - kernel + 1;
            require(e >= 1, name, "conv output extent would be non-positive");
            out[static_cast<size_t>(a) + 1] = e;
        }
        Node n;
        n.kind = OpKind::Conv3d;
        n.name = std::move(name);
        n.inputs = {x, w, b};
        n.kernel = kernel;
        n.pad = pad;
        n.out_shape = std::move(out);
        return push(std::move(n));
    }

    int conv_transpose3d(int x, int w, int b, int kernel, int stride, std::string name) {
        const Shape& xs = shape_of(x, name);
        const Shape& ws = shape_of(w, name);
        const Shape& bs = shape_of(b, name);
        require(xs.size() == 4, name, "transposed conv input must be rank-4");
        require(ws.size() == 5 && ws[0] == xs[0], name, "transposed conv weight shape mismatch");
        require(ws[2] == kernel && ws[3] == kernel && ws[4] == kernel, name,
                "transposed conv kernel mismatch");
        require(bs.size() == 1 && bs[0] == ws[1], name, "transposed conv bias shape mismatch");
        Shape out{ws[1], 0, 0, 0};
        for (int a = 0; a < 3; ++a)
            out[static_cast<size_t>(a) + 1] = (xs[static_cast<size_t>(a) + 1] - 1) * stride + kernel;
        Node n;
        n.kind = OpKind::ConvTranspose3d;
        n.name = std::move(name);
        n.inputs = {x, w, b};
        n.kernel = kernel;
        n.stride = stride;
        n.out_shape = std::move(out);
        return push(std::move(n));
    }

    int maxpool3d(int x, int kernel, int stride, std::string name) {
        const Shape& xs = shape_of(x, name);
        require(xs.size() == 4, name, "maxpool input must be rank-4");
        Shape out{xs[0], 0, 0, 0};
        for (int a = 0; a < 3; ++a) {
            const int64_t e = xs[static_cast<size_t>(a) + 1];
            require((e - kernel) % stride == 0 && e >= kernel, name,
                    "maxpool extent " + std::to_string(e) + " not tileable by kernel " +
                        std::to_string(kernel) + " stride " + std::to_string(stride));
            out[static_cast<size_t>(a) + 1] = (e - kernel) / stride + 1;
        }
        Node n;
        n.kind = OpKind::MaxPool3d;
        n.name = std::move(name);
        n.inputs = {x};
        n.kernel = kernel;
        n.stride = stride;
        n.out_shape = std::move(out);
        return push(std::move(n));
    }

    int relu(int x, std::string name) { return unary(OpKind::Relu, x, std::move(name)); }

    int groupnorm(int x, int scale, int shift, int groups, double eps, std::string name) {
        const Shape& xs = shape_of(x, name);
        require(xs.size() == 4, name, "groupnorm input must be rank-4");
        require(groups >= 1 && xs[0] % groups == 0, name,
                "groupnorm groups " + std::to_string(groups) + " must divide channels " +
                    std::to_string(xs[0]));
        const Shape& sc = shape_of(scale, name);
        const Shape& sh = shape_of(shift, name);
        require(sc.size() == 1 && sc[0] == xs[0], name, "groupnorm scale shape mismatch");
        require(sh.size() == 1 && sh[0] == xs[0], name, "groupnorm shift shape mismatch");
        Node n;
        n.kind = OpKind::GroupNorm;
        n.name = std::move(name);
        n.inputs = {x, scale, shift};
        n.groups = groups;
        n.eps = eps;
        n.out_shape = xs;
        return push(std::move(n));
    }

    int dropout(int x, double p, std::string name) {
        require(p >= 0.0 && p < 1.0, name, "dropout probability must be in [0,1)");
        Node n;
        n.kind = OpKind::Dropout;
        n.name = std::move(name);
        n.inputs = {x};
        n.p = p;
        n.out_shape = shape_of(x, n.name);
        return push(std::move(n));
    }

    int concat_c(int a, int b, std::string name) {
        const Shape& as = shape_of(a, name);
        const Shape& bs = shape_of(b, name);
        require(as.size() == 4 && bs.size() == 4, name, "concat inputs must be rank-4");
        require(as[1] == bs[1] && as[2] == bs[2] && as[3] == bs[3], name,
                "concat spatial extents differ: " + shape_str(as) + " vs " + shape_str(bs));
        Node n;
        n.kind = OpKind::ConcatC;
        n.name = std::move(name);
        n.inputs = {a, b};
        n.out_shape = {as[0] + bs[0], as[1], as[2], as[3]};
        return push(std::move(n));
    }

    int add(int a, int b, std::string name) { return binary(OpKind::Add, a, b, std::move(name)); }
    int mul(int a, int b, std::string name) { return binary(OpKind::Mul, a, b, std::move(name)); }

    int softmax_c(int x, std::string name) {
        const Shape& xs = shape_of(x, name);
        require(xs.size() == 4, name, "softmax input must be rank-4");
        return unary(OpKind::SoftmaxC, x, std::move(name));
    }

    int sum_all(int x, std::string name) { return reduce(OpKind::SumAll, x, std::move(name)); }
    int mean_all(int x, std::string name) { return reduce(OpKind::MeanAll, x, std::move(name)); }

    int gdl(int probs, int target, double eps, std::string name) {
        const Shape& ps = shape_of(probs, name);
        const Shape& ts = shape_of(target, name);
        require(ps.size() == 4, name, "gdl probs must be rank-4");
        require(ps == ts, name,
                "gdl probs/target shapes differ: " + shape_str(ps) + " vs " + shape_str(ts));
        Node n;
        n.kind = OpKind::Gdl;
        n.name = std::move(name);
        n.inputs = {probs, target};
        n.eps = eps;
        n.out_shape = {};
        return push(std::move(n));
    }

    const Shape& shape_of(int node, const std::string& ctx) const {
        if (node < 0 || node >= static_cast<int>(nodes.size()))
            throw ShapeError("node '" + ctx + "' references unknown input node");
        return nodes[static_cast<size_t>(node)].out_shape;
    }

    int size() const { return static_cast<int>(nodes.size()); }

private:
    int push(Node n) {
        nodes.push_back(std::move(n));
        output = static_cast<int>(nodes.size()) - 1;
        return output;
    }

    static void require(bool ok, const std::string& node, const std::string& msg) {
        if (!ok) throw ShapeError("node '" + node + "': " + msg);
    }

    int unary(OpKind k, int x, std::string name) {
        Node n;
        n.kind = k;
        n.name = std::move(name);
        n.inputs = {x};
        n.out_shape = shape_of(x, n.name);
        return push(std::move(n));
    }

    int binary(OpKind k, int a, int b, std::string name) {
        const Shape& as = shape_of(a, name);
        const Shape& bs = shape_of(b, name);
        require(as == bs, name,
                "elementwise shapes differ: " + shape_str(as) + " vs " + shape_str(bs));
        Node n;
        n.kind = k;
        n.name = std::move(name);
        n.inputs = {a, b};
        n.out_shape = as;
        return push(std::move(n));
    }

    int reduce(OpKind k, int x, std::string name) {
        shape_of(x, name);
        Node n;
        n.kind = k;
        n.name = std::move(name);
        n.inputs = {x};
        n.out_shape = {};
        return push(std::move(n));
    }
};

} // namespace metaseg
