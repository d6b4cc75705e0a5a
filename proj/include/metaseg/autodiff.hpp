// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "metaseg/errors.hpp"
#include "metaseg/graph.hpp"
#include "metaseg/kernels.hpp"
#include "metaseg/params.hpp"
#include "metaseg/rng.hpp"
#include "metaseg/tensor.hpp"

namespace metaseg {

enum class Mode { train, eval };

// One evaluation of a graph against a bound ParamSet and input tensors.
// Values are computed lazily for the ancestors of the requested node only,
// so a prediction pass never needs the loss-branch inputs. Single-threaded
// and bitwise deterministic given (graph, params, inputs, mode, seed).
template <typename T>
class Evaluator {
public:
    Evaluator(const Graph& g, const ParamSet<T>& params,
              std::vector<const Tensor<T>*> inputs, Mode mode, uint64_t seed)
        : g_(g), params_(params), inputs_(std::move(inputs)), mode_(mode), seed_(seed) {
        if (inputs_.size() != g_.input_slots.size())
            throw ContractError("graph expects " + std::to_string(g_.input_slots.size()) +
                                " inputs, got " + std::to_string(inputs_.size()));
        check_params();
        for (size_t i = 0; i < inputs_.size(); ++i) {
            if (inputs_[i] && inputs_[i]->shape != g_.input_slots[i].second)
                throw ShapeError("input '" + g_.input_slots[i].first + "' has shape " +
                                 shape_str(inputs_[i]->shape) + ", expected " +
                                 shape_str(g_.input_slots[i].second));
        }
        vals_.resize(g_.nodes.size());
        computed_.assign(g_.nodes.size(), 0);
        needed_.assign(g_.nodes.size(), 0);
        masks_.resize(g_.nodes.size());
        gn_saved_.resize(g_.nodes.size());
        argmax_.resize(g_.nodes.size());
        gdl_saved_.resize(g_.nodes.size());
    }

    const Tensor<T>& value(int node) {
        compute_up_to(node);
        return vals_[static_cast<size_t>(node)];
    }

    T scalar_value(int node) {
        const Tensor<T>& v = value(node);
        if (!v.is_scalar())
            throw ContractError("node '" + g_.nodes[static_cast<size_t>(node)].name +
                                "' is not a scalar");
        return v[0];
    }

    // Reverse-mode sweep from a scalar node; returns a GradSet congruent
    // with the bound ParamSet (exactly zero for unused entries).
    GradSet<T> backward(int loss_node) {
        const Tensor<T>& loss = value(loss_node);
        if (loss.numel() != 1)
            throw ContractError("loss node '" + g_.nodes[static_cast<size_t>(loss_node)].name +
                                "' is not a scalar");
        std::vector<Tensor<T>> adj(g_.nodes.size());
        for (int i = 0; i <= loss_node; ++i)
            if (needed_[static_cast<size_t>(i)]) adj[static_cast<size_t>(i)] =
                Tensor<T>(g_.nodes[static_cast<size_t>(i)].out_shape);
        adj[static_cast<size_t>(loss_node)][0] = T(1);
        for (int i = loss_node; i >= 0; --i) {
            if (!needed_[static_cast<size_t>(i)]) continue;
            backward_node(i, adj);
        }
        GradSet<T> grads = zeros_like(params_);
        for (int i = 0; i <= loss_node; ++i) {
            const Node& n = g_.nodes[static_cast<size_t>(i)];
            if (n.kind == OpKind::Param && needed_[static_cast<size_t>(i)])
                grads.entries[static_cast<size_t>(n.slot)].second = adj[static_cast<size_t>(i)];
        }
        return grads;
    }

private:
    void check_params() {
        if (params_.size() != g_.param_slots.size())
            throw ContractError("parameter set not congruent with graph leaves (count)");
        for (size_t i = 0; i < params_.size(); ++i) {
            if (params_.entries[i].first != g_.param_slots[i].first ||
                params_.entries[i].second.shape != g_.param_slots[i].second)
                throw ContractError("parameter set not congruent with graph leaf '" +
                                    g_.param_slots[i].first + "'");
        }
    }

    void mark_needed(int node) {
        if (needed_[static_cast<size_t>(node)]) return;
        needed_[static_cast<size_t>(node)] = 1;
        for (int in : g_.nodes[static_cast<size_t>(node)].inputs) mark_needed(in);
    }

    void compute_up_to(int node) {
        if (node < 0 || node >= g_.size())
            throw ContractError("unknown node id " + std::to_string(node));
        mark_needed(node);
        for (int i = 0; i <= node; ++i)
            if (needed_[static_cast<size_t>(i)] && !computed_[static_cast<size_t>(i)]) {
                forward_node(i);
                computed_[static_cast<size_t>(i)] = 1;
            }
    }

    void forward_node(int id) {
        const Node& n = g_.nodes[static_cast<size_t>(id)];
        Tensor<T>& out = vals_[static_cast<size_t>(id)];
        const auto in = [&](int j) -> const Tensor<T>& {
            return vals_[static_cast<size_t>(n.inputs[static_cast<size_t>(j)])];
        };
        switch (n.kind) {
            case OpKind::Input: {
                const Tensor<T>* t = inputs_[static_cast<size_t>(n.slot)];
                if (!t)
                    throw ContractError("input '" + n.name + "' required but not provided");
                out = *t;
                break;
            }
            case OpKind::Param:
                out = params_.entries[static_cast<size_t>(n.slot)].second;
                break;
            case OpKind::Conv3d:
                out = Tensor<T>(n.out_shape);
                kernels::conv3d_forward(in(0), in(1), in(2), n.kernel, n.pad, out);
                break;
            case OpKind::ConvTranspose3d:
                out = Tensor<T>(n.out_shape);
                kernels::conv_transpose3d_forward(in(0), in(1), in(2), n.kernel, n.stride, out);
                break;
            case OpKind::MaxPool3d:
                out = Tensor<T>(n.out_shape);
                kernels::maxpool3d_forward(in(0), n.kernel, n.stride, out,
                                           argmax_[static_cast<size_t>(id)]);
                break;
            case OpKind::Relu:
                out = Tensor<T>(n.out_shape);
                kernels::relu_forward(in(0), out);
                break;
            case OpKind::GroupNorm:
                out = Tensor<T>(n.out_shape);
                kernels::groupnorm_forward(in(0), in(1), in(2), n.groups, n.eps, out,
                                           gn_saved_[static_cast<size_t>(id)]);
                break;
            case OpKind::Dropout: {
                const Tensor<T>& x = in(0);
                out = Tensor<T>(n.out_shape);
                if (mode_ == Mode::eval || n.p == 0.0) {
                    out.data = x.data;
                } else {
                    auto& mask = masks_[static_cast<size_t>(id)];
                    kernels::dropout_mask<T>(x.numel(), n.p,
                                             seed_fold(seed_, "dropout", uint64_t(id)), mask);
                    for (int64_t i = 0; i < x.numel(); ++i)
                        out[i] = x[i] * mask[static_cast<size_t>(i)];
                }
                break;
            }
            case OpKind::ConcatC: {
                const Tensor<T>& a = in(0);
                const Tensor<T>& b = in(1);
                out = Tensor<T>(n.out_shape);
                std::copy(a.data.begin(), a.data.end(), out.data.begin());
                std::copy(b.data.begin(), b.data.end(),
                          out.data.begin() + static_cast<int64_t>(a.data.size()));
                break;
            }
            case OpKind::Add: {
                const Tensor<T>& a = in(0);
                const Tensor<T>& b = in(1);
                out = Tensor<T>(n.out_shape);
                for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
                break;
            }
            case OpKind::Mul: {
                const Tensor<T>& a = in(0);
                const Tensor<T>& b = in(1);
                out = Tensor<T>(n.out_shape);
                for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
                break;
            }
            case OpKind::SoftmaxC:
                out = Tensor<T>(n.out_shape);
                kernels::softmax_c_forward(in(0), out);
                break;
            case OpKind::SumAll: {
                double acc = 0;
                for (const T& v : in(0).data) acc += v;
                out = Tensor<T>::scalar(static_cast<T>(acc));
                break;
            }
            case OpKind::MeanAll: {
                double acc = 0;
                for (const T& v : in(0).data) acc += v;
                out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(in(0).numel())));
                break;
            }
            case OpKind::Gdl:
                out = Tensor<T>::scalar(static_cast<T>(kernels::gdl_forward(
                    in(0), in(1), n.eps, gdl_saved_[static_cast<size_t>(id)])));
                break;
        }
        ensure_finite(out, std::string("node '") + n.name + "' (" + op_name(n.kind) + ")");
    }

    void backward_node(int id, std::vector<Tensor<T>>& adj) {
        const Node& n = g_.nodes[static_cast<size_t>(id)];
        if (n.kind == OpKind::Input || n.kind == OpKind::Param) return;
        const Tensor<T>& gout = adj[static_cast<size_t>(id)];
        const auto in = [&](int j) -> const Tensor<T>& {
            return vals_[static_cast<size_t>(n.inputs[static_cast<size_t>(j)])];
        };
        const auto gin = [&](int j) -> Tensor<T>& {
            return adj[static_cast<size_t>(n.inputs[static_cast<size_t>(j)])];
        };
        switch (n.kind) {
            case OpKind::Conv3d:
                kernels::conv3d_backward(in(0), in(1), gout, n.kernel, n.pad, gin(0), gin(1),
                                         gin(2));
                break;
            case OpKind::ConvTranspose3d:
                kernels::conv_transpose3d_backward(in(0), in(1), gout, n.kernel, n.stride, gin(0),
                                                   gin(1), gin(2));
                break;
            case OpKind::MaxPool3d:
                kernels::maxpool3d_backward(gout, argmax_[static_cast<size_t>(id)], gin(0));
                break;
            case OpKind::Relu:
                kernels::relu_backward(in(0), gout, gin(0));
                break;
            case OpKind::GroupNorm:
                kernels::groupnorm_backward(in(0), in(1), gout, n.groups,
                                            gn_saved_[static_cast<size_t>(id)], gin(0), gin(1),
                                            gin(2));
                break;
            case OpKind::Dropout: {
                Tensor<T>& gx = gin(0);
                if (mode_ == Mode::eval || n.p == 0.0) {
                    for (int64_t i = 0; i < gout.numel(); ++i) gx[i] += gout[i];
                } else {
                    const auto& mask = masks_[static_cast<size_t>(id)];
                    for (int64_t i = 0; i < gout.numel(); ++i)
                        gx[i] += gout[i] * mask[static_cast<size_t>(i)];
                }
                break;
            }
            case OpKind::ConcatC: {
                Tensor<T>& ga = gin(0);
                Tensor<T>& gb = gin(1);
                const int64_t na = ga.numel();
                for (int64_t i = 0; i < na; ++i) ga[i] += gout[i];
                for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += gout[na + i];
                break;
            }
            case OpKind::Add:
                for (int64_t i = 0; i < gout.numel(); ++i) {
                    gin(0)[i] += gout[i];
                    gin(1)[i] += gout[i];
                }
                break;
            case OpKind::Mul:
                for (int64_t i = 0; i < gout.numel(); ++i) {
                    gin(0)[i] += gout[i] * in(1)[i];
                    gin(1)[i] += gout[i] * in(0)[i];
                }
                break;
            case OpKind::SoftmaxC:
                kernels::softmax_c_backward(vals_[static_cast<size_t>(id)], gout, gin(0));
                break;
            case OpKind::SumAll:
                for (int64_t i = 0; i < gin(0).numel(); ++i) gin(0)[i] += gout[0];
                break;
            case OpKind::MeanAll: {
                const T g = gout[0] / static_cast<T>(gin(0).numel());
                for (int64_t i = 0; i < gin(0).numel(); ++i) gin(0)[i] += g;
                break;
            }
            case OpKind::Gdl:
                // gradient flows into probabilities only; the target is
                // ground truth bound as an input leaf
                kernels::gdl_backward(in(1), gdl_saved_[static_cast<size_t>(id)], gout[0],
                                      gin(0));
                break;
            default:
                break;
        }
    }

    const Graph& g_;
    const ParamSet<T>& params_;
    std::vector<const Tensor<T>*> inputs_;
    Mode mode_;
    uint64_t seed_;
    std::vector<Tensor<T>> vals_;
    std::vector<char> computed_;
    std::vector<char> needed_;
    std::vector<std::vector<T>> masks_;
    std::vector<std::vector<T>> gn_saved_;
    std::vector<std::vector<int64_t>> argmax_;
    std::vector<kernels::GdlSaved<T>> gdl_saved_;
};

template <typename T>
Tensor<T> forward(const Graph& g, const ParamSet<T>& params, std::span<const Tensor<T>> inputs,
                  Mode mode, uint64_t seed, int output_node = -1) {
    std::vector<const Tensor<T>*> ptrs;
    ptrs.reserve(inputs.size());
    for (const Tensor<T>& t : inputs) ptrs.push_back(&t);
    Evaluator<T> ev(g, params, std::move(ptrs), mode, seed);
    return ev.value(output_node < 0 ? g.output : output_node);
}

template <typename T>
GradSet<T> gradient(const Graph& g, const ParamSet<T>& params, std::span<const Tensor<T>> inputs,
                    Mode mode, uint64_t seed, int loss_node = -1) {
    std::vector<const Tensor<T>*> ptrs;
    ptrs.reserve(inputs.size());
    for (const Tensor<T>& t : inputs) ptrs.push_back(&t);
    Evaluator<T> ev(g, params, std::move(ptrs), mode, seed);
    return ev.backward(loss_node < 0 ? g.output : loss_node);
}

// Directional second derivative via central differences of the gradient
// map; exact for quadratics up to rounding. `grad_fn(params) -> GradSet`.
template <typename T, typename GradFn>
GradSet<T> fd_hvp(GradFn&& grad_fn, const ParamSet<T>& params, const GradSet<T>& v) {
    require_congruent(params, v, "hessian_vector_product");
    const T vmax = max_abs(v);
    if (vmax == T(0)) return zeros_like(params);
    const T h = static_cast<T>(std::cbrt(static_cast<double>(std::numeric_limits<T>::epsilon())) *
                               (1.0 + static_cast<double>(max_abs(params))) /
                               static_cast<double>(vmax));
    ParamSet<T> plus = params;
    axpy(plus, h, v);
    ParamSet<T> minus = params;
    axpy(minus, -h, v);
    GradSet<T> gp = grad_fn(plus);
    GradSet<T> gm = grad_fn(minus);
    GradSet<T> out = std::move(gp);
    axpy(out, T(-1), gm);
    scale(out, T(1) / (T(2) * h));
    return out;
}

template <typename T>
GradSet<T> hessian_vector_product(const Graph& g, const ParamSet<T>& params,
                                  std::span<const Tensor<T>> inputs, Mode mode, uint64_t seed,
                                  int loss_node, const GradSet<T>& v) {
    return fd_hvp(
        [&](const ParamSet<T>& p) { return gradient<T>(g, p, inputs, mode, seed, loss_node); },
        params, v);
}

// Central-difference gradient; test oracle only. `loss_fn(params) -> T`.
template <typename T, typename LossFn>
GradSet<T> finite_diff_gradient(LossFn&& loss_fn, const ParamSet<T>& params, T step) {
    if (!(step > T(0))) throw ContractError("finite_diff_gradient requires step > 0");
    GradSet<T> g = zeros_like(params);
    ParamSet<T> probe = params;
    for (size_t e = 0; e < params.size(); ++e) {
        auto& pt = probe.entries[e].second;
        auto& gt = g.entries[e].second;
        for (int64_t i = 0; i < pt.numel(); ++i) {
            const T orig = pt[i];
            pt[i] = orig + step;
            const T fp = loss_fn(static_cast<const ParamSet<T>&>(probe));
            pt[i] = orig - step;
            const T fm = loss_fn(static_cast<const ParamSet<T>&>(probe));
            pt[i] = orig;
            gt[i] = (fp - fm) / (T(2) * step);
        }
    }
    return g;
}

} // namespace metaseg
