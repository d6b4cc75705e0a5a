// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "metaseg/autodiff.hpp"
#include "metaseg/errors.hpp"
#include "metaseg/inference.hpp"
#include "metaseg/metrics.hpp"
#include "metaseg/params.hpp"
#include "metaseg/rng.hpp"
#include "metaseg/unet.hpp"
#include "metaseg/volume.hpp"

namespace metaseg {

enum class MetaMode { exact, first_order };

// Optimization hyperparameters plus the sampling counts that size one run.
struct TrainConfig {
    double alpha = 1.0;          // inner step size
    double beta = 1.0;           // meta-test loss weight
    double gamma = 1.0;          // outer step scale (composed with lr)
    double lr = 0.001;
    double momentum = 0.9;
    double weight_decay = 5e-5;
    int epochs = 10;
    int batch_size = 4;          // patches per domain per iteration
    MetaMode meta_mode = MetaMode::exact;
    uint64_t seed = 0;
    int patches_per_subject = 50;
    int augment_per_subject = 30;
    int finetune_epochs = 5;
    int kshot_patches_per_subject = 5;

    void validate() const {
        if (!(alpha > 0)) throw ConfigError("alpha must be > 0");
        if (!(lr > 0)) throw ConfigError("lr must be > 0");
        if (beta < 0 || gamma < 0) throw ConfigError("beta and gamma must be >= 0");
        if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0,1)");
        if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (patches_per_subject < 1) throw ConfigError("patches_per_subject must be >= 1");
        if (augment_per_subject < 0 || augment_per_subject > patches_per_subject)
            throw ConfigError("augment_per_subject must be in [0, patches_per_subject]");
        if (finetune_epochs < 1) throw ConfigError("finetune_epochs must be >= 1");
        if (kshot_patches_per_subject < 1)
            throw ConfigError("kshot_patches_per_subject must be >= 1");
    }
};

inline MetaMode parse_meta_mode(const std::string& s) {
    if (s == "exact") return MetaMode::exact;
    if (s == "first_order") return MetaMode::first_order;
    throw ConfigError("meta mode must be 'exact' or 'first_order'");
}

// ---------------------------------------------------------------------------
// meta-train / meta-test splitting
// ---------------------------------------------------------------------------

struct DomainSplit {
    std::vector<std::string> meta_train;
    std::vector<std::string> meta_test;
};

// test instrumentation: counts invocations process-wide
inline std::atomic<uint64_t>& meta_split_invocations() {
    static std::atomic<uint64_t> count{0};
    return count;
}

// Exactly one domain drawn uniformly as meta-test, the rest meta-train.
inline DomainSplit meta_split(const std::vector<std::string>& source_domains, Rng& rng) {
    if (source_domains.size() < 2)
        throw ConfigError("meta_split requires at least 2 source domains");
    meta_split_invocations().fetch_add(1, std::memory_order_relaxed);
    const int64_t pick = rng.uniform_int(0, static_cast<int64_t>(source_domains.size()) - 1);
    DomainSplit split;
    for (size_t i = 0; i < source_domains.size(); ++i) {
        if (static_cast<int64_t>(i) == pick)
            split.meta_test.push_back(source_domains[i]);
        else
            split.meta_train.push_back(source_domains[i]);
    }
    return split;
}

using SplitFn = std::function<DomainSplit(const std::vector<std::string>&, Rng&)>;

// ---------------------------------------------------------------------------
// update rules
// ---------------------------------------------------------------------------

// Plain inner gradient step, no momentum, no weight decay.
template <typename T>
ParamSet<T> inner_update(const ParamSet<T>& params, const GradSet<T>& grad_f, double alpha) {
    require_congruent(params, grad_f, "inner_update");
    ParamSet<T> out = params;
    axpy(out, static_cast<T>(-alpha), grad_f);
    return out;
}

template <typename T>
struct OptimizerState {
    GradSet<T> momentum;
};

template <typename T>
OptimizerState<T> make_optimizer_state(const ParamSet<T>& params) {
    return {zeros_like(params)};
}

// SGD with momentum and weight decay folded into the gradient:
// g <- grad + wd*theta; buf <- m*buf + g; theta <- theta - gamma*lr*buf.
// Frozen entries (mask bit set) are left untouched, buffers included.
template <typename T>
void outer_step(ParamSet<T>& params, const GradSet<T>& meta_grad, OptimizerState<T>& state,
                const TrainConfig& cfg, const FreezeMask* freeze = nullptr) {
    require_congruent(params, meta_grad, "outer_step");
    require_congruent(params, state.momentum, "outer_step state");
    if (freeze && freeze->frozen.size() != params.size())
        throw ContractError("freeze mask not congruent with parameters");
    const T wd = static_cast<T>(cfg.weight_decay);
    const T mom = static_cast<T>(cfg.momentum);
    const T step = static_cast<T>(cfg.gamma * cfg.lr);
    for (size_t e = 0; e < params.size(); ++e) {
        if (freeze && freeze->frozen[e]) continue;
        auto& theta = params.entries[e].second.data;
        const auto& g = meta_grad.entries[e].second.data;
        auto& buf = state.momentum.entries[e].second.data;
        for (size_t i = 0; i < theta.size(); ++i) {
            const T grad = g[i] + wd * theta[i];
            buf[i] = mom * buf[i] + grad;
            theta[i] -= step * buf[i];
        }
    }
}

// ---------------------------------------------------------------------------
// meta gradient
// ---------------------------------------------------------------------------

template <typename T>
struct MetaGradient {
    GradSet<T> grad;
    T f_value{};
    T g_value{};
    bool g_evaluated = false;
};

// Loss callables return {value, gradient} at a parameter point. In exact
// mode the Hessian term of d/dtheta [F(theta) + beta G(theta - alpha grad F)]
// is applied through a Hessian-vector product with v = grad G(theta').
template <typename T, typename FLoss, typename GLoss>
MetaGradient<T> meta_gradient(FLoss&& f_loss, GLoss&& g_loss, const ParamSet<T>& params,
                              const TrainConfig& cfg) {
    MetaGradient<T> out;
    auto [f_value, f_grad] = f_loss(params);
    out.f_value = f_value;
    if (cfg.beta == 0.0) {
        out.grad = std::move(f_grad);
        return out;
    }
    ParamSet<T> inner = inner_update(params, f_grad, cfg.alpha);
    auto [g_value, g_grad] = g_loss(static_cast<const ParamSet<T>&>(inner));
    out.g_value = g_value;
    out.g_evaluated = true;
    out.grad = std::move(f_grad);
    axpy(out.grad, static_cast<T>(cfg.beta), g_grad);
    if (cfg.meta_mode == MetaMode::exact) {
        GradSet<T> hv = fd_hvp(
            [&](const ParamSet<T>& p) { return f_loss(p).second; }, params, g_grad);
        axpy(out.grad, static_cast<T>(-cfg.alpha * cfg.beta), hv);
    }
    return out;
}

// ---------------------------------------------------------------------------
// patch pools and batch losses
// ---------------------------------------------------------------------------

struct DomainPool {
    std::string domain;
    std::vector<PatchPair> patches;
};

// Per-subject preprocessing, seeded sampling, seeded augmentation; pools
// are fixed for the whole run.
inline DomainPool build_domain_pool(const Domain& d, int patch_extent, const TrainConfig& cfg) {
    if (d.subjects.empty()) throw DataError("domain '" + d.name + "' has no subjects");
    DomainPool pool;
    pool.domain = d.name;
    for (const Subject& s : d.subjects) {
        Subject pre{s.id, standardize_normalize(s.volume), s.label};
        Rng prng(seed_fold(cfg.seed, "patches", d.name, s.id));
        auto patches = sample_patches(pre, cfg.patches_per_subject, patch_extent, prng);
        Rng arng(seed_fold(cfg.seed, "augment", d.name, s.id));
        augment(patches, cfg.augment_per_subject, arng);
        for (auto& p : patches) {
            p.domain = d.name;
            pool.patches.push_back(std::move(p));
        }
    }
    return pool;
}

namespace detail {

template <typename T>
void patch_to_tensors(const PatchPair& p, int in_channels, Tensor<T>& image, Tensor<T>& target) {
    const int64_t n = static_cast<int64_t>(p.image.size());
    image = Tensor<T>({in_channels, p.extent, p.extent, p.extent});
    for (int64_t i = 0; i < n; ++i) image[i] = static_cast<T>(p.image[static_cast<size_t>(i)]);
    target = Tensor<T>({2, p.extent, p.extent, p.extent});
    for (int64_t i = 0; i < n; ++i) {
        const T fg = static_cast<T>(p.label[static_cast<size_t>(i)]);
        target[i] = T(1) - fg;
        target[n + i] = fg;
    }
}

} // namespace detail

// One (patch, dropout seed) batch per group; the loss is the mean over
// groups of the mean over each group's patches, evaluated in train mode.
template <typename T>
struct BatchLoss {
    const Network* net = nullptr;
    struct Group {
        std::vector<const PatchPair*> patches;
        std::vector<uint64_t> seeds;
    };
    std::vector<Group> groups;

    std::pair<T, GradSet<T>> operator()(const ParamSet<T>& params) const {
        GradSet<T> total;
        double loss_total = 0;
        const double gn = static_cast<double>(groups.size());
        for (const Group& group : groups) {
            GradSet<T> gsum = zeros_like(params);
            double lsum = 0;
            Tensor<T> image, target;
            for (size_t i = 0; i < group.patches.size(); ++i) {
                detail::patch_to_tensors(*group.patches[i], net->config.in_channels, image,
                                         target);
                std::vector<const Tensor<T>*> inputs(net->graph.input_slots.size(), nullptr);
                inputs[static_cast<size_t>(
                    net->graph.nodes[static_cast<size_t>(net->image_input)].slot)] = &image;
                inputs[static_cast<size_t>(
                    net->graph.nodes[static_cast<size_t>(net->target_input)].slot)] = &target;
                Evaluator<T> ev(net->graph, params, std::move(inputs), Mode::train,
                                group.seeds[i]);
                lsum += ev.scalar_value(net->loss);
                axpy(gsum, T(1), ev.backward(net->loss));
            }
            const T bn = static_cast<T>(group.patches.size());
            scale(gsum, T(1) / bn);
            lsum /= static_cast<double>(group.patches.size());
            if (total.size() == 0)
                total = std::move(gsum);
            else
                axpy(total, T(1), gsum);
            loss_total += lsum;
        }
        scale(total, static_cast<T>(1.0 / gn));
        loss_total /= gn;
        return {static_cast<T>(loss_total), std::move(total)};
    }
};

// ---------------------------------------------------------------------------
// training procedures
// ---------------------------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    double f_loss = 0;
    double g_loss = std::numeric_limits<double>::quiet_NaN(); // NaN = not evaluated
    double val_dice = 0;
    std::string checkpoint_path;
};

template <typename T>
struct TrainResult {
    ParamSet<T> best_params;
    double best_val_dice = -1.0;
    int best_epoch = -1;
    std::vector<EpochLog> log;
    std::set<std::string> sampled_domains;
};

// Mean post-processed Dice over the validation subjects, with
// non-overlapping windows to keep per-epoch selection cheap.
template <typename T>
double validation_dice(const Network& net, const ParamSet<T>& params,
                       const std::vector<Subject>& validation) {
    double acc = 0;
    for (const Subject& s : validation) {
        const Volume norm = standardize_normalize(s.volume);
        LabelMap pred = sliding_window_predict(net, params, norm, net.config.patch_extent,
                                               net.config.patch_extent);
        pred = largest_connected_component(pred);
        acc += dice(pred, s.label);
    }
    return acc / static_cast<double>(validation.size());
}

namespace detail {

inline std::vector<int64_t> draw_batch(int64_t pool_size, int batch, Rng& rng) {
    std::vector<int64_t> idx(static_cast<size_t>(batch));
    for (auto& i : idx) i = rng.uniform_int(0, pool_size - 1);
    return idx;
}

inline int64_t iterations_per_epoch(int64_t total_patches, int batch, int64_t n_domains) {
    const int64_t denom = static_cast<int64_t>(batch) * n_domains;
    return (total_patches + denom - 1) / denom;
}

template <typename T>
typename BatchLoss<T>::Group make_group(const DomainPool& pool, int batch, uint64_t run_seed,
                                        int epoch, int64_t iter, uint64_t slot,
                                        std::set<std::string>* sampled) {
    typename BatchLoss<T>::Group group;
    Rng rng(seed_fold(run_seed, "batch", static_cast<uint64_t>(epoch),
                      static_cast<uint64_t>(iter), slot));
    for (int64_t i : draw_batch(static_cast<int64_t>(pool.patches.size()), batch, rng)) {
        const PatchPair& p = pool.patches[static_cast<size_t>(i)];
        group.patches.push_back(&p);
        group.seeds.push_back(seed_fold(run_seed, "drop", static_cast<uint64_t>(epoch),
                                        static_cast<uint64_t>(iter), slot,
                                        static_cast<uint64_t>(group.patches.size() - 1)));
        if (sampled) sampled->insert(p.domain);
    }
    return group;
}

template <typename T>
void finish_epoch(TrainResult<T>& result, const Network& net, const ParamSet<T>& params,
                  const std::vector<Subject>& validation, int epoch, double f_loss,
                  double g_loss,
                  const std::function<std::string(const ParamSet<T>&, int)>& save_best) {
    EpochLog entry;
    entry.epoch = epoch;
    entry.f_loss = f_loss;
    entry.g_loss = g_loss;
    entry.val_dice = validation_dice(net, params, validation);
    if (entry.val_dice > result.best_val_dice) {
        result.best_val_dice = entry.val_dice;
        result.best_epoch = epoch;
        result.best_params = params;
        if (save_best) entry.checkpoint_path = save_best(params, epoch);
    }
    result.log.push_back(std::move(entry));
}

} // namespace detail

// Episodic meta-learning over the source domains: per iteration the sources
// split into meta-train/meta-test, F is the mean of per-meta-train-domain
// batch losses, G the meta-test batch loss at the inner-updated parameters,
// and the combined meta gradient drives one optimizer step. Returns the
// parameters with the highest validation Dice.
template <typename T>
TrainResult<T> mldg_train(const std::vector<Domain>& domains, const Network& net,
                          ParamSet<T> params, const TrainConfig& cfg,
                          const std::vector<Subject>& validation,
                          const std::function<std::string(const ParamSet<T>&, int)>& save_best = {},
                          const SplitFn& split_fn = {}) {
    cfg.validate();
    if (domains.size() < 2) throw ConfigError("mldg_train requires >= 2 source domains");
    if (validation.empty()) throw DataError("validation set is empty");

    std::vector<DomainPool> pools;
    std::vector<std::string> names;
    int64_t total = 0;
    for (const Domain& d : domains) {
        pools.push_back(build_domain_pool(d, net.config.patch_extent, cfg));
        names.push_back(d.name);
        total += static_cast<int64_t>(pools.back().patches.size());
    }
    const auto pool_of = [&](const std::string& name) -> const DomainPool& {
        for (const auto& p : pools)
            if (p.domain == name) return p;
        throw ContractError("split references unknown domain '" + name + "'");
    };

    const int64_t iters =
        detail::iterations_per_epoch(total, cfg.batch_size, static_cast<int64_t>(domains.size()));
    OptimizerState<T> opt = make_optimizer_state(params);
    TrainResult<T> result;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double f_acc = 0, g_acc = 0;
        int64_t g_count = 0;
        for (int64_t it = 0; it < iters; ++it) {
            Rng split_rng(seed_fold(cfg.seed, "split", static_cast<uint64_t>(epoch),
                                    static_cast<uint64_t>(it)));
            const DomainSplit split =
                split_fn ? split_fn(names, split_rng) : meta_split(names, split_rng);
            if (split.meta_test.empty() || split.meta_train.empty())
                throw ContractError("domain split must leave both sides non-empty");

            BatchLoss<T> f_loss;
            f_loss.net = &net;
            for (size_t s = 0; s < split.meta_train.size(); ++s)
                f_loss.groups.push_back(detail::make_group<T>(
                    pool_of(split.meta_train[s]), cfg.batch_size, cfg.seed, epoch, it,
                    static_cast<uint64_t>(s), &result.sampled_domains));
            BatchLoss<T> g_loss;
            g_loss.net = &net;
            if (cfg.beta != 0.0)
                for (size_t s = 0; s < split.meta_test.size(); ++s)
                    g_loss.groups.push_back(detail::make_group<T>(
                        pool_of(split.meta_test[s]), cfg.batch_size, cfg.seed, epoch, it,
                        1000000 + static_cast<uint64_t>(s), &result.sampled_domains));

            MetaGradient<T> mg = meta_gradient(f_loss, g_loss, params, cfg);
            outer_step(params, mg.grad, opt, cfg);
            f_acc += mg.f_value;
            if (mg.g_evaluated) {
                g_acc += mg.g_value;
                ++g_count;
            }
        }
        detail::finish_epoch(result, net, params, validation, epoch,
                             f_acc / static_cast<double>(iters),
                             g_count ? g_acc / static_cast<double>(g_count)
                                     : std::numeric_limits<double>::quiet_NaN(),
                             save_best);
    }
    return result;
}

// Vanilla pooled-source training: one batch of batch_size x #domains patches
// per iteration from the union of source subjects, single GDL loss.
template <typename T>
TrainResult<T> baseline_train(const std::vector<Domain>& domains, const Network& net,
                              ParamSet<T> params, const TrainConfig& cfg,
                              const std::vector<Subject>& validation,
                              const std::function<std::string(const ParamSet<T>&, int)>&
                                  save_best = {}) {
    cfg.validate();
    if (domains.empty()) throw ConfigError("baseline_train requires >= 1 source domain");
    if (validation.empty()) throw DataError("validation set is empty");

    DomainPool pooled;
    pooled.domain = "(pooled)";
    for (const Domain& d : domains) {
        DomainPool dp = build_domain_pool(d, net.config.patch_extent, cfg);
        for (auto& p : dp.patches) pooled.patches.push_back(std::move(p));
    }
    const int64_t iters = detail::iterations_per_epoch(
        static_cast<int64_t>(pooled.patches.size()), cfg.batch_size,
        static_cast<int64_t>(domains.size()));
    const int batch_total = cfg.batch_size * static_cast<int>(domains.size());

    OptimizerState<T> opt = make_optimizer_state(params);
    TrainResult<T> result;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double f_acc = 0;
        for (int64_t it = 0; it < iters; ++it) {
            BatchLoss<T> loss;
            loss.net = &net;
            loss.groups.push_back(detail::make_group<T>(pooled, batch_total, cfg.seed, epoch, it,
                                                        0, &result.sampled_domains));
            auto [value, grad] = loss(params);
            outer_step(params, grad, opt, cfg);
            f_acc += value;
        }
        detail::finish_epoch(result, net, params, validation, epoch,
                             f_acc / static_cast<double>(iters),
                             std::numeric_limits<double>::quiet_NaN(), save_best);
    }
    return result;
}

// Upper-bound reference: identical to baseline_train but trained on the
// held-out domain's training subjects only.
template <typename T>
TrainResult<T> oracle_train(const Domain& target_domain, const Network& net, ParamSet<T> params,
                            const TrainConfig& cfg, const std::vector<Subject>& validation,
                            const std::function<std::string(const ParamSet<T>&, int)>& save_best =
                                {}) {
    return baseline_train(std::vector<Domain>{target_domain}, net, std::move(params), cfg,
                          validation, save_best);
}

template <typename T>
struct KshotResult {
    ParamSet<T> params;
    std::vector<double> epoch_losses;
    int64_t patches_used = 0;
};

// Decoder-only fine-tuning on exactly kshot_patches_per_subject patches per
// target subject, fresh optimizer state, encoder and bottleneck frozen.
template <typename T>
KshotResult<T> kshot_finetune(ParamSet<T> params, const std::vector<Subject>& target_subjects,
                              const Network& net, const TrainConfig& cfg) {
    cfg.validate();
    if (target_subjects.empty()) throw ConfigError("k-shot fine-tuning requires k >= 1 subjects");
    if (params.size() != net.graph.param_slots.size())
        throw ContractError("checkpoint not congruent with the network");
    for (size_t i = 0; i < params.size(); ++i)
        if (params.entries[i].first != net.graph.param_slots[i].first ||
            params.entries[i].second.shape != net.graph.param_slots[i].second)
            throw ContractError("checkpoint not congruent with the network");

    const FreezeMask mask = encoder_bottleneck_freeze_mask(params);
    DomainPool pool;
    pool.domain = "(kshot)";
    for (const Subject& s : target_subjects) {
        Subject pre{s.id, standardize_normalize(s.volume), s.label};
        Rng prng(seed_fold(cfg.seed, "kshot", s.id));
        auto patches =
            sample_patches(pre, cfg.kshot_patches_per_subject, net.config.patch_extent, prng);
        for (auto& p : patches) {
            p.domain = "(kshot)";
            pool.patches.push_back(std::move(p));
        }
    }

    OptimizerState<T> opt = make_optimizer_state(params);
    const int64_t iters = detail::iterations_per_epoch(
        static_cast<int64_t>(pool.patches.size()), cfg.batch_size, 1);
    KshotResult<T> result;
    result.patches_used = static_cast<int64_t>(pool.patches.size());
    for (int epoch = 1; epoch <= cfg.finetune_epochs; ++epoch) {
        double acc = 0;
        for (int64_t it = 0; it < iters; ++it) {
            BatchLoss<T> loss;
            loss.net = &net;
            loss.groups.push_back(
                detail::make_group<T>(pool, cfg.batch_size, cfg.seed, epoch, it, 0, nullptr));
            auto [value, grad] = loss(params);
            outer_step(params, grad, opt, cfg, &mask);
            acc += value;
        }
        result.epoch_losses.push_back(acc / static_cast<double>(iters));
    }
    result.params = std::move(params);
    return result;
}

} // namespace metaseg
