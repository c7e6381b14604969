#include "ltp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace ltp {

namespace {

class PrecisionScope {
public:
    PrecisionScope(Precision p, bool validate) : prev_p_(precision()), prev_v_(validation()) {
        set_precision(p);
        set_validation(validate);
    }
    ~PrecisionScope() {
        set_precision(prev_p_);
        set_validation(prev_v_);
    }

private:
    Precision prev_p_;
    bool prev_v_;
};

// Momentum SGD over Model::parameters(), no weight decay.
class Sgd {
public:
    Sgd(const Model& model, double lr, double momentum) : lr_(lr), momentum_(momentum) {
        for (const auto& p : model.parameters()) {
            buf_.emplace_back(p.tensor.numel(), 0.0);
        }
    }

    void step(std::vector<NamedTensor>& params, const std::vector<std::vector<double>>& grads) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto w = params[i].tensor.mutable_data();
            auto& b = buf_[i];
            const auto& g = grads[i];
            for (std::size_t k = 0; k < w.size(); ++k) {
                b[k] = momentum_ * b[k] + g[k];
                w[k] -= lr_ * b[k];
            }
        }
    }

    std::vector<double>& buffer(std::size_t i) { return buf_[i]; }

private:
    double lr_;
    double momentum_;
    std::vector<std::vector<double>> buf_;
};

std::uint64_t shuffle_seed(std::uint64_t seed, std::uint64_t epoch) {
    // any nonzero value; epoch_order treats 0 as "no shuffle"
    return seed * 0x9E3779B97F4A7C15ULL + epoch + 1;
}

// Registry index owning this parameter tensor, or -1.
std::vector<int> registry_index(const Model& model, const std::vector<NamedTensor>& params) {
    std::vector<int> out(params.size(), -1);
    const auto& reg = model.registry();
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t r = 0; r < reg.size(); ++r) {
            if (params[i].tensor.same_node(reg[r].w)) {
                out[i] = static_cast<int>(r);
            }
        }
    }
    return out;
}

std::vector<double> copy_grad(const Tensor& t) {
    auto g = t.grad();
    if (g.empty()) {
        return std::vector<double>(t.numel(), 0.0);
    }
    return {g.begin(), g.end()};
}

struct EpochTotals {
    double loss = 0.0;
    std::size_t correct = 0;
    std::size_t seen = 0;
    bool diverged = false;
};

void zero_all(std::vector<NamedTensor>& params) {
    for (auto& p : params) {
        p.tensor.zero_grad();
    }
}

void record_batch(EpochTotals& tot, const Tensor& logits, const Tensor& loss, const Batch& b) {
    const double l = loss.item();
    tot.loss += l * static_cast<double>(b.labels.size());
    tot.correct += topk_hits(logits, b.labels, 1);
    tot.seen += b.labels.size();
}

struct PruneStepContext {
    const RunConfig& cfg;
    double lambda;
};

void prune_epoch(Model& model, const Dataset& train, Sgd& opt, const PruneStepContext& ctx, std::uint64_t epoch,
                 EpochTotals& tot) {
    const auto& cfg = ctx.cfg;
    auto params = model.parameters();
    const auto owner = registry_index(model, params);
    const double lambda_l0 = cfg.regularizer == Regularizer::soft_l0 ? ctx.lambda : 0.0;
    const double eta_tau = cfg.ltp.lr_ratio * cfg.lr;
    const ClampSpec clamp{cfg.lr, cfg.ltp.clamp_kappa};

    const auto order = epoch_order(train.size(), shuffle_seed(cfg.seed, epoch));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const auto end = std::min(order.size(), start + cfg.batch_size);
        const auto batch = make_batch(train, std::span(order).subspan(start, end - start));
        zero_all(params);

        auto eff = model.effective_weights(cfg.ltp.grad_mode);
        const auto logits = model.forward(batch.inputs, true, eff);
        const auto loss = softmax_cross_entropy(logits, batch.labels);
        if (!std::isfinite(loss.item())) {
            tot.diverged = true;
            return;
        }
        backward(loss);
        record_batch(tot, logits, loss, batch);

        auto& reg = model.registry();
        std::vector<std::vector<double>> grads(params.size());
        std::vector<double> new_tau(reg.size());
        for (std::size_t r = 0; r < reg.size(); ++r) {
            new_tau[r] = reg[r].tau;
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            const int r = owner[i];
            if (r < 0 || reg[r].exempt) {
                grads[i] = copy_grad(params[i].tensor);
                continue;
            }
            auto& p = reg[r];
            std::vector<double> g;
            if (p.mode == PruneMode::soft) {
                const auto dL_dv = copy_grad(eff[r]);
                g = weight_grad(p, dL_dv, lambda_l0, cfg.ltp.grad_mode, clamp);
                new_tau[r] = threshold_step(p, dL_dv, lambda_l0, eta_tau);
            } else {
                g = copy_grad(params[i].tensor);
            }
            auto w = p.w.data();
            if (cfg.regularizer == Regularizer::l2) {
                for (std::size_t k = 0; k < g.size(); ++k) {
                    g[k] += 2.0 * ctx.lambda * w[k];
                }
            } else if (cfg.regularizer == Regularizer::l1) {
                for (std::size_t k = 0; k < g.size(); ++k) {
                    g[k] += ctx.lambda * static_cast<double>((w[k] > 0) - (w[k] < 0));
                }
            }
            grads[i] = std::move(g);
        }
        opt.step(params, grads);
        for (std::size_t r = 0; r < reg.size(); ++r) {
            reg[r].tau = new_tau[r];
        }
    }
}

void dense_epoch(Model& model, const Dataset& train, Sgd& opt, std::size_t batch_size, std::uint64_t seed,
                 EpochTotals& tot, const std::vector<std::vector<std::uint8_t>*>& masks) {
    auto params = model.parameters();
    const auto order = epoch_order(train.size(), seed);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const auto end = std::min(order.size(), start + batch_size);
        const auto batch = make_batch(train, std::span(order).subspan(start, end - start));
        zero_all(params);
        const auto logits = model.forward(batch.inputs, true);
        const auto loss = softmax_cross_entropy(logits, batch.labels);
        if (!std::isfinite(loss.item())) {
            tot.diverged = true;
            return;
        }
        backward(loss);
        record_batch(tot, logits, loss, batch);
        std::vector<std::vector<double>> grads(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            grads[i] = copy_grad(params[i].tensor);
            if (masks[i]) {
                for (std::size_t k = 0; k < grads[i].size(); ++k) {
                    if (!(*masks[i])[k]) {
                        grads[i][k] = 0.0;
                    }
                }
            }
        }
        opt.step(params, grads);
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!masks[i]) {
                continue;
            }
            auto w = params[i].tensor.mutable_data();
            auto& b = opt.buffer(i);
            for (std::size_t k = 0; k < w.size(); ++k) {
                if (!(*masks[i])[k]) {
                    w[k] = 0.0;
                    b[k] = 0.0;
                }
            }
        }
    }
}

std::vector<std::vector<std::uint8_t>*> mask_table(Model& model, const std::vector<NamedTensor>& params) {
    const auto owner = registry_index(model, params);
    std::vector<std::vector<std::uint8_t>*> out(params.size(), nullptr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (owner[i] >= 0) {
            auto& p = model.registry()[owner[i]];
            if (!p.mask.empty()) {
                out[i] = &p.mask;
            }
        }
    }
    return out;
}

void begin_pruning(Model& model, const RunConfig& cfg) {
    for (auto& p : model.registry()) {
        if (p.exempt) {
            continue;
        }
        p.temp = per_layer_temperature(p.w.data(), cfg.ltp.T0);
        p.tau = cfg.tau_init;
        p.mode = PruneMode::soft;
    }
}

Checkpoint make_checkpoint(const Model& model, const RunConfig& cfg, const PruneResult& res) {
    Checkpoint ck;
    ck.model = model;
    ck.config_text = serialize_config(cfg);
    ck.norm_mean = res.norm_mean;
    ck.norm_std = res.norm_std;
    return ck;
}

void add_trail_meta(Checkpoint& ck, const TrailCheckpoint& t) {
    ck.meta["epoch"] = std::to_string(t.epoch);
    ck.meta["keep_ratio"] = format_double(t.keep_ratio);
    ck.meta["top1"] = format_double(t.top1);
    ck.meta["hard_top1"] = format_double(t.hard_top1);
    ck.meta["val_loss"] = format_double(t.val_loss);
    ck.meta["lambda"] = format_double(t.lambda);
}

std::string epoch_file(int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "epoch_%03d.ckpt", epoch);
    return buf;
}

} // namespace

std::size_t topk_hits(const Tensor& logits, std::span<const int> labels, std::size_t k) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw std::invalid_argument("topk_hits: logits " + shape_str(logits.shape()) + " vs " +
                                    std::to_string(labels.size()) + " labels");
    }
    const auto n = logits.dim(0);
    const auto c = logits.dim(1);
    auto d = logits.data();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double target = d[i * c + static_cast<std::size_t>(labels[i])];
        // rank = number of classes scoring strictly higher, ties resolved toward the lower index
        std::size_t rank = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const double v = d[i * c + j];
            if (v > target || (v == target && j < static_cast<std::size_t>(labels[i]))) {
                ++rank;
            }
        }
        hits += rank < k ? 1 : 0;
    }
    return hits;
}

EvalResult evaluate(Model& model, const Dataset& data, std::size_t batch_size) {
    NoGradGuard guard;
    EvalResult r;
    if (data.size() == 0) {
        throw std::invalid_argument("evaluate: empty dataset");
    }
    const auto order = epoch_order(data.size(), 0);
    double loss = 0.0;
    std::size_t h1 = 0, h5 = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const auto end = std::min(order.size(), start + batch_size);
        const auto batch = make_batch(data, std::span(order).subspan(start, end - start));
        const auto logits = model.forward(batch.inputs, false);
        loss += softmax_cross_entropy(logits, batch.labels).item() * static_cast<double>(batch.labels.size());
        h1 += topk_hits(logits, batch.labels, 1);
        h5 += topk_hits(logits, batch.labels, 5);
    }
    const auto n = static_cast<double>(data.size());
    r.loss = loss / n;
    r.top1 = static_cast<double>(h1) / n;
    r.top5 = model.classes() >= 5 ? static_cast<double>(h5) / n : std::numeric_limits<double>::quiet_NaN();
    return r;
}

DatasetPair load_data(const RunConfig& cfg) {
    DatasetPair d;
    if (cfg.dataset == "blobs") {
        d = synthetic_blobs(cfg.seed, cfg.classes, cfg.input, cfg.samples_per_class, cfg.noise);
    } else if (cfg.dataset == "idx") {
        d = load_idx_dir(cfg.data_dir, cfg.classes);
        if (!(d.train.shape == cfg.input)) {
            throw std::invalid_argument("idx data in " + cfg.data_dir + " does not match configured input");
        }
    } else {
        throw std::invalid_argument("unknown dataset '" + cfg.dataset + "'");
    }
    normalize_from_train(d);
    return d;
}

std::vector<LayerStat> layer_stats(const Model& model) {
    std::vector<LayerStat> out;
    const auto& reg = model.registry();
    for (std::size_t i = 0; i < reg.size(); ++i) {
        const auto& p = reg[i];
        if (p.exempt) {
            continue;
        }
        LayerStat s;
        s.layer_id = i;
        s.name = p.name;
        s.tau = p.tau;
        s.temp = p.temp;
        s.total = p.w.numel();
        s.kept = p.kept_count();
        s.keep_ratio = static_cast<double>(s.kept) / static_cast<double>(s.total);
        double sq = 0.0;
        for (double v : p.w.data()) {
            sq += v * v;
        }
        s.mean_w_sq = sq / static_cast<double>(s.total);
        s.transitional = transitional_count(p.w.data(), p.tau, p.temp);
        out.push_back(s);
    }
    return out;
}

double transitional_occupancy(const Model& model) {
    std::size_t n = 0, total = 0;
    for (const auto& s : layer_stats(model)) {
        n += s.transitional;
        total += s.total;
    }
    return total == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(total);
}

double soft_l0_total(const Model& model) {
    double acc = 0.0;
    for (const auto& p : model.registry()) {
        if (!p.exempt) {
            acc += soft_l0(p.w.data(), p.tau, p.temp);
        }
    }
    return acc;
}

void train_dense(Model& model, const Dataset& train, int epochs, double lr, double momentum, std::size_t batch_size,
                 std::uint64_t seed) {
    Sgd opt(model, lr, momentum);
    auto params = model.parameters();
    const auto masks = mask_table(model, params);
    for (int e = 0; e < epochs; ++e) {
        EpochTotals tot;
        dense_epoch(model, train, opt, batch_size, shuffle_seed(seed, static_cast<std::uint64_t>(e)), tot, masks);
        if (tot.diverged) {
            throw std::runtime_error("train_dense: loss became non-finite in epoch " + std::to_string(e));
        }
    }
}

PruneResult prune_run(const RunConfig& cfg, const EpochCallback& on_epoch) {
    return prune_run(cfg, load_data(cfg), on_epoch);
}

PruneResult prune_run(const RunConfig& cfg, const DatasetPair& data, const EpochCallback& on_epoch) {
    cfg.validate();
    PrecisionScope scope(cfg.precision, cfg.validate_numerics);
    PruneResult res;
    res.norm_mean = data.train.norm_mean;
    res.norm_std = data.train.norm_std;

    Model model = model_zoo::build(cfg.model, cfg.input, cfg.classes, cfg.seed);
    model.exempt_layers(cfg.exempt_layers);

    const bool write = !cfg.out_dir.empty();
    const std::filesystem::path dir = cfg.out_dir;
    std::optional<RunLog> log;
    if (write) {
        std::filesystem::create_directories(dir);
        log.emplace(dir);
    }

    Sgd opt(model, cfg.lr, cfg.momentum);
    std::uint64_t epoch_counter = 0;
    {
        auto params = model.parameters();
        const std::vector<std::vector<std::uint8_t>*> no_masks(params.size(), nullptr);
        for (int e = 0; e < cfg.pretrain_epochs; ++e) {
            EpochTotals tot;
            dense_epoch(model, data.train, opt, cfg.batch_size, shuffle_seed(cfg.seed, epoch_counter++), tot, no_masks);
            if (tot.diverged) {
                res.diverged = true;
                res.stop_reason = "diverged during pretraining";
                res.model = model;
                res.initial = model;
                return res;
            }
        }
    }

    begin_pruning(model, cfg);
    res.initial = model;
    if (write) {
        save_checkpoint(dir / "initial.ckpt", make_checkpoint(model, cfg, res));
    }

    LambdaState lam = initial_lambda_state(cfg.ltp, model.keep_ratio());
    res.stop_reason = "epoch budget";
    for (int e = 1; e <= cfg.prune_epochs; ++e) {
        Model before = model;
        EpochTotals tot;
        prune_epoch(model, data.train, opt, {cfg, lam.lambda}, epoch_counter++, tot);
        if (tot.diverged) {
            model = std::move(before);
            res.diverged = true;
            res.stop_reason = "loss became non-finite in epoch " + std::to_string(e);
            break;
        }

        TrailCheckpoint t;
        t.epoch = e;
        t.lambda = lam.lambda;
        t.train_loss = tot.loss / static_cast<double>(tot.seen);
        t.train_top1 = static_cast<double>(tot.correct) / static_cast<double>(tot.seen);
        const auto soft = evaluate(model, data.val);
        t.val_loss = soft.loss;
        t.top1 = soft.top1;
        t.top5 = soft.top5;
        {
            Model hard = model;
            hard.set_prune_mode(PruneMode::hard);
            t.hard_top1 = evaluate(hard, data.val).top1;
        }
        t.keep_ratio = model.keep_ratio();
        t.soft_l0_total = soft_l0_total(model);
        t.per_layer = layer_stats(model);

        lam = lambda_step(lam, cfg.ltp, t.keep_ratio);
        if (cfg.temp_recompute) {
            for (auto& p : model.registry()) {
                if (!p.exempt) {
                    p.temp = per_layer_temperature(p.w.data(), cfg.ltp.T0);
                }
            }
        }

        res.trail.push_back(t);
        if (write) {
            auto ck = make_checkpoint(model, cfg, res);
            add_trail_meta(ck, t);
            save_checkpoint(dir / epoch_file(e), ck);
            log->append(t);
        }
        if (on_epoch) {
            on_epoch(t);
        }
        if (cfg.target_keep_ratio && t.keep_ratio <= *cfg.target_keep_ratio) {
            res.stop_reason = "target keep ratio reached";
            break;
        }
    }
    res.model = std::move(model);

    for (std::size_t i = 0; i < res.trail.size(); ++i) {
        const auto& t = res.trail[i];
        if (cfg.target_keep_ratio && t.keep_ratio > *cfg.target_keep_ratio) {
            continue;
        }
        if (!res.best || t.top1 > res.trail[*res.best].top1) {
            res.best = i;
        }
    }
    if (write && res.best) {
        std::filesystem::copy_file(dir / epoch_file(res.trail[*res.best].epoch), dir / "best.ckpt",
                                   std::filesystem::copy_options::overwrite_existing);
    }
    return res;
}

Model finalize(const Model& in) {
    Model m = in;
    for (auto& p : m.registry()) {
        if (p.exempt) {
            continue;
        }
        auto w = p.w.mutable_data();
        if (p.mode != PruneMode::hard || p.mask.empty()) {
            p.mask.assign(w.size(), 0);
            for (std::size_t k = 0; k < w.size(); ++k) {
                p.mask[k] = is_kept(w[k], p.tau) ? 1 : 0;
            }
        }
        for (std::size_t k = 0; k < w.size(); ++k) {
            if (!p.mask[k]) {
                w[k] = 0.0;
            }
        }
        p.mode = PruneMode::hard;
    }
    return m;
}

Model finetune(Model model, const Dataset& train, const FinetuneOptions& opt,
               const std::function<void(int, double)>& on_epoch) {
    for (const auto& p : model.registry()) {
        if (!p.exempt && (p.mode != PruneMode::hard || p.mask.empty())) {
            throw std::invalid_argument("finetune: layer " + p.name + " is not finalized");
        }
    }
    Sgd sgd(model, opt.lr, opt.momentum);
    auto params = model.parameters();
    const auto masks = mask_table(model, params);
    for (int e = 0; e < opt.epochs; ++e) {
        EpochTotals tot;
        dense_epoch(model, train, sgd, opt.batch_size, shuffle_seed(opt.seed, 1000 + static_cast<std::uint64_t>(e)), tot,
                    masks);
        if (tot.diverged) {
            throw std::runtime_error("finetune: loss became non-finite in epoch " + std::to_string(e + 1));
        }
        if (on_epoch) {
            on_epoch(e + 1, tot.loss / static_cast<double>(tot.seen));
        }
    }
    return model;
}

Model global_magnitude_prune(const Model& in, double keep_ratio) {
    if (!(keep_ratio >= 0.0 && keep_ratio <= 1.0)) {
        throw std::invalid_argument("global_magnitude_prune: keep_ratio must lie in [0, 1]");
    }
    Model m = in;
    struct Entry {
        double mag;
        std::size_t layer;
        std::size_t index;
    };
    std::vector<Entry> all;
    auto& reg = m.registry();
    for (std::size_t r = 0; r < reg.size(); ++r) {
        if (reg[r].exempt) {
            continue;
        }
        auto w = reg[r].w.data();
        for (std::size_t k = 0; k < w.size(); ++k) {
            all.push_back({std::fabs(w[k]), r, k});
        }
    }
    const auto keep = static_cast<std::size_t>(std::llround(keep_ratio * static_cast<double>(all.size())));
    std::stable_sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.mag > b.mag; });
    for (auto& p : reg) {
        if (!p.exempt) {
            p.mask.assign(p.w.numel(), 0);
            p.tau = 0.0;
        }
    }
    for (std::size_t i = 0; i < keep; ++i) {
        reg[all[i].layer].mask[all[i].index] = 1;
    }
    // tau = largest pruned w^2 per layer, so the mask reads as a threshold too
    for (std::size_t i = keep; i < all.size(); ++i) {
        auto& p = reg[all[i].layer];
        p.tau = std::max(p.tau, all[i].mag * all[i].mag);
    }
    for (auto& p : reg) {
        if (!p.exempt) {
            p.mode = PruneMode::hard;
        }
    }
    return finalize(m);
}

} // namespace ltp
