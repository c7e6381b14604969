#pragma once

#include "ltp/checkpoint.hpp"
#include "ltp/config.hpp"
#include "ltp/data.hpp"
#include "ltp/nn.hpp"
#include "ltp/run_log.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ltp {

struct EvalResult {
    double loss = 0.0;
    double top1 = 0.0; // fractions in [0,1]
    double top5 = 0.0; // NaN with fewer than five classes
};

// Fixed batch order, no tape, batchnorm in eval mode. Uses each registry
// entry's current prune mode.
EvalResult evaluate(Model& model, const Dataset& data, std::size_t batch_size = 256);

// Top-k hits for a [N, classes] logits tensor.
std::size_t topk_hits(const Tensor& logits, std::span<const int> labels, std::size_t k);

DatasetPair load_data(const RunConfig& cfg);

// Non-exempt registry entries only.
std::vector<LayerStat> layer_stats(const Model& model);
// Fraction of prunable weights with |w^2 - tau| <= T.
double transitional_occupancy(const Model& model);
double soft_l0_total(const Model& model);

struct PruneResult {
    std::vector<TrailCheckpoint> trail;
    Model model{"", {}, 0};   // state after the last completed epoch
    Model initial{"", {}, 0}; // state when pruning started
    std::optional<std::size_t> best; // index into trail
    bool diverged = false;
    std::string stop_reason;
    double norm_mean = 0.0;
    double norm_std = 1.0;
};

using EpochCallback = std::function<void(const TrailCheckpoint&)>;

// Dense pretraining (pretrain_epochs), then soft-pruning with learned
// thresholds until the epoch budget or target keep ratio is reached. With a
// non-empty out_dir every epoch is written as epoch_NNN.ckpt alongside
// initial.ckpt, best.ckpt, run_log.csv and layers.csv.
PruneResult prune_run(const RunConfig& cfg, const DatasetPair& data, const EpochCallback& on_epoch = {});
PruneResult prune_run(const RunConfig& cfg, const EpochCallback& on_epoch = {});

// Sets every pruned weight to exact zero and freezes the keep mask.
// Already-finalized layers keep their mask.
Model finalize(const Model& model);

struct FinetuneOptions {
    int epochs = 1;
    double lr = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 64;
    std::uint64_t seed = 1;
};

// Plain cross-entropy on a finalized model. Masked weights and their momentum
// stay exactly zero; thresholds do not move.
Model finetune(Model model, const Dataset& train, const FinetuneOptions& opt,
               const std::function<void(int, double)>& on_epoch = {});

// One-shot: keeps the `keep_ratio` fraction of largest-magnitude weights
// across all non-exempt layers and finalizes the result.
Model global_magnitude_prune(const Model& model, double keep_ratio);

// Plain dense training with the same optimizer as the pruning phase.
void train_dense(Model& model, const Dataset& train, int epochs, double lr, double momentum, std::size_t batch_size,
                 std::uint64_t seed);

} // namespace ltp
