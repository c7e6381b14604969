#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace ltp {

struct LayerStat {
    std::size_t layer_id = 0;
    std::string name;
    double tau = 0.0;
    double temp = 0.0;
    double keep_ratio = 0.0;
    double mean_w_sq = 0.0;
    std::size_t transitional = 0;
    std::size_t kept = 0;
    std::size_t total = 0;
};

// One row of the trail. keep_ratio is a hard-prune recount at the current
// thresholds. top5 is NaN when the task has fewer than five classes.
struct TrailCheckpoint {
    int epoch = 0;
    double keep_ratio = 1.0;
    double train_loss = 0.0;
    double train_top1 = 0.0;
    double val_loss = 0.0;
    double top1 = 0.0;
    double top5 = 0.0;
    double hard_top1 = 0.0; // validation top1 with thresholds applied as a hard step
    double lambda = 0.0;
    double soft_l0_total = 0.0;
    std::vector<LayerStat> per_layer;
};

inline constexpr const char* kRunLogHeader =
    "epoch,lambda,keep_ratio,soft_l0_total,train_loss,train_top1,val_loss,val_top1,val_top5";
inline constexpr const char* kLayerLogHeader = "epoch,layer_id,tau,temp,layer_keep_ratio,mean_w_sq";

// Appends to run_log.csv and layers.csv in `dir`, writing the headers once.
class RunLog {
public:
    explicit RunLog(const std::filesystem::path& dir);
    void append(const TrailCheckpoint& row);

private:
    std::ofstream run_;
    std::ofstream layers_;
};

std::string format_run_row(const TrailCheckpoint& row);
std::vector<std::string> format_layer_rows(const TrailCheckpoint& row);

} // namespace ltp
