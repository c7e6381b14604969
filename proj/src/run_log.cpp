#include "ltp/run_log.hpp"

#include "ltp/config.hpp"

#include <cmath>
#include <stdexcept>

namespace ltp {

namespace {

std::string num(double v) {
    return std::isnan(v) ? std::string() : format_double(v);
}

} // namespace

std::string format_run_row(const TrailCheckpoint& r) {
    return std::to_string(r.epoch) + ',' + num(r.lambda) + ',' + num(r.keep_ratio) + ',' + num(r.soft_l0_total) + ',' +
           num(r.train_loss) + ',' + num(r.train_top1) + ',' + num(r.val_loss) + ',' + num(r.top1) + ',' + num(r.top5);
}

std::vector<std::string> format_layer_rows(const TrailCheckpoint& r) {
    std::vector<std::string> out;
    for (const auto& l : r.per_layer) {
        out.push_back(std::to_string(r.epoch) + ',' + std::to_string(l.layer_id) + ',' + num(l.tau) + ',' + num(l.temp) +
                      ',' + num(l.keep_ratio) + ',' + num(l.mean_w_sq));
    }
    return out;
}

RunLog::RunLog(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    run_.open(dir / "run_log.csv", std::ios::trunc);
    layers_.open(dir / "layers.csv", std::ios::trunc);
    if (!run_ || !layers_) {
        throw std::runtime_error("cannot open run logs in " + dir.string());
    }
    run_ << kRunLogHeader << '\n';
    layers_ << kLayerLogHeader << '\n';
}

void RunLog::append(const TrailCheckpoint& row) {
    run_ << format_run_row(row) << '\n';
    for (const auto& l : format_layer_rows(row)) {
        layers_ << l << '\n';
    }
    run_.flush();
    layers_.flush();
}

} // namespace ltp
