#pragma once

#include "ltp/core.hpp"
#include "ltp/nn.hpp"
#include "ltp/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ltp {

enum class Regularizer { soft_l0, l2, l1, none };

Regularizer parse_regularizer(std::string_view s);
std::string_view to_string(Regularizer r);

struct RunConfig {
    std::string model = "mlp3";
    // "blobs" (seeded synthetic) or "idx" (data_dir holding IDX files)
    std::string dataset = "blobs";
    std::string data_dir;
    std::size_t classes = 10;
    InputSpec input{1, 28, 28};
    std::size_t samples_per_class = 200;
    double noise = 0.2;
    std::uint64_t seed = 1;

    int pretrain_epochs = 0;
    int prune_epochs = 10;
    int finetune_epochs = 0;
    std::size_t batch_size = 64;
    double lr = 0.05;
    double momentum = 0.9;
    double finetune_lr = 0.01;

    LtpHyperParams ltp;
    Regularizer regularizer = Regularizer::soft_l0;
    std::optional<double> target_keep_ratio;
    std::vector<std::string> exempt_layers;
    double tau_init = 0.0;
    bool temp_recompute = false;
    Precision precision = Precision::f64;
    bool validate_numerics = false;
    std::string out_dir;

    void validate() const;
};

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::size_t line, const std::string& msg)
        : std::runtime_error(line ? "config line " + std::to_string(line) + ": " + msg : "config: " + msg),
          line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// `key = value` lines; '#' starts a comment. Unknown or repeated keys are errors.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& cfg);

std::string format_double(double v);

} // namespace ltp
