#pragma once

#include "ltp/core.hpp"
#include "ltp/ops.hpp"
#include "ltp/tensor.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ltp {

struct InputSpec {
    std::size_t channels = 1;
    std::size_t height = 28;
    std::size_t width = 28;

    std::size_t numel() const { return channels * height * width; }
    bool operator==(const InputSpec&) const = default;
};

enum class LayerKind { linear, conv2d, batchnorm2d, relu, avgpool, flatten, residual_block };

struct NamedTensor {
    std::string name;
    Tensor tensor;
    bool prunable = false;
};

struct NamedBuffer {
    std::string name;
    std::vector<double>* values;
};

// Effective (possibly soft- or hard-pruned) weights indexed by registry id.
// An empty span means every layer uses its raw weight.
struct ForwardContext {
    bool training = false;
    std::span<const Tensor> weights;
};

class Layer {
public:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    virtual ~Layer() = default;

    virtual LayerKind kind() const = 0;
    virtual Tensor forward(const Tensor& x, const ForwardContext& ctx) = 0;
    virtual std::unique_ptr<Layer> clone() const = 0;
    virtual void collect_params(std::vector<NamedTensor>& out) const { (void)out; }
    virtual void collect_buffers(std::vector<NamedBuffer>& out) { (void)out; }
    // Weighted layers (linear/conv) that should enter the prunable registry.
    virtual void collect_weighted(std::vector<class WeightedLayer*>& out) { (void)out; }

    const std::string& name() const { return name_; }

private:
    std::string name_;
};

class WeightedLayer : public Layer {
public:
    using Layer::Layer;
    Tensor weight;
    int registry_id = -1;

    void collect_weighted(std::vector<WeightedLayer*>& out) override { out.push_back(this); }

protected:
    const Tensor& effective_weight(const ForwardContext& ctx) const;
};

class Linear final : public WeightedLayer {
public:
    Linear(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng);
    LayerKind kind() const override { return LayerKind::linear; }
    Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
    std::unique_ptr<Layer> clone() const override;
    void collect_params(std::vector<NamedTensor>& out) const override;

    Tensor bias;

private:
    Linear(const Linear&) = default;
};

class Conv2d final : public WeightedLayer {
public:
    Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
           std::size_t padding, std::mt19937_64& rng);
    LayerKind kind() const override { return LayerKind::conv2d; }
    Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
    std::unique_ptr<Layer> clone() const override;
    void collect_params(std::vector<NamedTensor>& out) const override;

    std::size_t stride;
    std::size_t padding;

private:
    Conv2d(const Conv2d&) = default;
};

class BatchNorm2d final : public Layer {
public:
    BatchNorm2d(std::string name, std::size_t channels);
    LayerKind kind() const override { return LayerKind::batchnorm2d; }
    Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
    std::unique_ptr<Layer> clone() const override;
    void collect_params(std::vector<NamedTensor>& out) const override;
    void collect_buffers(std::vector<NamedBuffer>& out) override;

    Tensor gamma;
    Tensor beta;
    BatchNormStats stats;

private:
    BatchNorm2d(const BatchNorm2d&) = default;
};

class ReLU final : public Layer {
public:
    using Layer::Layer;
    LayerKind kind() const override { return LayerKind::relu; }
    Tensor forward(const Tensor& x, const ForwardContext&) override { return relu(x); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(name()); }
};

// Global when kernel == 0.
class AvgPool final : public Layer {
public:
    AvgPool(std::string name, std::size_t kernel) : Layer(std::move(name)), kernel_(kernel) {}
    LayerKind kind() const override { return LayerKind::avgpool; }
    Tensor forward(const Tensor& x, const ForwardContext&) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPool>(name(), kernel_); }

private:
    std::size_t kernel_;
};

class Flatten final : public Layer {
public:
    using Layer::Layer;
    LayerKind kind() const override { return LayerKind::flatten; }
    Tensor forward(const Tensor& x, const ForwardContext&) override { return flatten(x); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(name()); }
};

// conv-bn-relu-conv-bn plus identity skip, then relu.
class ResidualBlock final : public Layer {
public:
    ResidualBlock(std::string name, std::size_t channels, std::mt19937_64& rng);
    LayerKind kind() const override { return LayerKind::residual_block; }
    Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
    std::unique_ptr<Layer> clone() const override;
    void collect_params(std::vector<NamedTensor>& out) const override;
    void collect_buffers(std::vector<NamedBuffer>& out) override;
    void collect_weighted(std::vector<WeightedLayer*>& out) override;

private:
    ResidualBlock(std::string name) : Layer(std::move(name)) {}
    std::unique_ptr<Conv2d> conv1_, conv2_;
    std::unique_ptr<BatchNorm2d> bn1_, bn2_;
};

class Model {
public:
    Model(std::string name, InputSpec input, std::size_t classes);
    Model(const Model& other);
    Model& operator=(const Model& other);
    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;

    void add(std::unique_ptr<Layer> layer);
    // Assigns registry ids to every linear/conv weight in layer order.
    void build_registry();

    // Forward through explicit effective weights (one per registry entry) or,
    // when `weights` is empty, through raw weights.
    Tensor forward(const Tensor& x, bool training, std::span<const Tensor> weights);
    // Forward using each registry entry's current prune mode.
    Tensor forward(const Tensor& x, bool training);

    // One tensor per registry entry: soft_prune / hard_prune / raw per mode.
    std::vector<Tensor> effective_weights(GradMode grad_mode = GradMode::approx) const;

    std::vector<PrunableParam>& registry() { return registry_; }
    const std::vector<PrunableParam>& registry() const { return registry_; }
    PrunableParam& prunable(std::size_t layer_id);

    std::vector<NamedTensor> parameters() const;
    std::vector<NamedBuffer> buffers();
    const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }

    std::size_t parameter_count() const;
    // Weights counted by sparsity metrics (non-exempt registry entries).
    std::size_t prunable_count() const;
    std::size_t hard_kept_count() const;
    double keep_ratio() const;

    // Marks registry entries whose parameter or layer name matches as exempt.
    void exempt_layers(const std::vector<std::string>& names);
    void set_prune_mode(PruneMode mode);

    const std::string& name() const { return name_; }
    const InputSpec& input() const { return input_; }
    std::size_t classes() const { return classes_; }

private:
    void relink_registry(const std::vector<PrunableParam>& previous);

    std::string name_;
    InputSpec input_;
    std::size_t classes_;
    std::vector<std::unique_ptr<Layer>> layers_;
    std::vector<PrunableParam> registry_;
};

Tensor l2_penalty(const Model& model);
Tensor l1_penalty(const Model& model);

namespace model_zoo {
std::vector<std::string> names();
Model build(const std::string& name, InputSpec input, std::size_t classes, std::uint64_t seed);
} // namespace model_zoo

} // namespace ltp
