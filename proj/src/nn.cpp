#include "ltp/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ltp {

namespace {

Tensor he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
        x = dist(rng);
    }
    return Tensor::from(std::move(v), std::move(shape), true);
}

Tensor deep(const Tensor& t) {
    return t.defined() ? t.clone() : t;
}

} // namespace

const Tensor& WeightedLayer::effective_weight(const ForwardContext& ctx) const {
    if (registry_id >= 0 && !ctx.weights.empty()) {
        return ctx.weights[static_cast<std::size_t>(registry_id)];
    }
    return weight;
}

Linear::Linear(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng) : WeightedLayer(std::move(name)) {
    weight = he_uniform({out, in}, in, rng);
    bias = Tensor::zeros({out}, true);
}

Tensor Linear::forward(const Tensor& x, const ForwardContext& ctx) {
    const auto& w = effective_weight(ctx);
    if (x.rank() != 2 || x.dim(1) != w.dim(1)) {
        throw std::invalid_argument("linear " + name() + ": input " + shape_str(x.shape()) + " vs weight " +
                                    shape_str(w.shape()));
    }
    return add(matmul(x, transpose(w)), bias);
}

std::unique_ptr<Layer> Linear::clone() const {
    std::unique_ptr<Linear> c(new Linear(*this));
    c->weight = deep(weight);
    c->bias = deep(bias);
    return c;
}

void Linear::collect_params(std::vector<NamedTensor>& out) const {
    out.push_back({name() + ".weight", weight, true});
    out.push_back({name() + ".bias", bias, false});
}

Conv2d::Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_,
               std::size_t padding_, std::mt19937_64& rng)
    : WeightedLayer(std::move(name)), stride(stride_), padding(padding_) {
    weight = he_uniform({out, in, kernel, kernel}, in * kernel * kernel, rng);
}

Tensor Conv2d::forward(const Tensor& x, const ForwardContext& ctx) {
    return conv2d(x, effective_weight(ctx), stride, padding);
}

std::unique_ptr<Layer> Conv2d::clone() const {
    std::unique_ptr<Conv2d> c(new Conv2d(*this));
    c->weight = deep(weight);
    return c;
}

void Conv2d::collect_params(std::vector<NamedTensor>& out) const {
    out.push_back({name() + ".weight", weight, true});
}

BatchNorm2d::BatchNorm2d(std::string name, std::size_t channels) : Layer(std::move(name)) {
    gamma = Tensor::full({channels}, 1.0, true);
    beta = Tensor::zeros({channels}, true);
    stats.running_mean.assign(channels, 0.0);
    stats.running_var.assign(channels, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, const ForwardContext& ctx) {
    return batchnorm2d(x, gamma, beta, stats, ctx.training);
}

std::unique_ptr<Layer> BatchNorm2d::clone() const {
    std::unique_ptr<BatchNorm2d> c(new BatchNorm2d(*this));
    c->gamma = deep(gamma);
    c->beta = deep(beta);
    return c;
}

void BatchNorm2d::collect_params(std::vector<NamedTensor>& out) const {
    out.push_back({name() + ".gamma", gamma, false});
    out.push_back({name() + ".beta", beta, false});
}

void BatchNorm2d::collect_buffers(std::vector<NamedBuffer>& out) {
    out.push_back({name() + ".running_mean", &stats.running_mean});
    out.push_back({name() + ".running_var", &stats.running_var});
}

Tensor AvgPool::forward(const Tensor& x, const ForwardContext&) {
    if (kernel_ == 0) {
        if (x.rank() != 4 || x.dim(2) != x.dim(3)) {
            throw std::invalid_argument("avgpool " + name() + ": global pooling needs a square map, got " +
                                        shape_str(x.shape()));
        }
        return avgpool2d(x, x.dim(2));
    }
    return avgpool2d(x, kernel_);
}

ResidualBlock::ResidualBlock(std::string name, std::size_t channels, std::mt19937_64& rng) : Layer(std::move(name)) {
    conv1_ = std::make_unique<Conv2d>(this->name() + ".conv1", channels, channels, 3, 1, 1, rng);
    bn1_ = std::make_unique<BatchNorm2d>(this->name() + ".bn1", channels);
    conv2_ = std::make_unique<Conv2d>(this->name() + ".conv2", channels, channels, 3, 1, 1, rng);
    bn2_ = std::make_unique<BatchNorm2d>(this->name() + ".bn2", channels);
}

Tensor ResidualBlock::forward(const Tensor& x, const ForwardContext& ctx) {
    auto h = relu(bn1_->forward(conv1_->forward(x, ctx), ctx));
    h = bn2_->forward(conv2_->forward(h, ctx), ctx);
    return relu(add(h, x));
}

std::unique_ptr<Layer> ResidualBlock::clone() const {
    std::unique_ptr<ResidualBlock> c(new ResidualBlock(name()));
    c->conv1_.reset(static_cast<Conv2d*>(conv1_->clone().release()));
    c->bn1_.reset(static_cast<BatchNorm2d*>(bn1_->clone().release()));
    c->conv2_.reset(static_cast<Conv2d*>(conv2_->clone().release()));
    c->bn2_.reset(static_cast<BatchNorm2d*>(bn2_->clone().release()));
    return c;
}

void ResidualBlock::collect_params(std::vector<NamedTensor>& out) const {
    conv1_->collect_params(out);
    bn1_->collect_params(out);
    conv2_->collect_params(out);
    bn2_->collect_params(out);
}

void ResidualBlock::collect_buffers(std::vector<NamedBuffer>& out) {
    bn1_->collect_buffers(out);
    bn2_->collect_buffers(out);
}

void ResidualBlock::collect_weighted(std::vector<WeightedLayer*>& out) {
    out.push_back(conv1_.get());
    out.push_back(conv2_.get());
}

Model::Model(std::string name, InputSpec input, std::size_t classes)
    : name_(std::move(name)), input_(input), classes_(classes) {}

Model::Model(const Model& other) : name_(other.name_), input_(other.input_), classes_(other.classes_) {
    for (const auto& l : other.layers_) {
        layers_.push_back(l->clone());
    }
    relink_registry(other.registry_);
}

Model& Model::operator=(const Model& other) {
    if (this != &other) {
        Model tmp(other);
        *this = std::move(tmp);
    }
    return *this;
}

void Model::add(std::unique_ptr<Layer> layer) {
    layers_.push_back(std::move(layer));
}

void Model::build_registry() {
    relink_registry({});
}

void Model::relink_registry(const std::vector<PrunableParam>& previous) {
    std::vector<WeightedLayer*> weighted;
    for (auto& l : layers_) {
        l->collect_weighted(weighted);
    }
    registry_.clear();
    for (std::size_t i = 0; i < weighted.size(); ++i) {
        weighted[i]->registry_id = static_cast<int>(i);
        PrunableParam p;
        if (i < previous.size()) {
            p = previous[i];
        }
        p.name = weighted[i]->name() + ".weight";
        p.w = weighted[i]->weight;
        registry_.push_back(std::move(p));
    }
}

Tensor Model::forward(const Tensor& x, bool training, std::span<const Tensor> weights) {
    if (!weights.empty() && weights.size() != registry_.size()) {
        throw std::invalid_argument("model " + name_ + ": got " + std::to_string(weights.size()) +
                                    " effective weights for " + std::to_string(registry_.size()) + " registry entries");
    }
    const Shape expected{input_.channels, input_.height, input_.width};
    if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != expected) {
        throw std::invalid_argument("model " + name_ + ": input " + shape_str(x.shape()) + " does not match [N," +
                                    std::to_string(input_.channels) + "," + std::to_string(input_.height) + "," +
                                    std::to_string(input_.width) + "]");
    }
    ForwardContext ctx{training, weights};
    Tensor h = x;
    for (auto& l : layers_) {
        h = l->forward(h, ctx);
    }
    return h;
}

Tensor Model::forward(const Tensor& x, bool training) {
    auto w = effective_weights();
    return forward(x, training, w);
}

std::vector<Tensor> Model::effective_weights(GradMode grad_mode) const {
    std::vector<Tensor> out;
    out.reserve(registry_.size());
    for (const auto& p : registry_) {
        if (p.exempt || p.mode == PruneMode::off) {
            out.push_back(p.w);
        } else if (p.mode == PruneMode::soft) {
            out.push_back(soft_prune(p.w, p.tau, p.temp, grad_mode));
        } else if (!p.mask.empty()) {
            std::vector<double> m(p.mask.begin(), p.mask.end());
            out.push_back(mul(p.w, Tensor::from(std::move(m), p.w.shape())));
        } else {
            out.push_back(hard_prune(p.w, p.tau));
        }
    }
    return out;
}

PrunableParam& Model::prunable(std::size_t layer_id) {
    if (layer_id >= registry_.size()) {
        throw std::out_of_range("model " + name_ + ": no prunable layer " + std::to_string(layer_id));
    }
    return registry_[layer_id];
}

std::vector<NamedTensor> Model::parameters() const {
    std::vector<NamedTensor> out;
    for (const auto& l : layers_) {
        l->collect_params(out);
    }
    return out;
}

std::vector<NamedBuffer> Model::buffers() {
    std::vector<NamedBuffer> out;
    for (auto& l : layers_) {
        l->collect_buffers(out);
    }
    return out;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) {
        n += p.tensor.numel();
    }
    return n;
}

std::size_t Model::prunable_count() const {
    std::size_t n = 0;
    for (const auto& p : registry_) {
        if (!p.exempt) {
            n += p.w.numel();
        }
    }
    return n;
}

std::size_t Model::hard_kept_count() const {
    std::size_t n = 0;
    for (const auto& p : registry_) {
        if (!p.exempt) {
            n += p.kept_count();
        }
    }
    return n;
}

double Model::keep_ratio() const {
    const auto total = prunable_count();
    return total == 0 ? 1.0 : static_cast<double>(hard_kept_count()) / static_cast<double>(total);
}

void Model::exempt_layers(const std::vector<std::string>& names) {
    for (const auto& n : names) {
        bool found = false;
        for (auto& p : registry_) {
            const auto layer = p.name.substr(0, p.name.rfind(".weight"));
            if (p.name == n || layer == n) {
                p.exempt = true;
                p.mode = PruneMode::off;
                found = true;
            }
        }
        if (!found) {
            throw std::invalid_argument("model " + name_ + ": no prunable layer named '" + n + "'");
        }
    }
}

void Model::set_prune_mode(PruneMode mode) {
    for (auto& p : registry_) {
        if (!p.exempt) {
            p.mode = mode;
        }
    }
}

Tensor l2_penalty(const Model& model) {
    Tensor total = Tensor::scalar(0.0);
    for (const auto& p : model.registry()) {
        if (!p.exempt) {
            total = add(total, sum(square(p.w)));
        }
    }
    return total;
}

Tensor l1_penalty(const Model& model) {
    Tensor total = Tensor::scalar(0.0);
    for (const auto& p : model.registry()) {
        if (!p.exempt) {
            total = add(total, sum(abs(p.w)));
        }
    }
    return total;
}

namespace model_zoo {

std::vector<std::string> names() {
    return {"mlp3", "convbn6", "resnet-lite"};
}

Model build(const std::string& name, InputSpec input, std::size_t classes, std::uint64_t seed) {
    if (classes < 2) {
        throw std::invalid_argument("model_zoo: need at least 2 classes");
    }
    std::mt19937_64 rng(seed);
    Model m(name, input, classes);
    if (name == "mlp3") {
        m.add(std::make_unique<Flatten>("flatten"));
        m.add(std::make_unique<Linear>("fc1", input.numel(), 300, rng));
        m.add(std::make_unique<ReLU>("relu1"));
        m.add(std::make_unique<Linear>("fc2", 300, 100, rng));
        m.add(std::make_unique<ReLU>("relu2"));
        m.add(std::make_unique<Linear>("fc3", 100, classes, rng));
    } else if (name == "convbn6") {
        const std::size_t channels[] = {8, 8, 16, 16, 32, 32};
        const std::size_t strides[] = {1, 1, 2, 1, 2, 1};
        std::size_t in = input.channels;
        for (int i = 0; i < 6; ++i) {
            const auto id = std::to_string(i + 1);
            m.add(std::make_unique<Conv2d>("conv" + id, in, channels[i], 3, strides[i], 1, rng));
            m.add(std::make_unique<BatchNorm2d>("bn" + id, channels[i]));
            m.add(std::make_unique<ReLU>("relu" + id));
            in = channels[i];
        }
        m.add(std::make_unique<AvgPool>("pool", 0));
        m.add(std::make_unique<Flatten>("flatten"));
        m.add(std::make_unique<Linear>("fc", in, classes, rng));
    } else if (name == "resnet-lite") {
        constexpr std::size_t width = 16;
        m.add(std::make_unique<Conv2d>("stem", input.channels, width, 3, 1, 1, rng));
        m.add(std::make_unique<BatchNorm2d>("stem_bn", width));
        m.add(std::make_unique<ReLU>("stem_relu"));
        for (int i = 0; i < 3; ++i) {
            m.add(std::make_unique<ResidualBlock>("block" + std::to_string(i + 1), width, rng));
        }
        m.add(std::make_unique<AvgPool>("pool", 0));
        m.add(std::make_unique<Flatten>("flatten"));
        m.add(std::make_unique<Linear>("fc", width, classes, rng));
    } else {
        throw std::invalid_argument("model_zoo: unknown model '" + name + "'");
    }
    m.build_registry();
    return m;
}

} // namespace model_zoo

} // namespace ltp
