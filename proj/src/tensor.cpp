#include "ltp/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace ltp {

namespace {

thread_local Precision g_precision = Precision::f64;
thread_local bool g_validation = false;
thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_next_seq{1};

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
    if (requires_grad) {
        node->grad.assign(node->data.size(), 0.0);
    }
    return node;
}

void require(const std::shared_ptr<detail::Node>& n) {
    if (!n) {
        throw std::logic_error("tensor: use of undefined tensor");
    }
}

} // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) {
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }
void set_validation(bool on) { g_validation = on; }
bool validation() { return g_validation; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(std::vector<double> data, Shape shape, bool requires_grad) {
    return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(make_node({}, {value}, requires_grad));
}

const Shape& Tensor::shape() const {
    require(node_);
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
    const auto& s = shape();
    if (i >= s.size()) {
        throw std::out_of_range("tensor: dim " + std::to_string(i) + " out of range for shape " + shape_str(s));
    }
    return s[i];
}

std::size_t Tensor::numel() const {
    require(node_);
    return node_->data.size();
}

std::span<const double> Tensor::data() const {
    require(node_);
    return node_->data;
}

std::span<double> Tensor::mutable_data() {
    require(node_);
    return node_->data;
}

double Tensor::item() const {
    require(node_);
    if (node_->data.size() != 1) {
        throw std::invalid_argument("tensor: item() on tensor of shape " + shape_str(node_->shape));
    }
    return node_->data[0];
}

bool Tensor::requires_grad() const {
    require(node_);
    return node_->requires_grad;
}

void Tensor::set_requires_grad(bool on) {
    require(node_);
    node_->requires_grad = on;
    if (on && node_->grad.size() != node_->data.size()) {
        node_->grad.assign(node_->data.size(), 0.0);
    }
    if (!on) {
        node_->grad.clear();
    }
}

std::span<const double> Tensor::grad() const {
    require(node_);
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
    require(node_);
    if (node_->grad.size() != node_->data.size()) {
        node_->grad.assign(node_->data.size(), 0.0);
    }
    return node_->grad;
}

void Tensor::accumulate_grad(std::span<const double> g) {
    auto dst = mutable_grad();
    if (g.size() != dst.size()) {
        throw std::invalid_argument("tensor: gradient of length " + std::to_string(g.size()) +
                                    " for shape " + shape_str(node_->shape));
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
        dst[i] += g[i];
    }
}

void Tensor::zero_grad() {
    require(node_);
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

const std::string& Tensor::op() const {
    require(node_);
    return node_->op;
}

Tensor Tensor::clone() const {
    require(node_);
    return Tensor(make_node(node_->shape, node_->data, node_->requires_grad));
}

Tensor Tensor::reshape(Shape shape) const {
    require(node_);
    if (shape_numel(shape) != numel()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(node_->shape) + " as " + shape_str(shape));
    }
    return record_op("reshape", std::move(shape), node_->data, {*this},
                     [](std::span<const double> g, std::vector<Tensor>& in) { in[0].accumulate_grad(g); });
}

Tensor record_op(std::string_view name, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                 BackwardFn backward_fn) {
    if (g_precision == Precision::f32) {
        for (auto& v : data) {
            v = static_cast<double>(static_cast<float>(v));
        }
    }
    if (g_validation) {
        for (auto v : data) {
            if (!std::isfinite(v)) {
                throw std::domain_error(std::string(name) + ": non-finite value in output of shape " +
                                        shape_str(shape));
            }
        }
    }
    bool any_grad = false;
    if (g_grad_enabled) {
        for (const auto& t : inputs) {
            any_grad = any_grad || t.requires_grad();
        }
    }
    auto node = make_node(std::move(shape), std::move(data), any_grad);
    node->op = std::string(name);
    if (any_grad) {
        node->inputs = std::move(inputs);
        node->backward = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
    require(loss.node_);
    if (loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    if (!loss.node_->requires_grad) {
        return;
    }

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{loss.node_.get()};
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) {
            continue;
        }
        order.push_back(n);
        for (auto& in : n->inputs) {
            if (in.node_->requires_grad) {
                stack.push_back(in.node_.get());
            }
        }
    }
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->seq > b->seq; });

    // Interior grads are per-sweep; leaves keep accumulating.
    for (auto* n : order) {
        if (n->backward) {
            n->grad.assign(n->data.size(), 0.0);
        } else if (n->grad.size() != n->data.size()) {
            n->grad.assign(n->data.size(), 0.0);
        }
    }
    loss.node_->grad[0] += 1.0;

    for (auto* n : order) {
        if (n->backward) {
            n->backward(n->grad, n->inputs);
        }
    }
}

} // namespace ltp
