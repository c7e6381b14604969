#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ltp {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Arithmetic mode of the current thread. f32 rounds every recorded forward
// value to single precision; gradients stay in f64.
enum class Precision { f64, f32 };
void set_precision(Precision p);
Precision precision();

// When enabled, every recorded op checks its output for NaN/Inf and throws.
void set_validation(bool on);
bool validation();

// While alive, recorded ops attach no backward rules on this thread.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};
bool grad_enabled();

class Tensor;
using BackwardFn = std::function<void(std::span<const double> grad_out, std::vector<Tensor>& inputs)>;

namespace detail {
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::uint64_t seq = 0;
    std::string op;
    std::vector<Tensor> inputs;
    BackwardFn backward;
};
} // namespace detail

// Handle to a node on the dynamic tape. Copies share storage; use clone()
// for a deep copy detached from the graph.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<double> data, Shape shape, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t i) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t flat) const { return data()[flat]; }

    bool requires_grad() const;
    void set_requires_grad(bool on);
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void accumulate_grad(std::span<const double> g);
    void zero_grad();

    const std::string& op() const;
    Tensor clone() const;
    Tensor reshape(Shape shape) const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    friend Tensor record_op(std::string_view, Shape, std::vector<double>, std::vector<Tensor>, BackwardFn);
    friend void backward(const Tensor&);

    std::shared_ptr<detail::Node> node_;
};

// Creates the output of an op. The backward rule is attached only when one of
// the inputs requires grad.
Tensor record_op(std::string_view name, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                 BackwardFn backward);

// Reverse-mode sweep from a scalar loss. Nodes are visited in exact reverse of
// their creation order. Leaf grads accumulate across calls.
void backward(const Tensor& loss);

} // namespace ltp
