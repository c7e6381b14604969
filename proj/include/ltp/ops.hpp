#pragma once

#include "ltp/tensor.hpp"

#include <cstddef>
#include <span>

namespace ltp {

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// x [N,C,H,W], w [O,C,KH,KW] -> [N,O,HO,WO]
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride = 1, std::size_t padding = 0);

// Same-shape elementwise add, or b of shape [C] broadcast along dim 1 of a.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor flatten(const Tensor& a);

// Non-overlapping k x k average pooling over [N,C,H,W].
Tensor avgpool2d(const Tensor& x, std::size_t kernel);

struct BatchNormStats {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

// Training mode normalizes with batch statistics (biased variance) and folds
// them into the running estimates; eval mode uses the running estimates.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, bool training);

// Mean softmax cross-entropy over the batch.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

} // namespace ltp
