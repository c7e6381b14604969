#pragma once

#include "ltp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace testing {

inline std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) {
        x = d(rng);
    }
    return v;
}

// Central differences of f at x along every coordinate.
inline std::vector<double> fd_grad(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                   double eps = 1e-6) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + eps;
        const double fp = f(x);
        x[i] = x0 - eps;
        const double fm = f(x);
        x[i] = x0;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

// Elementwise relative error. Components far below the tensor's largest
// gradient are compared against 1e-3 of that scale instead of their own
// magnitude, since their finite differences are pure round-off.
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        scale = std::max({scale, std::fabs(a[i]), std::fabs(b[i])});
    }
    const double floor = std::max(1e-3 * scale, 1e-300);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::max({std::fabs(a[i]), std::fabs(b[i]), floor});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / d);
    }
    return worst;
}

inline double rel_err(double a, double b) {
    const double d = std::max(std::fabs(a), std::fabs(b));
    return d == 0.0 ? 0.0 : std::fabs(a - b) / d;
}

inline std::vector<double> grad_of(const ltp::Tensor& t) {
    auto g = t.grad();
    return {g.begin(), g.end()};
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("ltp_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace testing
