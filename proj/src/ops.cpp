#include "ltp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ltp {

namespace {

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_rank(std::string_view op, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank) {
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                                    shape_str(t.shape()));
    }
}

double stable_sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

// c[m,n] += a[m,k] * b[k,n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                ci[j] += av * bp[j];
            }
        }
    }
}

struct ConvGeometry {
    std::size_t n, c, h, w, o, kh, kw, stride, pad, ho, wo;
    std::size_t patch() const { return c * kh * kw; }
    std::size_t positions() const { return ho * wo; }
};

// col[c*kh*kw, ho*wo] for one sample
void im2col(const double* x, const ConvGeometry& g, double* col) {
    const std::size_t P = g.positions();
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                double* row = col + ((ci * g.kh + ki) * g.kw + kj) * P;
                for (std::size_t oi = 0; oi < g.ho; ++oi) {
                    const long iy = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
                    for (std::size_t oj = 0; oj < g.wo; ++oj) {
                        const long ix = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
                        double v = 0.0;
                        if (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w)) {
                            v = x[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)];
                        }
                        row[oi * g.wo + oj] = v;
                    }
                }
            }
        }
    }
}

void col2im_acc(const double* col, const ConvGeometry& g, double* dx) {
    const std::size_t P = g.positions();
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const double* row = col + ((ci * g.kh + ki) * g.kw + kj) * P;
                for (std::size_t oi = 0; oi < g.ho; ++oi) {
                    const long iy = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) {
                        continue;
                    }
                    for (std::size_t oj = 0; oj < g.wo; ++oj) {
                        const long ix = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
                        if (ix < 0 || ix >= static_cast<long>(g.w)) {
                            continue;
                        }
                        dx[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                            row[oi * g.wo + oj];
                    }
                }
            }
        }
    }
}

template <class F, class D>
Tensor unary(std::string_view name, const Tensor& a, F f, D dfdx) {
    auto x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = f(x[i]);
    }
    return record_op(name, a.shape(), std::move(out), {a}, [dfdx](std::span<const double> g, std::vector<Tensor>& in) {
        auto xs = in[0].data();
        auto dst = in[0].mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            dst[i] += g[i] * dfdx(xs[i]);
        }
    });
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        shape_error("matmul", a.shape(), b.shape());
    }
    std::vector<double> out(m * n, 0.0);
    gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    return record_op("matmul", {m, n}, std::move(out), {a, b},
                     [m, k, n](std::span<const double> g, std::vector<Tensor>& in) {
                         auto A = in[0].data();
                         auto B = in[1].data();
                         if (in[0].requires_grad()) {
                             auto dA = in[0].mutable_grad();
                             for (std::size_t i = 0; i < m; ++i) {
                                 for (std::size_t p = 0; p < k; ++p) {
                                     double acc = 0.0;
                                     for (std::size_t j = 0; j < n; ++j) {
                                         acc += g[i * n + j] * B[p * n + j];
                                     }
                                     dA[i * k + p] += acc;
                                 }
                             }
                         }
                         if (in[1].requires_grad()) {
                             auto dB = in[1].mutable_grad();
                             for (std::size_t i = 0; i < m; ++i) {
                                 for (std::size_t p = 0; p < k; ++p) {
                                     const double av = A[i * k + p];
                                     for (std::size_t j = 0; j < n; ++j) {
                                         dB[p * n + j] += av * g[i * n + j];
                                     }
                                 }
                             }
                         }
                     });
}

Tensor transpose(const Tensor& a) {
    require_rank("transpose", a, 2);
    const std::size_t r = a.dim(0), c = a.dim(1);
    auto x = a.data();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[j * r + i] = x[i * c + j];
        }
    }
    return record_op("transpose", {c, r}, std::move(out), {a}, [r, c](std::span<const double> g, std::vector<Tensor>& in) {
        auto dst = in[0].mutable_grad();
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                dst[i * c + j] += g[j * r + i];
            }
        }
    });
}

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding) {
    require_rank("conv2d", x, 4);
    require_rank("conv2d", w, 4);
    if (x.dim(1) != w.dim(1)) {
        shape_error("conv2d", x.shape(), w.shape());
    }
    if (stride == 0) {
        throw std::invalid_argument("conv2d: stride must be positive");
    }
    ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), stride, padding, 0, 0};
    if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw) {
        shape_error("conv2d", x.shape(), w.shape());
    }
    g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
    g.wo = (g.w + 2 * padding - g.kw) / stride + 1;

    const std::size_t K = g.patch(), P = g.positions(), in_sz = g.c * g.h * g.w;
    auto cols = std::make_shared<std::vector<double>>(g.n * K * P);
    std::vector<double> out(g.n * g.o * P, 0.0);
    auto xd = x.data();
    auto wd = w.data();
    for (std::size_t s = 0; s < g.n; ++s) {
        double* col = cols->data() + s * K * P;
        im2col(xd.data() + s * in_sz, g, col);
        gemm_acc(wd.data(), col, out.data() + s * g.o * P, g.o, K, P);
    }
    return record_op("conv2d", {g.n, g.o, g.ho, g.wo}, std::move(out), {x, w},
                     [g, cols, K, P, in_sz](std::span<const double> grad, std::vector<Tensor>& in) {
                         auto W = in[1].data();
                         if (in[1].requires_grad()) {
                             auto dW = in[1].mutable_grad();
                             for (std::size_t s = 0; s < g.n; ++s) {
                                 const double* col = cols->data() + s * K * P;
                                 const double* gy = grad.data() + s * g.o * P;
                                 for (std::size_t o = 0; o < g.o; ++o) {
                                     for (std::size_t q = 0; q < K; ++q) {
                                         double acc = 0.0;
                                         for (std::size_t p = 0; p < P; ++p) {
                                             acc += gy[o * P + p] * col[q * P + p];
                                         }
                                         dW[o * K + q] += acc;
                                     }
                                 }
                             }
                         }
                         if (in[0].requires_grad()) {
                             auto dX = in[0].mutable_grad();
                             std::vector<double> dcol(K * P);
                             for (std::size_t s = 0; s < g.n; ++s) {
                                 std::fill(dcol.begin(), dcol.end(), 0.0);
                                 const double* gy = grad.data() + s * g.o * P;
                                 for (std::size_t o = 0; o < g.o; ++o) {
                                     for (std::size_t q = 0; q < K; ++q) {
                                         const double wv = W[o * K + q];
                                         double* dst = dcol.data() + q * P;
                                         for (std::size_t p = 0; p < P; ++p) {
                                             dst[p] += wv * gy[o * P + p];
                                         }
                                     }
                                 }
                                 col2im_acc(dcol.data(), g, dX.data() + s * in_sz);
                             }
                         }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
    auto x = a.data();
    auto y = b.data();
    if (a.shape() == b.shape()) {
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            out[i] = x[i] + y[i];
        }
        return record_op("add", a.shape(), std::move(out), {a, b}, [](std::span<const double> g, std::vector<Tensor>& in) {
            for (auto& t : in) {
                if (t.requires_grad()) {
                    t.accumulate_grad(g);
                }
            }
        });
    }
    if (b.rank() != 1 || a.rank() < 2 || a.dim(1) != b.dim(0)) {
        shape_error("add", a.shape(), b.shape());
    }
    const std::size_t outer = a.dim(0), ch = a.dim(1), inner = a.numel() / (outer * ch);
    std::vector<double> out(x.size());
    for (std::size_t n = 0; n < outer; ++n) {
        for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t base = (n * ch + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                out[base + i] = x[base + i] + y[c];
            }
        }
    }
    return record_op("add", a.shape(), std::move(out), {a, b},
                     [outer, ch, inner](std::span<const double> g, std::vector<Tensor>& in) {
                         if (in[0].requires_grad()) {
                             in[0].accumulate_grad(g);
                         }
                         if (in[1].requires_grad()) {
                             auto db = in[1].mutable_grad();
                             for (std::size_t n = 0; n < outer; ++n) {
                                 for (std::size_t c = 0; c < ch; ++c) {
                                     const std::size_t base = (n * ch + c) * inner;
                                     for (std::size_t i = 0; i < inner; ++i) {
                                         db[c] += g[base + i];
                                     }
                                 }
                             }
                         }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        shape_error("mul", a.shape(), b.shape());
    }
    auto x = a.data();
    auto y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] * y[i];
    }
    return record_op("mul", a.shape(), std::move(out), {a, b}, [](std::span<const double> g, std::vector<Tensor>& in) {
        auto x0 = in[0].data();
        auto x1 = in[1].data();
        if (in[0].requires_grad()) {
            auto d = in[0].mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                d[i] += g[i] * x1[i];
            }
        }
        if (in[1].requires_grad()) {
            auto d = in[1].mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                d[i] += g[i] * x0[i];
            }
        }
    });
}

Tensor scalar_mul(const Tensor& a, double s) {
    return unary("scalar_mul", a, [s](double v) { return s * v; }, [s](double) { return s; });
}

Tensor relu(const Tensor& a) {
    return unary("relu", a, [](double v) { return v > 0 ? v : 0.0; }, [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary("sigmoid", a, stable_sigmoid, [](double v) {
        const double s = stable_sigmoid(v);
        return s * (1.0 - s);
    });
}

Tensor square(const Tensor& a) {
    return unary("square", a, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Tensor abs(const Tensor& a) {
    return unary("abs", a, [](double v) { return std::fabs(v); },
                 [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (auto v : a.data()) {
        acc += v;
    }
    return record_op("sum", {}, {acc}, {a}, [](std::span<const double> g, std::vector<Tensor>& in) {
        for (auto& d : in[0].mutable_grad()) {
            d += g[0];
        }
    });
}

Tensor mean(const Tensor& a) {
    const std::size_t n = a.numel();
    if (n == 0) {
        throw std::invalid_argument("mean: empty tensor");
    }
    double acc = 0.0;
    for (auto v : a.data()) {
        acc += v;
    }
    return record_op("mean", {}, {acc / static_cast<double>(n)}, {a},
                     [n](std::span<const double> g, std::vector<Tensor>& in) {
                         const double share = g[0] / static_cast<double>(n);
                         for (auto& d : in[0].mutable_grad()) {
                             d += share;
                         }
                     });
}

Tensor flatten(const Tensor& a) {
    if (a.rank() < 1) {
        throw std::invalid_argument("flatten: scalar input");
    }
    const std::size_t n = a.dim(0);
    return a.reshape({n, n == 0 ? 0 : a.numel() / n});
}

Tensor avgpool2d(const Tensor& x, std::size_t kernel) {
    require_rank("avgpool2d", x, 4);
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (kernel == 0 || H % kernel != 0 || W % kernel != 0) {
        throw std::invalid_argument("avgpool2d: kernel " + std::to_string(kernel) + " does not tile input " +
                                    shape_str(x.shape()));
    }
    const std::size_t HO = H / kernel, WO = W / kernel;
    const double scale = 1.0 / static_cast<double>(kernel * kernel);
    auto xd = x.data();
    std::vector<double> out(N * C * HO * WO, 0.0);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        for (std::size_t i = 0; i < HO; ++i) {
            for (std::size_t j = 0; j < WO; ++j) {
                double acc = 0.0;
                for (std::size_t a = 0; a < kernel; ++a) {
                    for (std::size_t b = 0; b < kernel; ++b) {
                        acc += xd[(nc * H + i * kernel + a) * W + j * kernel + b];
                    }
                }
                out[(nc * HO + i) * WO + j] = acc * scale;
            }
        }
    }
    return record_op("avgpool2d", {N, C, HO, WO}, std::move(out), {x},
                     [=](std::span<const double> g, std::vector<Tensor>& in) {
                         auto dx = in[0].mutable_grad();
                         for (std::size_t nc = 0; nc < N * C; ++nc) {
                             for (std::size_t i = 0; i < HO; ++i) {
                                 for (std::size_t j = 0; j < WO; ++j) {
                                     const double share = g[(nc * HO + i) * WO + j] * scale;
                                     for (std::size_t a = 0; a < kernel; ++a) {
                                         for (std::size_t b = 0; b < kernel; ++b) {
                                             dx[(nc * H + i * kernel + a) * W + j * kernel + b] += share;
                                         }
                                     }
                                 }
                             }
                         }
                     });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, bool training) {
    require_rank("batchnorm2d", x, 4);
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
        shape_error("batchnorm2d", x.shape(), gamma.shape());
    }
    if (stats.running_mean.size() != C || stats.running_var.size() != C) {
        throw std::invalid_argument("batchnorm2d: running statistics sized for " +
                                    std::to_string(stats.running_mean.size()) + " channels, input has " +
                                    std::to_string(C));
    }
    const std::size_t M = N * HW;
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();

    std::vector<double> mu(C), inv_std(C);
    if (training) {
        if (M < 2) {
            throw std::invalid_argument("batchnorm2d: training mode needs more than one value per channel, got shape " +
                                        shape_str(x.shape()));
        }
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const double* p = xd.data() + (n * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                    s += p[i];
                }
            }
            const double m = s / static_cast<double>(M);
            double ss = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const double* p = xd.data() + (n * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                    const double d = p[i] - m;
                    ss += d * d;
                }
            }
            const double var = ss / static_cast<double>(M);
            mu[c] = m;
            inv_std[c] = 1.0 / std::sqrt(var + stats.eps);
            stats.running_mean[c] = (1.0 - stats.momentum) * stats.running_mean[c] + stats.momentum * m;
            stats.running_var[c] = (1.0 - stats.momentum) * stats.running_var[c] +
                                   stats.momentum * var * static_cast<double>(M) / static_cast<double>(M - 1);
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mu[c] = stats.running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(stats.running_var[c] + stats.eps);
        }
    }

    auto xhat = std::make_shared<std::vector<double>>(xd.size());
    std::vector<double> out(xd.size());
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
                const double h = (xd[base + i] - mu[c]) * inv_std[c];
                (*xhat)[base + i] = h;
                out[base + i] = gd[c] * h + bd[c];
            }
        }
    }
    return record_op("batchnorm2d", x.shape(), std::move(out), {x, gamma, beta},
                     [=](std::span<const double> g, std::vector<Tensor>& in) {
                         auto gam = in[1].data();
                         std::vector<double> sum_g(C, 0.0), sum_gh(C, 0.0);
                         for (std::size_t n = 0; n < N; ++n) {
                             for (std::size_t c = 0; c < C; ++c) {
                                 const std::size_t base = (n * C + c) * HW;
                                 for (std::size_t i = 0; i < HW; ++i) {
                                     sum_g[c] += g[base + i];
                                     sum_gh[c] += g[base + i] * (*xhat)[base + i];
                                 }
                             }
                         }
                         if (in[1].requires_grad()) {
                             in[1].accumulate_grad(sum_gh);
                         }
                         if (in[2].requires_grad()) {
                             in[2].accumulate_grad(sum_g);
                         }
                         if (!in[0].requires_grad()) {
                             return;
                         }
                         auto dx = in[0].mutable_grad();
                         const double Md = static_cast<double>(M);
                         for (std::size_t n = 0; n < N; ++n) {
                             for (std::size_t c = 0; c < C; ++c) {
                                 const std::size_t base = (n * C + c) * HW;
                                 const double k = gam[c] * inv_std[c];
                                 for (std::size_t i = 0; i < HW; ++i) {
                                     if (training) {
                                         dx[base + i] +=
                                             k * (g[base + i] - sum_g[c] / Md - (*xhat)[base + i] * sum_gh[c] / Md);
                                     } else {
                                         dx[base + i] += k * g[base + i];
                                     }
                                 }
                             }
                         }
                     });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require_rank("softmax_cross_entropy", logits, 2);
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    if (labels.size() != N) {
        shape_error("softmax_cross_entropy", logits.shape(), Shape{labels.size()});
    }
    if (N == 0) {
        throw std::invalid_argument("softmax_cross_entropy: empty batch");
    }
    auto z = logits.data();
    auto probs = std::make_shared<std::vector<double>>(N * K);
    double loss = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        const int y = labels[n];
        if (y < 0 || static_cast<std::size_t>(y) >= K) {
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," +
                                        std::to_string(K) + ")");
        }
        const double* row = z.data() + n * K;
        const double mx = *std::max_element(row, row + K);
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            s += std::exp(row[k] - mx);
        }
        const double lse = mx + std::log(s);
        for (std::size_t k = 0; k < K; ++k) {
            (*probs)[n * K + k] = std::exp(row[k] - lse);
        }
        loss += lse - row[static_cast<std::size_t>(y)];
    }
    std::vector<int> ys(labels.begin(), labels.end());
    return record_op("softmax_cross_entropy", {}, {loss / static_cast<double>(N)}, {logits},
                     [=](std::span<const double> g, std::vector<Tensor>& in) {
                         auto d = in[0].mutable_grad();
                         const double scale = g[0] / static_cast<double>(N);
                         for (std::size_t n = 0; n < N; ++n) {
                             for (std::size_t k = 0; k < K; ++k) {
                                 double p = (*probs)[n * K + k];
                                 if (static_cast<int>(k) == ys[n]) {
                                     p -= 1.0;
                                 }
                                 d[n * K + k] += scale * p;
                             }
                         }
                     });
}

} // namespace ltp
