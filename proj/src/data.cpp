#include "ltp/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace ltp {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::vector<unsigned char> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw IdxError(IdxError::Kind::io, "idx: cannot open " + p.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::filesystem::path& p) {
    if (off + 4 > b.size()) {
        throw IdxError(IdxError::Kind::truncated, "idx: truncated header in " + p.string());
    }
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                                static_cast<char>(v)};
    out.write(b.data(), 4);
}

void fill_stats(Dataset& ds, double mean, double stddev) {
    ds.norm_mean = mean;
    ds.norm_std = stddev;
}

} // namespace

std::span<const double> Dataset::sample(std::size_t i) const {
    const auto d = shape.numel();
    return std::span<const double>(inputs).subspan(i * d, d);
}

void Dataset::validate() const {
    if (inputs.size() != labels.size() * shape.numel()) {
        throw std::invalid_argument("dataset: " + std::to_string(inputs.size()) + " values for " +
                                    std::to_string(labels.size()) + " samples of size " +
                                    std::to_string(shape.numel()));
    }
    for (auto y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw std::invalid_argument("dataset: label " + std::to_string(y) + " outside [0," +
                                        std::to_string(classes) + ")");
        }
    }
    if (!(norm_std > 0.0)) {
        throw std::invalid_argument("dataset: normalization std must be positive");
    }
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
    const auto d = ds.shape.numel();
    std::vector<double> x(indices.size() * d);
    std::vector<int> y(indices.size());
    const double inv = 1.0 / ds.norm_std;
    for (std::size_t b = 0; b < indices.size(); ++b) {
        auto s = ds.sample(indices[b]);
        for (std::size_t j = 0; j < d; ++j) {
            x[b * d + j] = (s[j] - ds.norm_mean) * inv;
        }
        y[b] = ds.labels[indices[b]];
    }
    return {Tensor::from(std::move(x), {indices.size(), ds.shape.channels, ds.shape.height, ds.shape.width}),
            std::move(y)};
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t shuffle_seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle_seed == 0) {
        return order;
    }
    std::mt19937_64 rng(shuffle_seed);
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
    }
    return order;
}

bool in_val_split(std::uint64_t seed, std::size_t index) {
    return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index))) % 5 == 0;
}

DatasetPair synthetic_blobs(std::uint64_t seed, std::size_t classes, std::size_t dim, std::size_t n_per_class,
                            double noise) {
    return synthetic_blobs(seed, classes, InputSpec{1, 1, dim}, n_per_class, noise);
}

DatasetPair synthetic_blobs(std::uint64_t seed, std::size_t classes, InputSpec shape, std::size_t n_per_class,
                            double noise) {
    const std::size_t dim = shape.numel();
    if (classes < 2) {
        throw std::invalid_argument("synthetic_blobs: need at least 2 classes");
    }
    if (dim == 0 || n_per_class == 0) {
        throw std::invalid_argument("synthetic_blobs: dimension and samples per class must be positive");
    }
    if (!(noise >= 0.0) || !std::isfinite(noise)) {
        throw std::invalid_argument("synthetic_blobs: noise must be finite and non-negative");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> centre_dist(0.0, std::sqrt(1.0 / (2.0 * static_cast<double>(dim))));
    std::vector<double> centroids(classes * dim);
    for (auto& c : centroids) {
        c = centre_dist(rng);
    }
    std::normal_distribution<double> unit(0.0, 1.0);

    DatasetPair out;
    for (auto* ds : {&out.train, &out.val}) {
        ds->shape = shape;
        ds->classes = classes;
    }
    out.val.split = Split::val;
    const std::size_t total = classes * n_per_class;
    for (std::size_t i = 0; i < total; ++i) {
        const auto label = static_cast<int>(i % classes);
        auto& ds = in_val_split(seed, i) ? out.val : out.train;
        const double* c = centroids.data() + static_cast<std::size_t>(label) * dim;
        for (std::size_t j = 0; j < dim; ++j) {
            ds.inputs.push_back(c[j] + noise * unit(rng));
        }
        ds.labels.push_back(label);
    }
    return out;
}

void rescale_to_unit(DatasetPair& data) {
    if (data.train.inputs.empty()) {
        throw std::invalid_argument("rescale_to_unit: empty train split");
    }
    const auto [lo, hi] = std::minmax_element(data.train.inputs.begin(), data.train.inputs.end());
    const double a = *lo;
    const double span = *hi - *lo;
    if (!(span > 0.0)) {
        throw std::invalid_argument("rescale_to_unit: train split is constant");
    }
    for (auto* ds : {&data.train, &data.val}) {
        for (auto& v : ds->inputs) {
            v = std::clamp((v - a) / span, 0.0, 1.0);
        }
    }
}

void normalize_from_train(DatasetPair& data) {
    const auto& x = data.train.inputs;
    if (x.empty()) {
        throw std::invalid_argument("normalize_from_train: empty train split");
    }
    double s = 0.0;
    for (auto v : x) {
        s += v;
    }
    const double m = s / static_cast<double>(x.size());
    double ss = 0.0;
    for (auto v : x) {
        ss += (v - m) * (v - m);
    }
    double sd = std::sqrt(ss / static_cast<double>(x.size()));
    if (!(sd > 0.0)) {
        sd = 1.0;
    }
    fill_stats(data.train, m, sd);
    fill_stats(data.val, m, sd);
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t classes) {
    const auto ib = read_file(images);
    const auto lb = read_file(labels);

    const auto im = read_be32(ib, 0, images);
    if (im != kImageMagic) {
        throw IdxError(IdxError::Kind::bad_magic, "idx: bad magic in image file " + images.string());
    }
    const auto lm = read_be32(lb, 0, labels);
    if (lm != kLabelMagic) {
        throw IdxError(IdxError::Kind::bad_magic, "idx: bad magic in label file " + labels.string());
    }
    const std::size_t n = read_be32(ib, 4, images);
    const std::size_t rows = read_be32(ib, 8, images);
    const std::size_t cols = read_be32(ib, 12, images);
    const std::size_t nl = read_be32(lb, 4, labels);
    if (ib.size() < 16 + n * rows * cols) {
        throw IdxError(IdxError::Kind::truncated, "idx: image file " + images.string() + " truncated: expected " +
                                                      std::to_string(n * rows * cols) + " pixel bytes");
    }
    if (lb.size() < 8 + nl) {
        throw IdxError(IdxError::Kind::truncated, "idx: label file " + labels.string() + " truncated");
    }
    if (n != nl) {
        throw IdxError(IdxError::Kind::count_mismatch, "idx: " + std::to_string(n) + " images but " +
                                                           std::to_string(nl) + " labels");
    }

    Dataset ds;
    ds.shape = InputSpec{1, rows, cols};
    ds.inputs.resize(n * rows * cols);
    for (std::size_t i = 0; i < ds.inputs.size(); ++i) {
        ds.inputs[i] = static_cast<double>(ib[16 + i]) / 255.0;
    }
    ds.labels.resize(n);
    int max_label = -1;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = lb[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.classes = classes ? classes : static_cast<std::size_t>(max_label + 1);
    for (auto y : ds.labels) {
        if (static_cast<std::size_t>(y) >= ds.classes) {
            throw IdxError(IdxError::Kind::bad_label, "idx: label " + std::to_string(y) + " outside " +
                                                          std::to_string(ds.classes) + " classes");
        }
    }
    return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels) {
    if (ds.shape.channels != 1) {
        throw std::invalid_argument("write_idx: IDX images are single-channel, dataset has " +
                                    std::to_string(ds.shape.channels));
    }
    ds.validate();
    std::ofstream im(images, std::ios::binary | std::ios::trunc);
    std::ofstream lb(labels, std::ios::binary | std::ios::trunc);
    if (!im || !lb) {
        throw IdxError(IdxError::Kind::io, "idx: cannot write " + images.string() + " / " + labels.string());
    }
    put_be32(im, kImageMagic);
    put_be32(im, static_cast<std::uint32_t>(ds.size()));
    put_be32(im, static_cast<std::uint32_t>(ds.shape.height));
    put_be32(im, static_cast<std::uint32_t>(ds.shape.width));
    for (auto v : ds.inputs) {
        const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
        im.put(static_cast<char>(static_cast<unsigned char>(q)));
    }
    put_be32(lb, kLabelMagic);
    put_be32(lb, static_cast<std::uint32_t>(ds.size()));
    for (auto y : ds.labels) {
        lb.put(static_cast<char>(static_cast<unsigned char>(y)));
    }
}

DatasetPair load_idx_dir(const std::filesystem::path& dir, std::size_t classes) {
    DatasetPair out;
    out.train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", classes);
    out.val = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", classes);
    out.val.split = Split::val;
    const auto k = std::max(out.train.classes, out.val.classes);
    out.train.classes = out.val.classes = k;
    normalize_from_train(out);
    return out;
}

void write_idx_dir(const DatasetPair& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_idx(data.train, dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    write_idx(data.val, dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
}

} // namespace ltp
