#pragma once

#include "ltp/nn.hpp"
#include "ltp/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ltp {

enum class Split { train, val };

// Raw sample values plus the normalization applied when batching.
struct Dataset {
    InputSpec shape;
    std::size_t classes = 0;
    Split split = Split::train;
    std::vector<double> inputs; // size() * shape.numel(), raw values
    std::vector<int> labels;
    double norm_mean = 0.0;
    double norm_std = 1.0;

    std::size_t size() const { return labels.size(); }
    std::span<const double> sample(std::size_t i) const;
    void validate() const;
};

struct DatasetPair {
    Dataset train;
    Dataset val;
};

struct Batch {
    Tensor inputs; // [B, C, H, W], normalized
    std::vector<int> labels;
};

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices);

// Deterministic visiting order: identity when shuffle_seed == 0, otherwise a
// seeded permutation.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t shuffle_seed);

// True when sample `index` of a dataset generated with `seed` belongs to the
// validation split (20%).
bool in_val_split(std::uint64_t seed, std::size_t index);

// Gaussian clusters in `dim` dimensions. Centroid coordinates are drawn from
// N(0, 1 / (2 dim)) so centroids sit roughly unit distance apart; `noise` is
// the per-coordinate standard deviation around them.
DatasetPair synthetic_blobs(std::uint64_t seed, std::size_t classes, std::size_t dim, std::size_t n_per_class,
                            double noise);
// Same, reshaped to an image spec with shape.numel() == dim.
DatasetPair synthetic_blobs(std::uint64_t seed, std::size_t classes, InputSpec shape, std::size_t n_per_class,
                            double noise);

// Affinely maps both splits to [0, 1] using the train split's range.
void rescale_to_unit(DatasetPair& data);

// Sets norm_mean/norm_std on both splits from the train split's raw values.
void normalize_from_train(DatasetPair& data);

class IdxError : public std::runtime_error {
public:
    enum class Kind { io, bad_magic, truncated, count_mismatch, bad_label };
    IdxError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// Images: magic 0x00000803 with dims (count, rows, cols); labels: magic
// 0x00000801 with dim (count). Pixel bytes are scaled to [0,1].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t classes = 0);

// Quantizes raw values in [0,1] to u8 (round to nearest, clamped).
void write_idx(const Dataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels);

// Directory layout: train-images-idx3-ubyte, train-labels-idx1-ubyte,
// t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte.
DatasetPair load_idx_dir(const std::filesystem::path& dir, std::size_t classes = 0);
void write_idx_dir(const DatasetPair& data, const std::filesystem::path& dir);

} // namespace ltp
