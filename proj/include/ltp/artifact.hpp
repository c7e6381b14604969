#pragma once

#include "ltp/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ltp {

// Binary layout (little-endian):
//   "LTPSPARS" | u64 manifest length | manifest text (key = value lines)
//   | per prunable layer: row_ptr u64[rows+1], col u32[nnz], values f32[nnz]
//   | per dense tensor: f32[numel]
// Conv kernels [O, C, kh, kw] are stored as O x (C*kh*kw) matrices.
struct SparseLayer {
    std::size_t id = 0; // registry id
    std::string name;
    Shape shape;
    std::size_t rows = 0;
    std::size_t cols = 0;
    double tau = 0.0;
    double temp = 0.0;
    std::vector<std::uint64_t> row_ptr;
    std::vector<std::uint32_t> col;
    std::vector<float> values;

    std::size_t kept() const { return values.size(); }
    std::vector<float> dense() const;
};

struct DenseTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct SparseModelArtifact {
    int format_version = 1;
    std::string model;
    std::string source_precision = "f64";
    std::vector<SparseLayer> layers;
    std::vector<DenseTensor> dense;

    std::size_t total_weights() const;
    std::size_t kept_weights() const;
};

class ArtifactError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Rational {
    std::uint64_t num = 0;
    std::uint64_t den = 1;
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    bool operator==(const Rational&) const = default;
};

// total / kept in lowest terms. Errors when kept == 0.
Rational compression_rate(std::size_t total, std::size_t kept);
Rational compression_rate(const SparseModelArtifact& a);

// Every non-exempt registry entry becomes a CSR layer from its hard-pruned
// weights; all other parameters and buffers go to the dense section.
SparseModelArtifact build_artifact(Model& model, std::string source_precision = "f64");

std::string manifest_text(const SparseModelArtifact& a);
std::string serialize_artifact(const SparseModelArtifact& a);
SparseModelArtifact parse_artifact(const std::string& bytes);

void write_artifact(const std::filesystem::path& path, const SparseModelArtifact& a);
SparseModelArtifact read_artifact(const std::filesystem::path& path);

} // namespace ltp
