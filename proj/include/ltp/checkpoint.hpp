#pragma once

#include "ltp/nn.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

namespace ltp {

// Dense model snapshot. Binary layout:
//   "LTPCKPT1" | u64 header length | header text | u64 config length | config text
//   | f64 LE parameter values | f64 LE buffer values | u8 masks
// The header lists every parameter, buffer and registry entry in order, so the
// registry id <-> parameter mapping survives a round trip.
struct Checkpoint {
    Model model{"", {}, 0};
    std::string config_text;
    std::map<std::string, std::string> meta;
    double norm_mean = 0.0;
    double norm_std = 1.0;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Writes via a sibling temp file and rename, so `path` never holds a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

} // namespace ltp
