#include "ltp/checkpoint.hpp"

#include "ltp/config.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace ltp {

namespace {

constexpr char kMagic[8] = {'L', 'T', 'P', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
    char b[8];
    std::memcpy(b, &v, 8);
    out.append(b, 8);
}

void put_f64(std::string& out, double v) {
    char b[8];
    std::memcpy(b, &v, 8);
    out.append(b, 8);
}

class Reader {
public:
    Reader(const std::string& bytes, const std::filesystem::path& path) : bytes_(bytes), path_(path) {}

    std::string_view take(std::size_t n) {
        if (n > bytes_.size() - pos_) {
            throw CheckpointError("checkpoint " + path_.string() + ": truncated");
        }
        auto s = std::string_view(bytes_).substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        std::memcpy(&v, take(8).data(), 8);
        return v;
    }
    double f64() {
        double v;
        std::memcpy(&v, take(8).data(), 8);
        return v;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    const std::filesystem::path& path_;
    std::size_t pos_ = 0;
};

std::string dims(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += (i ? "x" : "") + std::to_string(s[i]);
    }
    return out.empty() ? "scalar" : out;
}

std::vector<std::string> words(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream is{std::string(s)};
    std::string w;
    while (is >> w) {
        out.push_back(w);
    }
    return out;
}

double parse_f64(const std::string& s) {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) {
        throw CheckpointError("checkpoint: bad number '" + s + "'");
    }
    return v;
}

} // namespace

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write " + tmp.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            out.close();
            std::filesystem::remove(tmp);
            throw std::runtime_error("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    Model& model = const_cast<Model&>(ckpt.model); // buffers() hands out mutable views
    const auto params = model.parameters();
    const auto bufs = model.buffers();
    const auto& reg = model.registry();

    std::ostringstream h;
    h << "model = " << model.name() << '\n';
    h << "input = " << model.input().channels << 'x' << model.input().height << 'x' << model.input().width << '\n';
    h << "classes = " << model.classes() << '\n';
    h << "norm_mean = " << format_double(ckpt.norm_mean) << '\n';
    h << "norm_std = " << format_double(ckpt.norm_std) << '\n';
    for (const auto& [k, v] : ckpt.meta) {
        if (k.find_first_of(" =\n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw CheckpointError("checkpoint: metadata key/value not representable: " + k);
        }
        h << "meta." << k << " = " << v << '\n';
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        h << "param." << i << " = " << params[i].name << ' ' << dims(params[i].tensor.shape()) << '\n';
    }
    for (std::size_t i = 0; i < bufs.size(); ++i) {
        h << "buffer." << i << " = " << bufs[i].name << ' ' << bufs[i].values->size() << '\n';
    }
    for (std::size_t i = 0; i < reg.size(); ++i) {
        const auto& p = reg[i];
        h << "registry." << i << " = " << p.name << ' ' << format_double(p.tau) << ' ' << format_double(p.temp) << ' '
          << to_string(p.mode) << ' ' << (p.exempt ? 1 : 0) << ' ' << (p.mask.empty() ? 0 : 1) << '\n';
    }

    std::string out(kMagic, 8);
    const auto header = h.str();
    put_u64(out, header.size());
    out += header;
    put_u64(out, ckpt.config_text.size());
    out += ckpt.config_text;
    for (const auto& p : params) {
        for (double v : p.tensor.data()) {
            put_f64(out, v);
        }
    }
    for (const auto& b : bufs) {
        for (double v : *b.values) {
            put_f64(out, v);
        }
    }
    for (const auto& p : reg) {
        if (!p.mask.empty()) {
            out.append(reinterpret_cast<const char*>(p.mask.data()), p.mask.size());
        }
    }
    write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    Reader r(bytes, path);
    if (r.take(8) != std::string_view(kMagic, 8)) {
        throw CheckpointError("checkpoint " + path.string() + ": bad magic");
    }
    const std::string header(r.take(r.u64()));
    Checkpoint ck;
    ck.config_text = std::string(r.take(r.u64()));

    std::map<std::string, std::string> kv;
    std::istringstream hs(header);
    std::string line;
    while (std::getline(hs, line)) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) {
            throw CheckpointError("checkpoint " + path.string() + ": malformed header line '" + line + "'");
        }
        kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    auto need = [&](const std::string& k) -> const std::string& {
        auto it = kv.find(k);
        if (it == kv.end()) {
            throw CheckpointError("checkpoint " + path.string() + ": missing header key " + k);
        }
        return it->second;
    };

    InputSpec input;
    {
        unsigned long c = 0, hgt = 0, w = 0;
        if (std::sscanf(need("input").c_str(), "%lux%lux%lu", &c, &hgt, &w) != 3) {
            throw CheckpointError("checkpoint: bad input spec");
        }
        input = {c, hgt, w};
    }
    ck.model = model_zoo::build(need("model"), input, std::stoul(need("classes")), 0);
    ck.norm_mean = parse_f64(need("norm_mean"));
    ck.norm_std = parse_f64(need("norm_std"));
    for (const auto& [k, v] : kv) {
        if (k.rfind("meta.", 0) == 0) {
            ck.meta[k.substr(5)] = v;
        }
    }

    auto params = ck.model.parameters();
    auto bufs = ck.model.buffers();
    auto& reg = ck.model.registry();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto w = words(need("param." + std::to_string(i)));
        if (w.size() != 2 || w[0] != params[i].name || w[1] != dims(params[i].tensor.shape())) {
            throw CheckpointError("checkpoint: parameter " + std::to_string(i) + " does not match model " +
                                  ck.model.name() + " (expected " + params[i].name + ' ' +
                                  dims(params[i].tensor.shape()) + ")");
        }
    }
    if (kv.count("param." + std::to_string(params.size()))) {
        throw CheckpointError("checkpoint: more parameters than model " + ck.model.name() + " has");
    }
    for (auto& p : params) {
        for (auto& v : p.tensor.mutable_data()) {
            v = r.f64();
        }
    }
    for (std::size_t i = 0; i < bufs.size(); ++i) {
        const auto w = words(need("buffer." + std::to_string(i)));
        if (w.size() != 2 || w[0] != bufs[i].name || std::stoul(w[1]) != bufs[i].values->size()) {
            throw CheckpointError("checkpoint: buffer " + std::to_string(i) + " does not match model");
        }
        for (auto& v : *bufs[i].values) {
            v = r.f64();
        }
    }
    for (std::size_t i = 0; i < reg.size(); ++i) {
        const auto w = words(need("registry." + std::to_string(i)));
        if (w.size() != 6 || w[0] != reg[i].name) {
            throw CheckpointError("checkpoint: registry entry " + std::to_string(i) + " does not match model");
        }
        reg[i].tau = parse_f64(w[1]);
        reg[i].temp = parse_f64(w[2]);
        reg[i].mode = parse_prune_mode(w[3]);
        reg[i].exempt = w[4] == "1";
        reg[i].mask.clear();
        if (w[5] == "1") {
            reg[i].mask.resize(reg[i].w.numel());
            for (auto& m : reg[i].mask) {
                m = r.u8();
            }
        }
    }
    if (!r.done()) {
        throw CheckpointError("checkpoint " + path.string() + ": trailing bytes");
    }
    return ck;
}

} // namespace ltp
