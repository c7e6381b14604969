#include "ltp/artifact.hpp"

#include "ltp/checkpoint.hpp"
#include "ltp/config.hpp"

#include <bit>
#include <cstring>
#include <numeric>
#include <sstream>

namespace ltp {

namespace {

constexpr char kMagic[8] = {'L', 'T', 'P', 'S', 'P', 'A', 'R', 'S'};

static_assert(std::endian::native == std::endian::little, "artifact I/O assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.append(b, sizeof(T));
}

template <class T>
T get(const std::string& bytes, std::size_t& pos) {
    if (sizeof(T) > bytes.size() - pos) {
        throw ArtifactError("artifact: truncated payload");
    }
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

std::string dims(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += (i ? "x" : "") + std::to_string(s[i]);
    }
    return out.empty() ? "scalar" : out;
}

Shape parse_dims(const std::string& s) {
    if (s == "scalar") {
        return {};
    }
    Shape out;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto x = s.find('x', start);
        if (x == std::string::npos) {
            x = s.size();
        }
        out.push_back(std::stoull(s.substr(start, x - start)));
        start = x + 1;
    }
    return out;
}

std::size_t to_size(const std::string& s) {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) {
        throw ArtifactError("artifact: bad integer '" + s + "'");
    }
    return v;
}

} // namespace

std::vector<float> SparseLayer::dense() const {
    std::vector<float> out(rows * cols, 0.0f);
    for (std::size_t r = 0; r < rows; ++r) {
        for (auto k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
            out[r * cols + col[k]] = values[k];
        }
    }
    return out;
}

std::size_t SparseModelArtifact::total_weights() const {
    std::size_t n = 0;
    for (const auto& l : layers) {
        n += l.rows * l.cols;
    }
    return n;
}

std::size_t SparseModelArtifact::kept_weights() const {
    std::size_t n = 0;
    for (const auto& l : layers) {
        n += l.kept();
    }
    return n;
}

Rational compression_rate(std::size_t total, std::size_t kept) {
    if (kept == 0) {
        throw ArtifactError("compression_rate: no weights kept");
    }
    const auto g = std::gcd(total, kept);
    return {total / g, kept / g};
}

Rational compression_rate(const SparseModelArtifact& a) {
    return compression_rate(a.total_weights(), a.kept_weights());
}

SparseModelArtifact build_artifact(Model& model, std::string source_precision) {
    SparseModelArtifact a;
    a.model = model.name();
    a.source_precision = std::move(source_precision);
    const auto& reg = model.registry();
    for (std::size_t id = 0; id < reg.size(); ++id) {
        const auto& p = reg[id];
        if (p.exempt) {
            continue;
        }
        SparseLayer l;
        l.id = id;
        l.name = p.name;
        l.shape = p.w.shape();
        l.rows = l.shape.at(0);
        l.cols = p.w.numel() / l.rows;
        l.tau = p.tau;
        l.temp = p.temp;
        const bool use_mask = p.mode == PruneMode::hard && !p.mask.empty();
        auto w = p.w.data();
        l.row_ptr.push_back(0);
        for (std::size_t r = 0; r < l.rows; ++r) {
            for (std::size_t c = 0; c < l.cols; ++c) {
                const auto k = r * l.cols + c;
                if (use_mask ? p.mask[k] != 0 : is_kept(w[k], p.tau)) {
                    l.col.push_back(static_cast<std::uint32_t>(c));
                    l.values.push_back(static_cast<float>(w[k]));
                }
            }
            l.row_ptr.push_back(l.values.size());
        }
        a.layers.push_back(std::move(l));
    }
    for (const auto& t : model.parameters()) {
        bool sparse = false;
        for (const auto& p : reg) {
            sparse = sparse || (!p.exempt && t.tensor.same_node(p.w));
        }
        if (sparse) {
            continue;
        }
        DenseTensor d{t.name, t.tensor.shape(), {}};
        for (double v : t.tensor.data()) {
            d.values.push_back(static_cast<float>(v));
        }
        a.dense.push_back(std::move(d));
    }
    for (const auto& b : model.buffers()) {
        DenseTensor d{b.name, {b.values->size()}, {}};
        for (double v : *b.values) {
            d.values.push_back(static_cast<float>(v));
        }
        a.dense.push_back(std::move(d));
    }
    return a;
}

std::string manifest_text(const SparseModelArtifact& a) {
    std::ostringstream m;
    const auto total = a.total_weights();
    const auto kept = a.kept_weights();
    m << "format_version = " << a.format_version << '\n';
    m << "model = " << a.model << '\n';
    m << "source_precision = " << a.source_precision << '\n';
    m << "total_weights = " << total << '\n';
    m << "kept_weights = " << kept << '\n';
    if (kept > 0) {
        const auto r = compression_rate(total, kept);
        m << "compression_rate = " << r.num << '/' << r.den << '\n';
        m << "compression_rate_decimal = " << format_double(r.value()) << '\n';
    }
    m << "layer_count = " << a.layers.size() << '\n';
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        const auto& l = a.layers[i];
        const auto k = "layer." + std::to_string(i) + '.';
        m << k << "id = " << l.id << '\n';
        m << k << "name = " << l.name << '\n';
        m << k << "shape = " << dims(l.shape) << '\n';
        m << k << "rows = " << l.rows << '\n';
        m << k << "cols = " << l.cols << '\n';
        m << k << "tau = " << format_double(l.tau) << '\n';
        m << k << "temp = " << format_double(l.temp) << '\n';
        m << k << "kept = " << l.kept() << '\n';
    }
    m << "dense_count = " << a.dense.size() << '\n';
    for (std::size_t i = 0; i < a.dense.size(); ++i) {
        const auto k = "dense." + std::to_string(i) + '.';
        m << k << "name = " << a.dense[i].name << '\n';
        m << k << "shape = " << dims(a.dense[i].shape) << '\n';
    }
    return m.str();
}

std::string serialize_artifact(const SparseModelArtifact& a) {
    std::string out(kMagic, 8);
    const auto manifest = manifest_text(a);
    put<std::uint64_t>(out, manifest.size());
    out += manifest;
    for (const auto& l : a.layers) {
        for (auto v : l.row_ptr) {
            put<std::uint64_t>(out, v);
        }
        for (auto v : l.col) {
            put<std::uint32_t>(out, v);
        }
        for (auto v : l.values) {
            put<float>(out, v);
        }
    }
    for (const auto& d : a.dense) {
        for (auto v : d.values) {
            put<float>(out, v);
        }
    }
    return out;
}

SparseModelArtifact parse_artifact(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw ArtifactError("artifact: bad magic");
    }
    std::size_t pos = 8;
    const auto mlen = get<std::uint64_t>(bytes, pos);
    if (mlen > bytes.size() - pos) {
        throw ArtifactError("artifact: truncated manifest");
    }
    std::map<std::string, std::string> kv;
    {
        std::istringstream ms(bytes.substr(pos, mlen));
        std::string line;
        while (std::getline(ms, line)) {
            const auto eq = line.find(" = ");
            if (eq == std::string::npos) {
                throw ArtifactError("artifact: malformed manifest line '" + line + "'");
            }
            kv[line.substr(0, eq)] = line.substr(eq + 3);
        }
    }
    pos += mlen;
    auto need = [&](const std::string& k) -> const std::string& {
        auto it = kv.find(k);
        if (it == kv.end()) {
            throw ArtifactError("artifact: manifest lacks " + k);
        }
        return it->second;
    };

    SparseModelArtifact a;
    a.format_version = static_cast<int>(to_size(need("format_version")));
    if (a.format_version != 1) {
        throw ArtifactError("artifact: unsupported format_version " + std::to_string(a.format_version));
    }
    a.model = need("model");
    a.source_precision = need("source_precision");
    const auto nl = to_size(need("layer_count"));
    for (std::size_t i = 0; i < nl; ++i) {
        const auto k = "layer." + std::to_string(i) + '.';
        SparseLayer l;
        l.id = to_size(need(k + "id"));
        l.name = need(k + "name");
        l.shape = parse_dims(need(k + "shape"));
        l.rows = to_size(need(k + "rows"));
        l.cols = to_size(need(k + "cols"));
        l.tau = std::stod(need(k + "tau"));
        l.temp = std::stod(need(k + "temp"));
        const auto kept = to_size(need(k + "kept"));
        if (shape_numel(l.shape) != l.rows * l.cols) {
            throw ArtifactError("artifact: layer " + l.name + " shape does not match rows x cols");
        }
        l.row_ptr.resize(l.rows + 1);
        for (auto& v : l.row_ptr) {
            v = get<std::uint64_t>(bytes, pos);
        }
        if (l.row_ptr.front() != 0 || l.row_ptr.back() != kept) {
            throw ArtifactError("artifact: layer " + l.name + " row pointers disagree with kept = " +
                                std::to_string(kept));
        }
        for (std::size_t r = 0; r < l.rows; ++r) {
            if (l.row_ptr[r] > l.row_ptr[r + 1]) {
                throw ArtifactError("artifact: layer " + l.name + " row pointers decrease");
            }
        }
        l.col.resize(kept);
        for (auto& v : l.col) {
            v = get<std::uint32_t>(bytes, pos);
            if (v >= l.cols) {
                throw ArtifactError("artifact: layer " + l.name + " column index out of range");
            }
        }
        l.values.resize(kept);
        for (auto& v : l.values) {
            v = get<float>(bytes, pos);
        }
        a.layers.push_back(std::move(l));
    }
    const auto nd = to_size(need("dense_count"));
    for (std::size_t i = 0; i < nd; ++i) {
        const auto k = "dense." + std::to_string(i) + '.';
        DenseTensor d{need(k + "name"), parse_dims(need(k + "shape")), {}};
        d.values.resize(shape_numel(d.shape));
        for (auto& v : d.values) {
            v = get<float>(bytes, pos);
        }
        a.dense.push_back(std::move(d));
    }
    if (pos != bytes.size()) {
        throw ArtifactError("artifact: trailing bytes");
    }
    if (to_size(need("total_weights")) != a.total_weights() || to_size(need("kept_weights")) != a.kept_weights()) {
        throw ArtifactError("artifact: manifest weight counts disagree with payload");
    }
    return a;
}

void write_artifact(const std::filesystem::path& path, const SparseModelArtifact& a) {
    write_file_atomic(path, serialize_artifact(a));
}

SparseModelArtifact read_artifact(const std::filesystem::path& path) {
    return parse_artifact(read_file(path));
}

} // namespace ltp
