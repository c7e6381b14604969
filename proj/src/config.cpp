#include "ltp/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace ltp {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(std::string_view v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) {
        throw std::invalid_argument("expected a number, got '" + std::string(v) + "'");
    }
    return out;
}

template <class Int>
Int to_int(std::string_view v) {
    Int out{};
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) {
        throw std::invalid_argument("expected an integer, got '" + std::string(v) + "'");
    }
    return out;
}

bool to_bool(std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no") {
        return false;
    }
    throw std::invalid_argument("expected true/false, got '" + std::string(v) + "'");
}

InputSpec to_input(std::string_view v) {
    InputSpec s;
    std::vector<std::size_t> dims;
    std::size_t start = 0;
    while (start <= v.size()) {
        auto x = v.find('x', start);
        if (x == std::string_view::npos) {
            x = v.size();
        }
        dims.push_back(to_int<std::size_t>(v.substr(start, x - start)));
        start = x + 1;
    }
    if (dims.size() != 3) {
        throw std::invalid_argument("expected CxHxW, got '" + std::string(v) + "'");
    }
    s.channels = dims[0];
    s.height = dims[1];
    s.width = dims[2];
    return s;
}

std::vector<std::string> to_list(std::string_view v) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start < v.size()) {
        auto c = v.find(',', start);
        if (c == std::string_view::npos) {
            c = v.size();
        }
        auto item = trim(v.substr(start, c - start));
        if (!item.empty()) {
            out.emplace_back(item);
        }
        start = c + 1;
    }
    return out;
}

using Setter = std::function<void(RunConfig&, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
    static const std::map<std::string, Setter, std::less<>> table = {
        {"model", [](RunConfig& c, std::string_view v) { c.model = v; }},
        {"dataset", [](RunConfig& c, std::string_view v) { c.dataset = v; }},
        {"data_dir", [](RunConfig& c, std::string_view v) { c.data_dir = v; }},
        {"classes", [](RunConfig& c, std::string_view v) { c.classes = to_int<std::size_t>(v); }},
        {"input", [](RunConfig& c, std::string_view v) { c.input = to_input(v); }},
        {"samples_per_class", [](RunConfig& c, std::string_view v) { c.samples_per_class = to_int<std::size_t>(v); }},
        {"noise", [](RunConfig& c, std::string_view v) { c.noise = to_double(v); }},
        {"seed", [](RunConfig& c, std::string_view v) { c.seed = to_int<std::uint64_t>(v); }},
        {"pretrain_epochs", [](RunConfig& c, std::string_view v) { c.pretrain_epochs = to_int<int>(v); }},
        {"prune_epochs", [](RunConfig& c, std::string_view v) { c.prune_epochs = to_int<int>(v); }},
        {"finetune_epochs", [](RunConfig& c, std::string_view v) { c.finetune_epochs = to_int<int>(v); }},
        {"batch_size", [](RunConfig& c, std::string_view v) { c.batch_size = to_int<std::size_t>(v); }},
        {"lr", [](RunConfig& c, std::string_view v) { c.lr = to_double(v); }},
        {"momentum", [](RunConfig& c, std::string_view v) { c.momentum = to_double(v); }},
        {"finetune_lr", [](RunConfig& c, std::string_view v) { c.finetune_lr = to_double(v); }},
        {"T0", [](RunConfig& c, std::string_view v) { c.ltp.T0 = to_double(v); }},
        {"lr_ratio", [](RunConfig& c, std::string_view v) { c.ltp.lr_ratio = to_double(v); }},
        {"lambda0", [](RunConfig& c, std::string_view v) { c.ltp.lambda0 = to_double(v); }},
        {"c_lambda", [](RunConfig& c, std::string_view v) { c.ltp.c_lambda = to_double(v); }},
        {"N_lambda", [](RunConfig& c, std::string_view v) { c.ltp.N_lambda = to_int<int>(v); }},
        {"grad_mode", [](RunConfig& c, std::string_view v) { c.ltp.grad_mode = parse_grad_mode(v); }},
        {"clamp_kappa", [](RunConfig& c, std::string_view v) { c.ltp.clamp_kappa = to_double(v); }},
        {"regularizer", [](RunConfig& c, std::string_view v) { c.regularizer = parse_regularizer(v); }},
        {"target_keep_ratio",
         [](RunConfig& c, std::string_view v) {
             if (v == "none") {
                 c.target_keep_ratio.reset();
             } else {
                 c.target_keep_ratio = to_double(v);
             }
         }},
        {"exempt_layers", [](RunConfig& c, std::string_view v) { c.exempt_layers = to_list(v); }},
        {"tau_init", [](RunConfig& c, std::string_view v) { c.tau_init = to_double(v); }},
        {"temp_recompute", [](RunConfig& c, std::string_view v) { c.temp_recompute = to_bool(v); }},
        {"precision",
         [](RunConfig& c, std::string_view v) {
             if (v == "f64") {
                 c.precision = Precision::f64;
             } else if (v == "f32") {
                 c.precision = Precision::f32;
             } else {
                 throw std::invalid_argument("precision must be f64 or f32, got '" + std::string(v) + "'");
             }
         }},
        {"validate_numerics", [](RunConfig& c, std::string_view v) { c.validate_numerics = to_bool(v); }},
        {"out_dir", [](RunConfig& c, std::string_view v) { c.out_dir = v; }},
    };
    return table;
}

} // namespace

Regularizer parse_regularizer(std::string_view s) {
    if (s == "soft_l0") {
        return Regularizer::soft_l0;
    }
    if (s == "l2") {
        return Regularizer::l2;
    }
    if (s == "l1") {
        return Regularizer::l1;
    }
    if (s == "none") {
        return Regularizer::none;
    }
    throw std::invalid_argument("unknown regularizer '" + std::string(s) + "'");
}

std::string_view to_string(Regularizer r) {
    switch (r) {
    case Regularizer::soft_l0:
        return "soft_l0";
    case Regularizer::l2:
        return "l2";
    case Regularizer::l1:
        return "l1";
    case Regularizer::none:
        return "none";
    }
    throw std::invalid_argument("unknown regularizer");
}

void RunConfig::validate() const {
    ltp.validate();
    if (dataset != "blobs" && dataset != "idx") {
        throw std::invalid_argument("dataset must be 'blobs' or 'idx', got '" + dataset + "'");
    }
    if (dataset == "idx" && data_dir.empty()) {
        throw std::invalid_argument("dataset = idx needs data_dir");
    }
    if (classes < 2) {
        throw std::invalid_argument("classes must be at least 2");
    }
    if (batch_size == 0) {
        throw std::invalid_argument("batch_size must be positive");
    }
    if (pretrain_epochs < 0 || prune_epochs < 0 || finetune_epochs < 0) {
        throw std::invalid_argument("epoch counts must be non-negative");
    }
    if (!(lr > 0.0) || !(finetune_lr > 0.0)) {
        throw std::invalid_argument("learning rates must be positive");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw std::invalid_argument("momentum must lie in [0, 1)");
    }
    if (target_keep_ratio && !(*target_keep_ratio >= 0.0 && *target_keep_ratio <= 1.0)) {
        throw std::invalid_argument("target_keep_ratio must lie in [0, 1]");
    }
}

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            nl = text.size();
        }
        ++line_no;
        auto line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(line_no, "expected 'key = value', got '" + std::string(line) + "'");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(line_no, "missing key in '" + std::string(line) + "'");
        }
        const auto it = setters().find(key);
        if (it == setters().end()) {
            throw ConfigError(line_no, "unknown key '" + std::string(key) + "'");
        }
        if (!seen.insert(std::string(key)).second) {
            throw ConfigError(line_no, "duplicate key '" + std::string(key) + "'");
        }
        try {
            it->second(cfg, value);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(line_no, std::string(key) + ": " + e.what());
        }
    }
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(0, e.what());
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(0, "cannot open " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) {
        throw std::runtime_error("format_double: conversion failed");
    }
    return std::string(buf, p);
}

std::string serialize_config(const RunConfig& c) {
    std::ostringstream os;
    os << "model = " << c.model << '\n';
    os << "dataset = " << c.dataset << '\n';
    if (!c.data_dir.empty()) {
        os << "data_dir = " << c.data_dir << '\n';
    }
    os << "classes = " << c.classes << '\n';
    os << "input = " << c.input.channels << 'x' << c.input.height << 'x' << c.input.width << '\n';
    os << "samples_per_class = " << c.samples_per_class << '\n';
    os << "noise = " << format_double(c.noise) << '\n';
    os << "seed = " << c.seed << '\n';
    os << "pretrain_epochs = " << c.pretrain_epochs << '\n';
    os << "prune_epochs = " << c.prune_epochs << '\n';
    os << "finetune_epochs = " << c.finetune_epochs << '\n';
    os << "batch_size = " << c.batch_size << '\n';
    os << "lr = " << format_double(c.lr) << '\n';
    os << "momentum = " << format_double(c.momentum) << '\n';
    os << "finetune_lr = " << format_double(c.finetune_lr) << '\n';
    os << "T0 = " << format_double(c.ltp.T0) << '\n';
    os << "lr_ratio = " << format_double(c.ltp.lr_ratio) << '\n';
    os << "lambda0 = " << format_double(c.ltp.lambda0) << '\n';
    os << "c_lambda = " << format_double(c.ltp.c_lambda) << '\n';
    os << "N_lambda = " << c.ltp.N_lambda << '\n';
    os << "grad_mode = " << to_string(c.ltp.grad_mode) << '\n';
    os << "clamp_kappa = " << format_double(c.ltp.clamp_kappa) << '\n';
    os << "regularizer = " << to_string(c.regularizer) << '\n';
    os << "target_keep_ratio = " << (c.target_keep_ratio ? format_double(*c.target_keep_ratio) : "none") << '\n';
    if (!c.exempt_layers.empty()) {
        os << "exempt_layers = ";
        for (std::size_t i = 0; i < c.exempt_layers.size(); ++i) {
            os << (i ? "," : "") << c.exempt_layers[i];
        }
        os << '\n';
    }
    os << "tau_init = " << format_double(c.tau_init) << '\n';
    os << "temp_recompute = " << (c.temp_recompute ? "true" : "false") << '\n';
    os << "precision = " << (c.precision == Precision::f32 ? "f32" : "f64") << '\n';
    os << "validate_numerics = " << (c.validate_numerics ? "true" : "false") << '\n';
    if (!c.out_dir.empty()) {
        os << "out_dir = " << c.out_dir << '\n';
    }
    return os.str();
}

} // namespace ltp
