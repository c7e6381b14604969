#include "ltp/analysis.hpp"
#include "ltp/artifact.hpp"
#include "ltp/checkpoint.hpp"
#include "ltp/config.hpp"
#include "ltp/trainer.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>

namespace fs = std::filesystem;
using namespace ltp;

namespace {

void print_epoch(const TrailCheckpoint& t) {
    std::printf("epoch %3d  keep %.4f  lambda %.3g  train_loss %.4f  val_top1 %.4f  hard_top1 %.4f\n", t.epoch,
                t.keep_ratio, t.lambda, t.train_loss, t.top1, t.hard_top1);
    std::fflush(stdout);
}

FinetuneOptions finetune_options(const RunConfig& cfg) {
    return {cfg.finetune_epochs, cfg.finetune_lr, cfg.momentum, cfg.batch_size, cfg.seed};
}

void report_eval(const char* label, const EvalResult& r) {
    std::printf("%s loss = %s\n%s top1 = %s\n", label, format_double(r.loss).c_str(), label,
                format_double(r.top1).c_str());
    if (!std::isnan(r.top5)) {
        std::printf("%s top5 = %s\n", label, format_double(r.top5).c_str());
    }
}

Checkpoint to_checkpoint(const Model& m, const Checkpoint& like, const EvalResult& val) {
    Checkpoint ck;
    ck.model = m;
    ck.config_text = like.config_text;
    ck.norm_mean = like.norm_mean;
    ck.norm_std = like.norm_std;
    ck.meta["stage"] = "finetuned";
    ck.meta["keep_ratio"] = format_double(m.keep_ratio());
    ck.meta["top1"] = format_double(val.top1);
    ck.meta["val_loss"] = format_double(val.loss);
    return ck;
}

int cmd_prune(const std::string& config_path, const std::string& out_override) {
    auto cfg = load_config(config_path);
    if (!out_override.empty()) {
        cfg.out_dir = out_override;
    }
    if (cfg.out_dir.empty()) {
        throw std::invalid_argument("prune needs out_dir in the config or --out");
    }
    const auto data = load_data(cfg);
    auto res = prune_run(cfg, data, print_epoch);
    std::printf("stopped: %s\n", res.stop_reason.c_str());
    if (res.best) {
        std::printf("best epoch = %d\n", res.trail[*res.best].epoch);
    }
    if (cfg.finetune_epochs > 0) {
        Checkpoint like;
        like.config_text = serialize_config(cfg);
        like.norm_mean = res.norm_mean;
        like.norm_std = res.norm_std;
        auto hard = finalize(res.model);
        report_eval("hard", evaluate(hard, data.val));
        auto tuned = finetune(hard, data.train, finetune_options(cfg));
        const auto val = evaluate(tuned, data.val);
        report_eval("finetuned", val);
        save_checkpoint(fs::path(cfg.out_dir) / "finetuned.ckpt", to_checkpoint(tuned, like, val));
    }
    return res.diverged ? 2 : 0;
}

int cmd_finetune(const std::string& from, const std::string& out, int epochs, double lr) {
    auto ck = load_checkpoint(from);
    auto cfg = parse_config(ck.config_text);
    auto opt = finetune_options(cfg);
    if (epochs >= 0) {
        opt.epochs = epochs;
    }
    if (lr > 0) {
        opt.lr = lr;
    }
    const auto data = load_data(cfg);
    auto hard = finalize(ck.model);
    report_eval("hard", evaluate(hard, data.val));
    auto tuned = finetune(hard, data.train, opt,
                          [](int e, double loss) { std::printf("finetune epoch %d  train_loss %.4f\n", e, loss); });
    const auto val = evaluate(tuned, data.val);
    report_eval("finetuned", val);
    const fs::path target = out.empty() ? fs::path(from).parent_path() / "finetuned.ckpt" : fs::path(out);
    save_checkpoint(target, to_checkpoint(tuned, ck, val));
    std::printf("wrote %s\n", target.string().c_str());
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_dir) {
    auto ck = load_checkpoint(model_path);
    auto data = load_idx_dir(data_dir, ck.model.classes());
    data.val.norm_mean = ck.norm_mean;
    data.val.norm_std = ck.norm_std;
    report_eval("val", evaluate(ck.model, data.val));
    if (auto it = ck.meta.find("top1"); it != ck.meta.end()) {
        std::printf("recorded top1 = %s\n", it->second.c_str());
    }
    return 0;
}

int cmd_export(const std::string& ckpt_path, const std::string& out) {
    auto ck = load_checkpoint(ckpt_path);
    std::string precision = "f64";
    if (!ck.config_text.empty()) {
        precision = parse_config(ck.config_text).precision == Precision::f32 ? "f32" : "f64";
    }
    auto hard = finalize(ck.model);
    const auto art = build_artifact(hard, precision);
    write_artifact(out, art);
    const auto r = compression_rate(art);
    std::printf("kept %zu of %zu weights, compression rate %llu/%llu = %s\n", art.kept_weights(), art.total_weights(),
                static_cast<unsigned long long>(r.num), static_cast<unsigned long long>(r.den),
                format_double(r.value()).c_str());
    return 0;
}

int cmd_analyze(const std::string& ckpt_path, std::size_t layer, const std::string& out, std::string original) {
    if (original.empty()) {
        original = (fs::path(ckpt_path).parent_path() / "initial.ckpt").string();
    }
    const auto pruned = load_checkpoint(ckpt_path);
    const auto orig = load_checkpoint(original);
    const auto a = analyze_layer(orig.model, pruned.model, layer);
    write_layer_analysis(a, out);
    std::printf("layer %zu (%s): tau = %s, kept-though-small = %zu, pruned-though-large = %zu\n", layer,
                a.name.c_str(), format_double(a.tau).c_str(), a.kept_though_small, a.pruned_though_large);
    return 0;
}

std::vector<std::string> split_modes(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto c = s.find(',', start);
        if (c == std::string::npos) {
            c = s.size();
        }
        if (c > start) {
            out.push_back(s.substr(start, c - start));
        }
        start = c + 1;
    }
    return out;
}

int cmd_sweep(const std::string& config_path, const std::string& modes, const std::string& out_override) {
    auto base = load_config(config_path);
    if (!out_override.empty()) {
        base.out_dir = out_override;
    }
    if (base.out_dir.empty()) {
        throw std::invalid_argument("sweep needs out_dir in the config or --out");
    }
    std::vector<GradMode> parsed;
    for (const auto& m : split_modes(modes)) {
        parsed.push_back(parse_grad_mode(m)); // reject typos before any run starts
    }
    const auto data = load_data(base);
    std::string summary = "mode,epochs,keep_ratio,transitional_occupancy,val_top1\n";
    for (auto mode : parsed) {
        auto cfg = base;
        cfg.ltp.grad_mode = mode;
        cfg.out_dir = (fs::path(base.out_dir) / std::string(to_string(mode))).string();
        std::printf("== %s\n", std::string(to_string(mode)).c_str());
        auto res = prune_run(cfg, data, print_epoch);
        const double rho = transitional_occupancy(res.model);
        const auto& last = res.trail.back();
        summary += std::string(to_string(mode)) + ',' + std::to_string(last.epoch) + ',' +
                   format_double(last.keep_ratio) + ',' + format_double(rho) + ',' + format_double(last.top1) + '\n';
    }
    write_file_atomic(fs::path(base.out_dir) / "sweep.csv", summary);
    std::fputs(summary.c_str(), stdout);
    return 0;
}

int cmd_gen_data(const std::string& out, std::uint64_t seed, std::size_t classes, const std::string& input,
                 std::size_t per_class, double noise) {
    auto cfg = parse_config("input = " + input);
    auto data = synthetic_blobs(seed, classes, cfg.input, per_class, noise);
    rescale_to_unit(data);
    write_idx_dir(data, out);
    std::printf("wrote %zu train and %zu val samples to %s\n", data.train.size(), data.val.size(), out.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Learned-threshold pruning toolkit"};
    app.require_subcommand(1);

    std::string config, out, from, model, data, checkpoint, original, modes = "approx,full_unclamped,l0_in_weight_update";
    std::size_t layer = 0;
    int epochs = -1;
    double lr = 0.0;
    std::uint64_t seed = 1;
    std::size_t classes = 10, per_class = 200;
    std::string input = "1x28x28";
    double noise = 0.2;

    auto* prune = app.add_subcommand("prune", "soft-prune training with learned thresholds");
    prune->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);
    prune->add_option("--out", out, "output directory (overrides out_dir)");

    auto* ft = app.add_subcommand("finetune", "hard-prune a checkpoint and finetune it with frozen masks");
    ft->add_option("--from", from, "checkpoint")->required()->check(CLI::ExistingFile);
    ft->add_option("--out", out, "output checkpoint (default: finetuned.ckpt next to the input)");
    ft->add_option("--epochs", epochs, "override finetune_epochs");
    ft->add_option("--lr", lr, "override finetune_lr");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the t10k split of an IDX directory");
    ev->add_option("--model", model, "checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", data, "IDX directory")->required()->check(CLI::ExistingDirectory);

    auto* ex = app.add_subcommand("export", "write the hard-pruned model as a CSR artifact");
    ex->add_option("--checkpoint", checkpoint, "checkpoint")->required()->check(CLI::ExistingFile);
    ex->add_option("--out", out, "artifact path")->required();

    auto* an = app.add_subcommand("analyze", "w^2 CDF and scatter tables for one layer");
    an->add_option("--checkpoint", checkpoint, "pruned checkpoint")->required()->check(CLI::ExistingFile);
    an->add_option("--layer", layer, "registry id")->required();
    an->add_option("--out", out, "output directory")->required();
    an->add_option("--original", original, "reference checkpoint (default: initial.ckpt next to --checkpoint)");

    auto* sw = app.add_subcommand("sweep", "run one prune per gradient mode into <out_dir>/<mode>");
    sw->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);
    sw->add_option("--modes", modes, "comma-separated gradient modes");
    sw->add_option("--out", out, "output directory (overrides out_dir)");

    auto* gen = app.add_subcommand("gen-data", "write a synthetic blob dataset as IDX files");
    gen->add_option("--out", out, "output directory")->required();
    gen->add_option("--seed", seed);
    gen->add_option("--classes", classes);
    gen->add_option("--input", input, "CxHxW");
    gen->add_option("--samples-per-class", per_class);
    gen->add_option("--noise", noise);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*prune) {
            return cmd_prune(config, out);
        }
        if (*ft) {
            return cmd_finetune(from, out, epochs, lr);
        }
        if (*ev) {
            return cmd_eval(model, data);
        }
        if (*ex) {
            return cmd_export(checkpoint, out);
        }
        if (*an) {
            return cmd_analyze(checkpoint, layer, out, original);
        }
        if (*sw) {
            return cmd_sweep(config, modes, out);
        }
        if (*gen) {
            return cmd_gen_data(out, seed, classes, input, per_class, noise);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
