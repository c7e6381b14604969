// Acceptance checks 1-8. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Usage: acceptance <path to ltp CLI>

#include "core_oracle.hpp"

#include "ltp/artifact.hpp"
#include "ltp/checkpoint.hpp"
#include "ltp/core.hpp"
#include "ltp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

using namespace ltp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

double rel_err(double a, double b) {
    const double d = std::max(std::fabs(a), std::fabs(b));
    return d == 0.0 ? 0.0 : std::fabs(a - b) / d;
}

fs::path scratch(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("ltp_acceptance_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string epoch_file(int e) {
    return fmt("epoch_%03d.ckpt", e);
}

bool same_bits(double a, double b) {
    return std::memcmp(&a, &b, sizeof a) == 0;
}

// 1. analytic derivatives against five-point central differences
Outcome gradient_oracles() {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> ug(-1.0, 1.0);
    const int points = 2000;
    const char* names[] = {"sigma_T", "dv/dtau", "dv/dw", "dL0/dtau", "dL0/dw", "weight_grad"};
    double worst[6] = {};
    int saturated = 0;
    for (int i = 0; i < points; ++i) {
        const auto p = testing::random_prune_point(rng);
        saturated += p.saturated;
        const std::vector<double> one = {p.w};
        PrunableParam pp;
        pp.w = Tensor::from(one, {1});
        pp.tau = p.tau;
        pp.temp = p.temp;
        pp.mode = PruneMode::soft;
        const double g = ug(rng), lambda = 1e-3 * (1.0 + ug(rng));
        const std::vector<double> dv = {g};
        const double pairs[6][2] = {
            {sigma_T(p.w, p.tau, p.temp), testing::fd_mask_wrt_w(p)},
            {grad_v_wrt_tau(p.w, p.tau, p.temp), testing::fd_v_wrt_tau(p)},
            {grad_v_wrt_w(p.w, p.tau, p.temp, Derivative::full), testing::fd_v_wrt_w(p)},
            {grad_l0_wrt_tau(one, p.tau, p.temp), testing::fd_mask_wrt_tau(p)},
            {grad_l0_wrt_w(one, p.tau, p.temp)[0], testing::fd_mask_wrt_w(p)},
            {weight_grad(pp, dv, lambda, GradMode::full_unclamped)[0], testing::fd_total_wrt_w(p, g, lambda)},
        };
        for (int k = 0; k < 6; ++k) {
            worst[k] = std::max(worst[k], rel_err(pairs[k][0], pairs[k][1]));
        }
    }
    double all = 0.0;
    std::string detail = fmt("%d points (%d saturated), worst rel. error:", points, saturated);
    for (int k = 0; k < 6; ++k) {
        all = std::max(all, worst[k]);
        detail += fmt(" %s %.1e", names[k], worst[k]);
    }
    return {all <= 1e-6, detail};
}

// 2. saturation limit, sigma_T scaling and symmetry
Outcome limits() {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> gap(40.0, 400.0);
    double worst_ratio = 0.0;
    int bad_half = 0, bad_odd = 0;
    const int points = 2000;
    for (int i = 0; i < points; ++i) {
        const auto p = testing::random_prune_point(rng);
        const double tau = p.w * p.w - gap(rng) * p.temp * (i % 2 ? 1.0 : -1.0);
        const double soft = soft_prune(Tensor::from({p.w}, {1}), tau, p.temp).item();
        const double hard = hard_prune(Tensor::from({p.w}, {1}), tau).item();
        worst_ratio = std::max(worst_ratio, std::fabs(soft - hard) / std::fabs(p.w));
        bad_half += sigma_T(p.w, p.w * p.w, 2.0 * p.temp) != 0.5 * sigma_T(p.w, p.w * p.w, p.temp);
        bad_odd += sigma_T(-p.w, p.tau, p.temp) != -sigma_T(p.w, p.tau, p.temp);
    }
    return {worst_ratio <= 1e-12 && bad_half == 0 && bad_odd == 0,
            fmt("%d points: max |soft-hard|/|w| = %.1e, halving mismatches %d, oddness mismatches %d", points,
                worst_ratio, bad_half, bad_odd)};
}

// 3. lambda schedule on scripted traces
Outcome scheduler() {
    int failures = 0;
    std::string notes;
    auto check_exact = [&](const LambdaState& s, const LtpHyperParams& hp) {
        if (s.lambda != std::pow(hp.c_lambda, static_cast<double>(s.n)) * hp.lambda0) {
            ++failures;
        }
    };
    {
        LtpHyperParams hp; // c = 1.0
        auto s = initial_lambda_state(hp, 1.0);
        for (int e = 0; e < 40; ++e) {
            s = lambda_step(s, hp, 1.0);
            check_exact(s, hp);
            failures += s.lambda != hp.lambda0;
        }
        notes += fmt("c=1: n=%d lambda=%g", s.n, s.lambda);
    }
    {
        LtpHyperParams hp;
        hp.c_lambda = 1.05;
        hp.N_lambda = 5;
        hp.lambda0 = 1e-7;
        auto s = initial_lambda_state(hp, 0.5);
        const int stall = 5 * hp.N_lambda;
        for (int e = 0; e < stall; ++e) {
            s = lambda_step(s, hp, 0.5);
            check_exact(s, hp);
        }
        failures += s.n != 5;
        double keep = 0.5;
        for (int e = 0; e < 10; ++e) {
            keep -= 0.02;
            s = lambda_step(s, hp, keep);
            check_exact(s, hp);
        }
        failures += s.n != 5;
        failures += std::fabs(s.lambda - 1.2763e-7) > 1e-11;
        notes += fmt("; stall of %d epochs with N=5: n=%d lambda=%.5g, steady drop keeps n", stall, s.n, s.lambda);
    }
    {
        LtpHyperParams hp;
        hp.c_lambda = 1.2;
        hp.N_lambda = 2;
        auto s = initial_lambda_state(hp, 0.8);
        const double trace[] = {0.8, 0.799, 0.795, 0.79, 0.7, 0.7, 0.7};
        const int expect_n[] = {0, 1, 1, 2, 2, 2, 2};
        for (std::size_t e = 0; e < std::size(trace); ++e) {
            s = lambda_step(s, hp, trace[e]);
            check_exact(s, hp);
            failures += s.n != expect_n[e];
        }
        notes += "; scripted sub-point trace matches";
    }
    return {failures == 0, notes + fmt("; %d mismatches", failures)};
}

// 4. gap formation per gradient mode, through the CLI sweep
Outcome ablation_gap(const std::string& cli) {
    const auto dir = scratch("sweep");
    const auto cfg = fs::path(LTP_SOURCE_DIR) / "configs" / "ablation_gap.cfg";
    const std::string cmd = "\"" + cli + "\" sweep --config \"" + cfg.string() +
                            "\" --modes approx,full_unclamped,l0_in_weight_update --out \"" + dir.string() + "\" > \"" +
                            (dir / "sweep.log").string() + "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) {
        return {false, "sweep command failed, see " + (dir / "sweep.log").string()};
    }
    std::ifstream in(dir / "sweep.csv");
    std::string line;
    std::getline(in, line);
    std::map<std::string, std::pair<double, double>> rows; // keep, rho
    std::map<std::string, int> epochs;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string mode, ep, keep, rho;
        std::getline(ss, mode, ',');
        std::getline(ss, ep, ',');
        std::getline(ss, keep, ',');
        std::getline(ss, rho, ',');
        rows[mode] = {std::stod(keep), std::stod(rho)};
        epochs[mode] = std::stoi(ep);
    }
    if (rows.size() != 3) {
        return {false, "sweep.csv does not hold three modes"};
    }
    const auto a = rows["approx"], f = rows["full_unclamped"], l = rows["l0_in_weight_update"];
    const bool equal_epochs = epochs["approx"] == epochs["full_unclamped"] && epochs["approx"] == epochs["l0_in_weight_update"];
    const bool pass = equal_epochs && a.second > 0 && f.second <= 0.1 * a.second && l.second <= 0.1 * a.second &&
                      f.first > a.first && l.first > a.first;
    return {pass, fmt("%d epochs each; rho approx %.3g, full_unclamped %.3g (%.3f x), l0_in_weight_update %.3g (%.3f x); "
                      "keep %.4f / %.4f / %.4f",
                      epochs["approx"], a.second, f.second, a.second > 0 ? f.second / a.second : NAN, l.second,
                      a.second > 0 ? l.second / a.second : NAN, a.first, f.first, l.first)};
}

// 5. weight-scale collapse under batchnorm
Outcome batchnorm_regularization() {
    auto base = load_config(fs::path(LTP_SOURCE_DIR) / "configs" / "bn_regularization.cfg");
    base.out_dir.clear();
    const auto data = load_data(base);
    const std::string layer = "conv4.weight";
    struct Run {
        double keep, train_top1, shrink;
    };
    std::map<Regularizer, Run> runs;
    for (auto r : {Regularizer::none, Regularizer::l2, Regularizer::soft_l0}) {
        auto cfg = base;
        cfg.regularizer = r;
        const auto res = prune_run(cfg, data);
        double before = 0.0, after = 0.0;
        for (const auto& s : layer_stats(res.initial)) {
            before = s.name == layer ? s.mean_w_sq : before;
        }
        for (const auto& s : layer_stats(res.model)) {
            after = s.name == layer ? s.mean_w_sq : after;
        }
        runs[r] = {res.trail.back().keep_ratio, res.trail.back().train_top1, before / after};
    }
    const auto &none = runs[Regularizer::none], &l2 = runs[Regularizer::l2], &l0 = runs[Regularizer::soft_l0];
    const bool pass = l2.shrink >= 10.0 && std::fabs(l2.train_top1 - none.train_top1) <= 0.02 && l0.shrink <= 2.0 &&
                      l0.shrink >= 0.5 && l0.keep <= 0.5 * none.keep;
    return {pass, fmt("%s mean(w^2) initial/final: l2 %.1f, soft_l0 %.2f; train top1 none %.4f l2 %.4f; keep none %.4f "
                      "soft_l0 %.4f",
                      layer.c_str(), l2.shrink, l0.shrink, none.train_top1, l2.train_top1, none.keep, l0.keep)};
}

std::size_t brute_force_kept(const Model& m, std::size_t& total) {
    std::size_t kept = 0;
    total = 0;
    for (const auto& p : m.registry()) {
        if (p.exempt) {
            continue;
        }
        for (double w : p.w.data()) {
            kept += w * w > p.tau ? 1 : 0;
            ++total;
        }
    }
    return kept;
}

// 6. trail: one checkpoint per epoch, monotone keep ratio, audit, determinism
Outcome trail_property(RunConfig cfg, PruneResult& first, DatasetPair& data_out) {
    const auto dir = scratch("trail");
    cfg.out_dir = (dir / "run").string();
    data_out = load_data(cfg);
    first = prune_run(cfg, data_out);
    int missing = 0, audit = 0, rises = 0;
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir / "run")) {
        files += e.path().filename().string().rfind("epoch_", 0) == 0;
    }
    double prev = 1.0;
    for (const auto& t : first.trail) {
        const auto path = dir / "run" / epoch_file(t.epoch);
        if (!fs::exists(path)) {
            ++missing;
            continue;
        }
        const auto ck = load_checkpoint(path);
        std::size_t total = 0;
        const auto kept = brute_force_kept(ck.model, total);
        audit += t.keep_ratio != static_cast<double>(kept) / static_cast<double>(total);
        rises += t.keep_ratio > prev + 0.005;
        prev = t.keep_ratio;
    }
    fs::rename(dir / "run", dir / "first");
    const auto second = prune_run(cfg, data_out);
    int diffs = second.trail.size() != first.trail.size();
    for (std::size_t i = 0; !diffs && i < first.trail.size(); ++i) {
        const auto &x = first.trail[i], &y = second.trail[i];
        diffs += !same_bits(x.keep_ratio, y.keep_ratio) || !same_bits(x.train_loss, y.train_loss) ||
                 !same_bits(x.val_loss, y.val_loss) || !same_bits(x.top1, y.top1) || !same_bits(x.lambda, y.lambda);
        diffs += read_file(dir / "first" / epoch_file(x.epoch)) != read_file(dir / "run" / epoch_file(x.epoch));
    }
    const bool pass = !first.trail.empty() && files == first.trail.size() && missing == 0 && audit == 0 &&
                      rises == 0 && diffs == 0;
    return {pass, fmt("%zu epochs, %zu checkpoint files, keep %.4f -> %.4f, audit mismatches %d, rises > 0.005: %d, "
                      "rerun differences %d",
                      first.trail.size(), files, first.trail.front().keep_ratio, first.trail.back().keep_ratio, audit,
                      rises, diffs)};
}

// 7. LTP against one-shot global magnitude pruning at 10x, then finetune
Outcome desk_compression(const RunConfig& cfg, const PruneResult& res, const DatasetPair& data, Model& finalized) {
    finalized = finalize(res.model);
    const double keep = finalized.keep_ratio();
    const double soft = res.trail.back().top1;
    const double hard = evaluate(finalized, data.val).top1;
    auto magnitude = global_magnitude_prune(res.initial, keep);
    const double mag = evaluate(magnitude, data.val).top1;

    auto tuned = finetune(finalized, data.train,
                          {std::max(cfg.finetune_epochs, 1), cfg.finetune_lr, cfg.momentum, cfg.batch_size, cfg.seed});
    double masked = 0.0;
    int flips = 0;
    for (std::size_t r = 0; r < tuned.registry().size(); ++r) {
        const auto& p = tuned.registry()[r];
        if (p.exempt) {
            continue;
        }
        flips += p.mask != finalized.registry()[r].mask;
        auto w = p.w.data();
        for (std::size_t k = 0; k < w.size(); ++k) {
            masked += p.mask[k] ? 0.0 : std::fabs(w[k]);
        }
    }
    const double tuned_top1 = evaluate(tuned, data.val).top1;
    const bool pass = keep <= 0.1 && hard > mag && std::fabs(soft - hard) <= 0.005 && masked == 0.0 && flips == 0;
    return {pass, fmt("keep %.4f (%.1fx); top1 LTP hard %.4f vs global magnitude %.4f; soft %.4f (|diff| %.4f); "
                      "finetuned %.4f, masked |w| sum %g, mask changes %d",
                      keep, 1.0 / keep, hard, mag, soft, std::fabs(soft - hard), tuned_top1, masked, flips)};
}

int reconstruction_mismatches(const Model& hard, const SparseModelArtifact& art) {
    int bad = 0;
    for (const auto& l : art.layers) {
        const auto w = hard.registry()[l.id].w.data();
        std::vector<float> expect(w.size());
        for (std::size_t k = 0; k < w.size(); ++k) {
            expect[k] = static_cast<float>(w[k]);
        }
        const auto got = l.dense();
        bad += got.size() != expect.size() || std::memcmp(got.data(), expect.data(), got.size() * sizeof(float)) != 0;
    }
    return bad;
}

// a finalized layer's keep set is its mask; finetuning may move kept weights under tau
int rate_mismatches(const Model& hard, const std::string& bytes) {
    std::size_t total = 0, kept = 0;
    for (const auto& p : hard.registry()) {
        if (!p.exempt) {
            total += p.mask.size();
            kept += static_cast<std::size_t>(std::count(p.mask.begin(), p.mask.end(), 1));
        }
    }
    const auto g = std::gcd(total, kept);
    const auto expect = fmt("compression_rate = %zu/%zu\n", total / g, kept / g);
    return bytes.find(expect) == std::string::npos;
}

// 8. artifact export round trip and golden file
Outcome artifact_roundtrip(const std::string& cli, Model& desk) {
    const auto dir = scratch("artifact");
    const auto fixture = fs::path(LTP_SOURCE_DIR) / "tests" / "fixtures";
    const std::string cmd = "\"" + cli + "\" export --checkpoint \"" + (fixture / "model.ckpt").string() + "\" --out \"" +
                            (dir / "model.ltps").string() + "\" > /dev/null";
    if (std::system(cmd.c_str()) != 0) {
        return {false, "export command failed"};
    }
    const auto exported = read_file(dir / "model.ltps");
    const auto golden = read_file(fixture / "model.ltps");
    const auto fixture_model = finalize(load_checkpoint(fixture / "model.ckpt").model);
    int recon = reconstruction_mismatches(fixture_model, parse_artifact(exported));
    int rates = rate_mismatches(fixture_model, exported);

    write_artifact(dir / "desk.ltps", build_artifact(desk));
    const auto desk_bytes = read_file(dir / "desk.ltps");
    recon += reconstruction_mismatches(desk, parse_artifact(desk_bytes));
    rates += rate_mismatches(desk, desk_bytes);

    const bool golden_ok = exported == golden;
    return {recon == 0 && rates == 0 && golden_ok,
            fmt("reconstruction mismatches %d, compression-rate mismatches %d, golden bytes %s (%zu bytes)", recon, rates,
                golden_ok ? "equal" : "DIFFER", exported.size())};
}

} // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: acceptance <ltp cli>\n");
        return 2;
    }
    const std::string cli = argv[1];
    int failed = 0;
    auto report = [&](int id, const char* title, double limit_s, const std::function<Outcome()>& run) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= limit_s;
        if (!in_time) {
            o.detail += fmt("; over the %.0f s budget", limit_s);
        }
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::printf("criterion %d %s: %s (%.1f s) %s\n", id, title, pass ? "PASS" : "FAIL", secs, o.detail.c_str());
        std::fflush(stdout);
    };

    report(1, "gradient oracles", 10, gradient_oracles);
    report(2, "limits", 60, limits);
    report(3, "lambda scheduler", 60, scheduler);
    report(4, "premature-termination ablation", 20 * 60, [&] { return ablation_gap(cli); });
    report(5, "batchnorm regularization ablation", 20 * 60, batchnorm_regularization);

    auto desk_cfg = load_config(fs::path(LTP_SOURCE_DIR) / "configs" / "desk_mlp3.cfg");
    PruneResult desk_run;
    DatasetPair desk_data;
    Model desk_final{"", {}, 0};
    report(6, "trail property", 15 * 60, [&] { return trail_property(desk_cfg, desk_run, desk_data); });
    report(7, "desk compression", 15 * 60, [&] {
        if (desk_run.trail.empty()) {
            return Outcome{false, "no trail from criterion 6"};
        }
        return desk_compression(desk_cfg, desk_run, desk_data, desk_final);
    });
    report(8, "artifact round trip", 120, [&] {
        if (desk_final.registry().empty()) {
            return Outcome{false, "no finalized model from criterion 7"};
        }
        return artifact_roundtrip(cli, desk_final);
    });
    std::printf("%d of 8 criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
