#include "ltp/analysis.hpp"
#include "ltp/artifact.hpp"
#include "ltp/checkpoint.hpp"
#include "ltp/config.hpp"
#include "ltp/core.hpp"
#include "ltp/trainer.hpp"

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace ltp;

namespace {

py::dict trail_row(const TrailCheckpoint& t) {
    py::dict d;
    d["epoch"] = t.epoch;
    d["keep_ratio"] = t.keep_ratio;
    d["train_loss"] = t.train_loss;
    d["train_top1"] = t.train_top1;
    d["val_loss"] = t.val_loss;
    d["top1"] = t.top1;
    d["top5"] = t.top5;
    d["hard_top1"] = t.hard_top1;
    d["lambda"] = t.lambda;
    d["soft_l0_total"] = t.soft_l0_total;
    py::list layers;
    for (const auto& s : t.per_layer) {
        py::dict l;
        l["layer_id"] = s.layer_id;
        l["name"] = s.name;
        l["tau"] = s.tau;
        l["temp"] = s.temp;
        l["keep_ratio"] = s.keep_ratio;
        l["mean_w_sq"] = s.mean_w_sq;
        layers.append(l);
    }
    d["per_layer"] = layers;
    return d;
}

py::dict run_summary(const PruneResult& r) {
    py::dict d;
    py::list trail;
    for (const auto& t : r.trail) {
        trail.append(trail_row(t));
    }
    d["trail"] = trail;
    d["diverged"] = r.diverged;
    d["stop_reason"] = r.stop_reason;
    d["best_epoch"] = r.best ? py::object(py::int_(r.trail[*r.best].epoch)) : py::object(py::none());
    d["transitional_occupancy"] = transitional_occupancy(r.model);
    return d;
}

} // namespace

PYBIND11_MODULE(_ltp, m) {
    m.doc() = "Learned-threshold pruning core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);
    py::register_exception<ArtifactError>(m, "ArtifactError", PyExc_ValueError);

    m.def("soft_mask", &soft_mask, py::arg("w"), py::arg("tau"), py::arg("temp"));
    m.def("sigma_T", &sigma_T, py::arg("w"), py::arg("tau"), py::arg("temp"));
    m.def("grad_v_wrt_tau", &grad_v_wrt_tau, py::arg("w"), py::arg("tau"), py::arg("temp"));
    m.def(
        "grad_v_wrt_w",
        [](double w, double tau, double temp, bool full) {
            return grad_v_wrt_w(w, tau, temp, full ? Derivative::full : Derivative::approx);
        },
        py::arg("w"), py::arg("tau"), py::arg("temp"), py::arg("full") = true);
    m.def(
        "soft_l0", [](const std::vector<double>& w, double tau, double temp) { return soft_l0(w, tau, temp); },
        py::arg("w"), py::arg("tau"), py::arg("temp"));
    m.def(
        "hard_keep_count", [](const std::vector<double>& w, double tau) { return hard_keep_count(w, tau); },
        py::arg("w"), py::arg("tau"));
    m.def(
        "per_layer_temperature",
        [](const std::vector<double>& w, double T0) { return per_layer_temperature(w, T0); }, py::arg("w"),
        py::arg("T0"));
    m.def(
        "lambda_value",
        [](double lambda0, double c_lambda, int n) {
            LtpHyperParams hp;
            hp.lambda0 = lambda0;
            hp.c_lambda = c_lambda;
            return lambda_value(hp, n);
        },
        py::arg("lambda0"), py::arg("c_lambda"), py::arg("n"));
    m.def(
        "compression_rate",
        [](std::size_t total, std::size_t kept) {
            const auto r = compression_rate(total, kept);
            return py::make_tuple(r.num, r.den);
        },
        py::arg("total"), py::arg("kept"));

    m.def(
        "normalize_config", [](const std::string& text) { return serialize_config(parse_config(text)); },
        py::arg("text"), "Parses and validates config text, returning it with every key spelled out.");

    m.def(
        "prune_run",
        [](const std::string& config_text, const std::function<void(py::dict)>& on_epoch) {
            const auto cfg = parse_config(config_text);
            EpochCallback cb;
            if (on_epoch) {
                cb = [&](const TrailCheckpoint& t) {
                    py::gil_scoped_acquire gil;
                    on_epoch(trail_row(t));
                };
            }
            PruneResult r;
            {
                py::gil_scoped_release release;
                r = prune_run(cfg, cb);
            }
            return run_summary(r);
        },
        py::arg("config_text"), py::arg("on_epoch") = nullptr);

    m.def(
        "checkpoint_info",
        [](const std::filesystem::path& path) {
            auto ck = load_checkpoint(path);
            py::dict d;
            d["model"] = ck.model.name();
            d["classes"] = ck.model.classes();
            d["parameters"] = ck.model.parameter_count();
            d["prunable"] = ck.model.prunable_count();
            d["keep_ratio"] = ck.model.keep_ratio();
            d["meta"] = ck.meta;
            d["layers"] = py::list();
            for (const auto& p : ck.model.registry()) {
                py::dict l;
                l["name"] = p.name;
                l["tau"] = p.tau;
                l["temp"] = p.temp;
                l["mode"] = std::string(to_string(p.mode));
                l["exempt"] = p.exempt;
                d["layers"].cast<py::list>().append(l);
            }
            return d;
        },
        py::arg("path"));

    m.def(
        "export_checkpoint",
        [](const std::filesystem::path& checkpoint, const std::filesystem::path& out) {
            auto ck = load_checkpoint(checkpoint);
            const auto precision =
                ck.config_text.empty() || parse_config(ck.config_text).precision == Precision::f64 ? "f64" : "f32";
            auto hard = finalize(ck.model);
            const auto art = build_artifact(hard, precision);
            write_artifact(out, art);
            return py::make_tuple(art.total_weights(), art.kept_weights());
        },
        py::arg("checkpoint"), py::arg("out"));

    m.def(
        "read_artifact",
        [](const std::filesystem::path& path) {
            const auto a = read_artifact(path);
            py::dict d;
            d["model"] = a.model;
            d["source_precision"] = a.source_precision;
            d["total_weights"] = a.total_weights();
            d["kept_weights"] = a.kept_weights();
            py::list layers;
            for (const auto& l : a.layers) {
                py::dict e;
                e["id"] = l.id;
                e["name"] = l.name;
                e["shape"] = l.shape;
                e["tau"] = l.tau;
                e["kept"] = l.kept();
                e["dense"] = l.dense();
                layers.append(e);
            }
            d["layers"] = layers;
            return d;
        },
        py::arg("path"));

    m.def(
        "evaluate_checkpoint",
        [](const std::filesystem::path& path, const std::filesystem::path& idx_dir) {
            auto ck = load_checkpoint(path);
            auto data = load_idx_dir(idx_dir, ck.model.classes());
            data.val.norm_mean = ck.norm_mean;
            data.val.norm_std = ck.norm_std;
            const auto r = evaluate(ck.model, data.val);
            return py::make_tuple(r.loss, r.top1, r.top5);
        },
        py::arg("path"), py::arg("idx_dir"));
}
