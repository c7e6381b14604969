#include "support.hpp"

#include "ltp/artifact.hpp"
#include "ltp/checkpoint.hpp"
#include "ltp/trainer.hpp"

#include <doctest.h>

#include <fstream>

using namespace ltp;
namespace fs = std::filesystem;

namespace {

// Soft-pruned model with per-layer thresholds at a chosen quantile of w^2.
Model pruned_model(const std::string& name, double keep) {
    auto m = model_zoo::build(name, {1, 8, 8}, 5, 17);
    for (auto& p : m.registry()) {
        std::vector<double> sq;
        for (double v : p.w.data()) {
            sq.push_back(v * v);
        }
        std::sort(sq.begin(), sq.end());
        p.tau = sq[static_cast<std::size_t>((1.0 - keep) * static_cast<double>(sq.size()))];
        p.temp = per_layer_temperature(p.w.data(), 1e-3);
        p.mode = PruneMode::soft;
    }
    return m;
}

} // namespace

TEST_CASE("checkpoint round trip preserves weights, buffers and registry") {
    testing::TempDir dir("ckpt");
    auto m = pruned_model("resnet-lite", 0.3);
    m.exempt_layers({"fc"});
    for (auto& b : m.buffers()) {
        for (std::size_t i = 0; i < b.values->size(); ++i) {
            (*b.values)[i] = 0.1 * static_cast<double>(i) + 0.37;
        }
    }
    auto hard = finalize(m);
    Checkpoint ck;
    ck.model = hard;
    ck.config_text = "model = resnet-lite\n";
    ck.meta["top1"] = "0.5";
    ck.norm_mean = 0.25;
    ck.norm_std = 1.0 / 3.0;
    save_checkpoint(dir.path() / "a.ckpt", ck);
    const auto back = load_checkpoint(dir.path() / "a.ckpt");

    CHECK(back.config_text == ck.config_text);
    CHECK(back.meta.at("top1") == "0.5");
    CHECK(back.norm_mean == 0.25);
    CHECK(back.norm_std == 1.0 / 3.0);
    const auto pa = hard.parameters();
    const auto pb = back.model.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pb[i].tensor.data().begin()));
    }
    auto ba = hard.buffers();
    auto bb = const_cast<Model&>(back.model).buffers();
    for (std::size_t i = 0; i < ba.size(); ++i) {
        CHECK(*ba[i].values == *bb[i].values);
    }
    const auto& ra = hard.registry();
    const auto& rb = back.model.registry();
    REQUIRE(ra.size() == rb.size());
    for (std::size_t i = 0; i < ra.size(); ++i) {
        CHECK(ra[i].name == rb[i].name);
        CHECK(ra[i].tau == rb[i].tau);
        CHECK(ra[i].temp == rb[i].temp);
        CHECK(ra[i].mode == rb[i].mode);
        CHECK(ra[i].exempt == rb[i].exempt);
        CHECK(ra[i].mask == rb[i].mask);
        // registry id still points at the same parameter
        bool linked = false;
        for (const auto& p : pb) {
            linked = linked || (p.name == rb[i].name && p.tensor.same_node(rb[i].w));
        }
        CHECK(linked);
    }
}

TEST_CASE("corrupt checkpoints are rejected") {
    testing::TempDir dir("ckptbad");
    Checkpoint ck;
    ck.model = model_zoo::build("mlp3", {1, 4, 4}, 3, 1);
    save_checkpoint(dir.path() / "a.ckpt", ck);
    auto bytes = read_file(dir.path() / "a.ckpt");
    write_file_atomic(dir.path() / "short.ckpt", bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "short.ckpt"), CheckpointError);
    write_file_atomic(dir.path() / "long.ckpt", bytes + "x");
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "long.ckpt"), CheckpointError);
    bytes[0] = 'X';
    write_file_atomic(dir.path() / "magic.ckpt", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "magic.ckpt"), CheckpointError);
    CHECK_THROWS(load_checkpoint(dir.path() / "missing.ckpt"));
}

TEST_CASE("atomic writes leave no partial file behind") {
    testing::TempDir dir("atomic");
    const auto target = dir.path() / "out.bin";
    write_file_atomic(target, "first");
    // a target inside a missing directory fails before touching anything
    CHECK_THROWS(write_file_atomic(dir.path() / "nope" / "x.bin", "data"));
    write_file_atomic(target, "second");
    CHECK(read_file(target) == "second");
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir.path())) {
        (void)e;
        ++files;
    }
    CHECK(files == 1);
}

TEST_CASE("export then dense reconstruction equals the hard-pruned weights at f32") {
    for (const auto& name : model_zoo::names()) {
        CAPTURE(name);
        auto hard = finalize(pruned_model(name, 0.25));
        const auto art = build_artifact(hard);
        const auto back = parse_artifact(serialize_artifact(art));
        REQUIRE(back.layers.size() == hard.registry().size());
        std::size_t kept = 0;
        for (std::size_t i = 0; i < back.layers.size(); ++i) {
            const auto& p = hard.registry()[back.layers[i].id];
            const auto dense = back.layers[i].dense();
            REQUIRE(dense.size() == p.w.numel());
            for (std::size_t k = 0; k < dense.size(); ++k) {
                CHECK(dense[k] == static_cast<float>(p.w.data()[k]));
            }
            CHECK(back.layers[i].kept() == p.kept_count());
            kept += p.kept_count();
        }
        CHECK(back.kept_weights() == kept);
        CHECK(back.total_weights() == hard.prunable_count());
        CHECK(compression_rate(back) == compression_rate(hard.prunable_count(), kept));
        // dense section carries the rest
        std::size_t dense_params = 0;
        for (const auto& p : hard.parameters()) {
            dense_params += p.prunable ? 0 : 1;
        }
        CHECK(back.dense.size() == dense_params + hard.buffers().size());
    }
}

TEST_CASE("conv kernels are flattened to out x (in*kh*kw)") {
    auto hard = finalize(pruned_model("convbn6", 0.5));
    const auto art = build_artifact(hard);
    CHECK(art.layers[1].shape == Shape{8, 8, 3, 3});
    CHECK(art.layers[1].rows == 8);
    CHECK(art.layers[1].cols == 72);
}

TEST_CASE("compression rate") {
    const auto r = compression_rate(266610, 26661);
    CHECK(r.num == 10);
    CHECK(r.den == 1);
    CHECK(r.value() == 10.0);
    CHECK(compression_rate(500, 500) == Rational{1, 1});
    CHECK(compression_rate(10, 4) == Rational{5, 2});
    CHECK_THROWS_AS(compression_rate(10, 0), ArtifactError);
}

TEST_CASE("manifest counts agree with the payload") {
    auto hard = finalize(pruned_model("mlp3", 0.1));
    const auto art = build_artifact(hard);
    const auto manifest = manifest_text(art);
    CHECK(manifest.find("format_version = 1\n") == 0);
    CHECK(manifest.find("kept_weights = " + std::to_string(art.kept_weights()) + "\n") != std::string::npos);
    const auto r = compression_rate(art);
    CHECK(manifest.find("compression_rate = " + std::to_string(r.num) + "/" + std::to_string(r.den)) !=
          std::string::npos);
    auto bytes = serialize_artifact(art);
    // tamper with the manifest's kept count of layer 0
    const auto key = "layer.0.kept = " + std::to_string(art.layers[0].kept());
    const auto at = bytes.find(key);
    REQUIRE(at != std::string::npos);
    bytes[at + key.size() - 1] = bytes[at + key.size() - 1] == '9' ? '8' : '9';
    CHECK_THROWS_AS(parse_artifact(bytes), ArtifactError);
}

TEST_CASE("artifact parser rejects damage") {
    auto hard = finalize(pruned_model("mlp3", 0.2));
    const auto bytes = serialize_artifact(build_artifact(hard));
    CHECK_THROWS_AS(parse_artifact(bytes.substr(0, bytes.size() - 1)), ArtifactError);
    CHECK_THROWS_AS(parse_artifact(bytes + "!"), ArtifactError);
    CHECK_THROWS_AS(parse_artifact("LTPSPARX" + bytes.substr(8)), ArtifactError);
    CHECK_THROWS_AS(parse_artifact(""), ArtifactError);
}
