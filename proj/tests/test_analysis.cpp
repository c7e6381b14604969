#include "support.hpp"

#include "ltp/analysis.hpp"
#include "ltp/trainer.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace ltp;

TEST_CASE("empirical_cdf is sorted, non-decreasing and ends at one") {
    const std::vector<double> w{0.3, -0.1, 0.0, 0.2, -0.5};
    const auto c = empirical_cdf(w);
    REQUIRE(c.size() == w.size());
    CHECK(c.front().w_sq == 0.0);
    CHECK(c.back().w_sq == doctest::Approx(0.25));
    CHECK(c.back().cdf == 1.0);
    for (std::size_t i = 1; i < c.size(); ++i) {
        CHECK(c[i].w_sq >= c[i - 1].w_sq);
        CHECK(c[i].cdf >= c[i - 1].cdf);
    }
    CHECK(c[0].cdf == doctest::Approx(0.2));
}

TEST_CASE("analyze_layer: identical models sit on the diagonal") {
    auto m = model_zoo::build("mlp3", {1, 8, 8}, 10, 3);
    m.prunable(1).tau = 1e-3;
    const auto a = analyze_layer(m, m, 1);
    CHECK(a.name == "fc2.weight");
    CHECK(a.tau == 1e-3);
    REQUIRE(a.w_sq_original.size() == a.w_sq_pruned.size());
    for (std::size_t i = 0; i < a.w_sq_original.size(); ++i) {
        CHECK(a.w_sq_original[i] == a.w_sq_pruned[i]);
    }
    CHECK(a.crossings() == 0);
    CHECK(a.original_cdf.size() == a.pruned_cdf.size());
}

TEST_CASE("analyze_layer: rejects mismatched shapes and bad ids") {
    const auto a = model_zoo::build("mlp3", {1, 8, 8}, 10, 3);
    const auto b = model_zoo::build("mlp3", {1, 4, 4}, 10, 3);
    CHECK_THROWS(analyze_layer(a, b, 0));
    CHECK_THROWS(analyze_layer(a, a, 99));
}

TEST_CASE("analyze_layer: an approx run moves weights across the threshold") {
    auto cfg = parse_config(R"(
model = mlp3
classes = 10
input = 1x8x8
samples_per_class = 40
noise = 0.1
seed = 3
pretrain_epochs = 1
prune_epochs = 4
batch_size = 32
lr = 0.01
T0 = 4e-2
lr_ratio = 1e-4
lambda0 = 1e-3
)");
    const auto res = prune_run(cfg);
    const auto a = analyze_layer(res.initial, res.model, 0);
    CHECK(a.crossings() > 0);
    CHECK(a.pruned_cdf.back().cdf == 1.0);

    testing::TempDir dir("analysis");
    write_layer_analysis(a, dir.path());
    std::ifstream cdf(dir.path() / "cdf.csv");
    std::string line;
    std::getline(cdf, line);
    CHECK(line == "series,w_sq,cdf");
    std::size_t original = 0, pruned = 0, threshold = 0;
    while (std::getline(cdf, line)) {
        const auto tag = line.substr(0, line.find(','));
        original += tag == "original";
        pruned += tag == "pruned";
        threshold += tag == "threshold";
    }
    CHECK(original == a.original_cdf.size());
    CHECK(pruned == a.pruned_cdf.size());
    CHECK(threshold == 1);

    std::ifstream scatter(dir.path() / "scatter.csv");
    std::getline(scatter, line);
    CHECK(line == "kind,w_sq_original,w_sq_pruned");
    std::size_t rows = 0;
    while (std::getline(scatter, line)) {
        ++rows;
    }
    CHECK(rows == a.w_sq_original.size() + 1);
}

TEST_CASE("analyze_layer: a finalized model compared with itself has no crossings") {
    auto m = model_zoo::build("mlp3", {1, 8, 8}, 10, 3);
    m.prunable(0).tau = 1e-3;
    auto hard = finalize(m);
    // a kept weight drifting under tau after finetuning stays kept by the mask
    auto& p = hard.prunable(0);
    for (std::size_t k = 0; k < p.mask.size(); ++k) {
        if (p.mask[k]) {
            p.w.mutable_data()[k] = 0.0;
            break;
        }
    }
    CHECK(analyze_layer(hard, hard, 0).crossings() == 0);
}
