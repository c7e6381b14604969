#include "support.hpp"

#include "ltp/config.hpp"

#include <doctest.h>

#include <fstream>

using namespace ltp;

TEST_CASE("the ResNet20 hyper-parameter row parses exactly") {
    const auto cfg = parse_config(R"(# ResNet20 row
T0 = 1e-3
lr_ratio = 1e-5
lambda0 = 2e-6
c_lambda = 1.0
N_lambda = 5
)");
    CHECK(cfg.ltp.T0 == 1e-3);
    CHECK(cfg.ltp.lr_ratio == 1e-5);
    CHECK(cfg.ltp.lambda0 == 2e-6);
    CHECK(cfg.ltp.c_lambda == 1.0);
    CHECK(cfg.ltp.N_lambda == 5);
}

TEST_CASE("every key parses") {
    const auto cfg = parse_config(R"(
model = convbn6
dataset = idx
data_dir = /data/digits   # trailing comment
classes = 7
input = 3x16x12
samples_per_class = 50
noise = 0.25
seed = 42
pretrain_epochs = 2
prune_epochs = 11
finetune_epochs = 3
batch_size = 16
lr = 0.02
momentum = 0.8
finetune_lr = 0.003
T0 = 0.01
lr_ratio = 2e-5
lambda0 = 1e-7
c_lambda = 1.05
N_lambda = 3
grad_mode = full_clamped
clamp_kappa = 0.05
regularizer = l2
target_keep_ratio = 0.1
exempt_layers = conv1, fc
tau_init = 1e-4
temp_recompute = true
precision = f32
validate_numerics = yes
out_dir = runs/a
)");
    CHECK(cfg.model == "convbn6");
    CHECK(cfg.dataset == "idx");
    CHECK(cfg.data_dir == "/data/digits");
    CHECK(cfg.classes == 7);
    CHECK(cfg.input == InputSpec{3, 16, 12});
    CHECK(cfg.samples_per_class == 50);
    CHECK(cfg.noise == 0.25);
    CHECK(cfg.seed == 42);
    CHECK(cfg.pretrain_epochs == 2);
    CHECK(cfg.prune_epochs == 11);
    CHECK(cfg.finetune_epochs == 3);
    CHECK(cfg.batch_size == 16);
    CHECK(cfg.lr == 0.02);
    CHECK(cfg.momentum == 0.8);
    CHECK(cfg.finetune_lr == 0.003);
    CHECK(cfg.ltp.T0 == 0.01);
    CHECK(cfg.ltp.lr_ratio == 2e-5);
    CHECK(cfg.ltp.lambda0 == 1e-7);
    CHECK(cfg.ltp.c_lambda == 1.05);
    CHECK(cfg.ltp.N_lambda == 3);
    CHECK(cfg.ltp.grad_mode == GradMode::full_clamped);
    CHECK(cfg.ltp.clamp_kappa == 0.05);
    CHECK(cfg.regularizer == Regularizer::l2);
    REQUIRE(cfg.target_keep_ratio);
    CHECK(*cfg.target_keep_ratio == 0.1);
    CHECK(cfg.exempt_layers == std::vector<std::string>{"conv1", "fc"});
    CHECK(cfg.tau_init == 1e-4);
    CHECK(cfg.temp_recompute);
    CHECK(cfg.precision == Precision::f32);
    CHECK(cfg.validate_numerics);
    CHECK(cfg.out_dir == "runs/a");

    SUBCASE("serialize then parse reproduces every value") {
        const auto again = parse_config(serialize_config(cfg));
        CHECK(serialize_config(again) == serialize_config(cfg));
        CHECK(again.ltp.lr_ratio == cfg.ltp.lr_ratio);
        CHECK(again.exempt_layers == cfg.exempt_layers);
        CHECK(again.input == cfg.input);
        CHECK(*again.target_keep_ratio == *cfg.target_keep_ratio);
    }
}

TEST_CASE("defaults follow the ResNet20 row and the approx gradient") {
    const auto cfg = parse_config("");
    CHECK(cfg.ltp.T0 == 1e-3);
    CHECK(cfg.ltp.lr_ratio == 1e-5);
    CHECK(cfg.ltp.lambda0 == 2e-6);
    CHECK(cfg.ltp.grad_mode == GradMode::approx);
    CHECK(cfg.regularizer == Regularizer::soft_l0);
    CHECK(cfg.tau_init == 0.0);
    CHECK(cfg.momentum == 0.9);
    CHECK_FALSE(cfg.target_keep_ratio);
    CHECK(parse_config(serialize_config(cfg)).ltp.lambda0 == 2e-6);
}

TEST_CASE("doubles survive serialization bit for bit") {
    RunConfig cfg;
    cfg.lr = 0.1 + 0.2;
    cfg.ltp.lambda0 = 1.0 / 3.0;
    cfg.noise = 5e-324;
    const auto back = parse_config(serialize_config(cfg));
    CHECK(back.lr == cfg.lr);
    CHECK(back.ltp.lambda0 == cfg.ltp.lambda0);
    CHECK(back.noise == cfg.noise);
}

TEST_CASE("bad configs name the offending line") {
    auto line_of = [](const std::string& text) {
        try {
            parse_config(text);
        } catch (const ConfigError& e) {
            return e.line();
        }
        FAIL("expected a ConfigError");
        return std::size_t{0};
    };
    CHECK(line_of("model = mlp3\nlearning_rate = 0.1\n") == 2);
    CHECK(line_of("lr = 0.1\n\nlr = 0.2\n") == 3);
    CHECK(line_of("# ok\njust some words\n") == 2);
    CHECK(line_of("lr = fast\n") == 1);
    CHECK(line_of("lr = 0.1x\n") == 1);
    CHECK(line_of("grad_mode = exact\n") == 1);
    CHECK(line_of("regularizer = l3\n") == 1);
    CHECK(line_of("input = 28x28\n") == 1);
    CHECK(line_of("temp_recompute = maybe\n") == 1);
    CHECK(line_of(" = 3\n") == 1);
    try {
        parse_config("seed = 1\nbatch = 3\n");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("config line 2") != std::string::npos);
        CHECK(std::string(e.what()).find("batch") != std::string::npos);
    }
}

TEST_CASE("semantic validation") {
    CHECK_THROWS_AS(parse_config("c_lambda = 0.5"), ConfigError);
    CHECK_THROWS_AS(parse_config("T0 = 0"), ConfigError);
    CHECK_THROWS_AS(parse_config("dataset = idx"), ConfigError);
    CHECK_THROWS_AS(parse_config("dataset = cifar"), ConfigError);
    CHECK_THROWS_AS(parse_config("target_keep_ratio = 1.5"), ConfigError);
    CHECK_THROWS_AS(parse_config("momentum = 1"), ConfigError);
    CHECK_NOTHROW(parse_config("target_keep_ratio = none"));
}

TEST_CASE("load_config reads files and reports missing ones") {
    testing::TempDir dir("cfg");
    {
        std::ofstream out(dir.path() / "a.cfg");
        out << "model = resnet-lite\nseed = 9\n";
    }
    const auto cfg = load_config(dir.path() / "a.cfg");
    CHECK(cfg.model == "resnet-lite");
    CHECK(cfg.seed == 9);
    CHECK_THROWS_AS(load_config(dir.path() / "missing.cfg"), ConfigError);
}
