#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "man/optim.hpp"
#include "man/serialize.hpp"
#include "synth.hpp"
#include "test_util.hpp"

using namespace man;
namespace fs = std::filesystem;
using testutil::max_abs_diff;
using testutil::synth_image;

namespace {

ManConfig toy_config() {
    ManConfig cfg;
    cfg.n_blocks = 1;
    cfg.width = 12;
    cfg.scale = 2;
    return cfg;
}

DatasetIndex toy_dataset(int scale, int n_images = 2, i64 size = 24) {
    DatasetIndex ds;
    ds.scale = scale;
    for (int i = 0; i < n_images; ++i)
        ds.pairs.push_back(degrade(synth_image(100 + static_cast<u64>(i), size, size), scale,
                                   cat("toy", i)));
    return ds;
}

std::vector<float> snapshot(ManModel& m) {
    std::vector<float> out;
    visit_params<float>(m, [&](const std::string&, Tensor& t) {
        out.insert(out.end(), t.data(), t.data() + t.numel());
    });
    return out;
}

}  // namespace

TEST_CASE("cosine_lr: endpoints, midpoint, monotone, domain") {
    CHECK(cosine_lr(0, 160000, 5e-4, 1e-7) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(cosine_lr(160000, 160000, 5e-4, 1e-7) == doctest::Approx(1e-7).epsilon(1e-9));
    CHECK(cosine_lr(80000, 160000, 5e-4, 1e-7) ==
          doctest::Approx((5e-4 + 1e-7) / 2).epsilon(1e-12));
    double prev = 1.0;
    for (i64 t = 0; t <= 1000; ++t) {
        const double lr = cosine_lr(t, 1000, 5e-4, 1e-7);
        CHECK(lr <= prev + 1e-18);
        prev = lr;
    }
    CHECK_THROWS_AS((void)cosine_lr(1001, 1000, 5e-4, 1e-7), std::invalid_argument);
}

TEST_CASE("adam: zero gradient leaves fresh parameters unchanged") {
    auto cfg = toy_config();
    auto model = build_model<float>(cfg, 1);
    auto before = snapshot(model);
    auto st = AdamState::init(model);
    visit_params<float>(model, [&](const std::string&, Tensor& t) { (void)t.grad(); });
    adam_step(model, st, 1e-3);
    auto after = snapshot(model);
    CHECK(before == after);
}

TEST_CASE("adam: hand-computed single scalar step") {
    double p = 0.0, g = 1.0, m = 0.0, v = 0.0;
    adam_update<double>(&p, &g, &m, &v, 1, /*step=*/1, 0.9, 0.99, 1e-8, 0.1);
    CHECK(p == doctest::Approx(-0.1 * 1.0 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam: two steps against an independent scalar reference") {
    // Reference written longhand from the update equations.
    const double beta1 = 0.9, beta2 = 0.99, eps = 1e-8, lr = 0.05, g = 0.7;
    double pr = 0.3, mr = 0.0, vr = 0.0;
    for (int t = 1; t <= 2; ++t) {
        mr = beta1 * mr + (1 - beta1) * g;
        vr = beta2 * vr + (1 - beta2) * g * g;
        const double mh = mr / (1 - std::pow(beta1, t));
        const double vh = vr / (1 - std::pow(beta2, t));
        pr -= lr * mh / (std::sqrt(vh) + eps);
    }
    double p = 0.3, m = 0.0, v = 0.0, gg = g;
    adam_update<double>(&p, &gg, &m, &v, 1, 1, beta1, beta2, eps, lr);
    adam_update<double>(&p, &gg, &m, &v, 1, 2, beta1, beta2, eps, lr);
    CHECK(p == doctest::Approx(pr).epsilon(1e-12));
}

TEST_CASE("adam: lr = 0 never changes parameters; missing grad is an error") {
    auto cfg = toy_config();
    auto model = build_model<float>(cfg, 2);
    auto st = AdamState::init(model);
    Rng rng(3);
    visit_params<float>(model, [&](const std::string&, Tensor& t) {
        float* g = t.grad();
        for (i64 i = 0; i < t.numel(); ++i) g[i] = float(rng.uniform() - 0.5);
    });
    auto before = snapshot(model);
    adam_step(model, st, 0.0);
    CHECK(before == snapshot(model));

    auto model2 = build_model<float>(cfg, 2);
    auto st2 = AdamState::init(model2);
    CHECK_THROWS_AS(adam_step(model2, st2, 1e-3), NumericError);
}

TEST_CASE("train: zero iterations leaves the model unchanged with an empty log") {
    auto cfg = toy_config();
    auto model = build_model<float>(cfg, 4);
    auto before = snapshot(model);
    auto tc = TrainConfig::preset(Stage::Scratch);
    tc.total_iters = 0;
    tc.batch = 2;
    tc.patch = 8;
    auto st = init_train_state(model, tc);
    auto ds = toy_dataset(cfg.scale);
    auto log = train(model, st, ds, tc);
    CHECK(log.empty());
    CHECK(before == snapshot(model));
}

TEST_CASE("train: fixed seed gives bit-identical loss logs; loss decreases") {
    auto cfg = toy_config();
    auto ds = toy_dataset(cfg.scale);
    auto tc = TrainConfig::preset(Stage::Scratch);
    tc.total_iters = 30;
    tc.batch = 4;
    tc.patch = 8;
    tc.seed = 9;
    tc.lr0 = 2e-3;

    LossLog logs[2];
    for (int run = 0; run < 2; ++run) {
        auto model = build_model<float>(cfg, 5);
        auto st = init_train_state(model, tc);
        logs[run] = train(model, st, ds, tc);
    }
    REQUIRE(logs[0].size() == 30);
    for (size_t i = 0; i < 30; ++i) {
        CHECK(logs[0][i].loss == logs[1][i].loss);
        CHECK(logs[0][i].lr == logs[1][i].lr);
    }
    // Averaged late loss below averaged early loss.
    double early = 0, late = 0;
    for (int i = 0; i < 5; ++i) early += logs[0][size_t(i)].loss;
    for (int i = 25; i < 30; ++i) late += logs[0][size_t(i)].loss;
    CHECK(late < early);
}

TEST_CASE("train: stage presets carry the published hyperparameters") {
    auto scratch = TrainConfig::preset(Stage::Scratch);
    CHECK(scratch.lr0 == 5e-4);
    CHECK(scratch.total_iters == 160000);
    CHECK(scratch.batch == 32);
    CHECK(scratch.patch == 48);
    auto ft = TrainConfig::preset(Stage::Finetune);
    CHECK(ft.lr0 == 1e-4);
    CHECK(ft.total_iters == 80000);
    CHECK(ft.batch == 16);
    CHECK(ft.patch == 64);
}

TEST_CASE("weights: save/load round trip is bit-exact; errors name offenders") {
    auto dir = fs::temp_directory_path() / "man_test_weights";
    fs::create_directories(dir);
    const auto path = (dir / "w.manw").string();
    auto cfg = toy_config();
    auto model = build_model<float>(cfg, 6);
    save_weights(model, path);

    SUBCASE("round trip") {
        auto loaded = load_weights(path);
        auto a = snapshot(model);
        auto b = snapshot(loaded);
        CHECK(a == b);
        CHECK(loaded.config.width == cfg.width);
    }
    SUBCASE("corrupted magic is an explicit format error") {
        auto bytes = [&] {
            std::ifstream in(path, std::ios::binary);
            return std::vector<char>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
        }();
        bytes[0] = 'X';
        {
            std::ofstream out(path + ".bad", std::ios::binary);
            out.write(bytes.data(), std::streamsize(bytes.size()));
        }
        CHECK_THROWS_WITH_AS((void)load_weights(path + ".bad"), doctest::Contains("magic"),
                             DataError);
    }
    SUBCASE("flipped payload byte fails the checksum") {
        auto bytes = [&] {
            std::ifstream in(path, std::ios::binary);
            return std::vector<char>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
        }();
        bytes[bytes.size() / 2] ^= 0x40;
        {
            std::ofstream out(path + ".crc", std::ios::binary);
            out.write(bytes.data(), std::streamsize(bytes.size()));
        }
        CHECK_THROWS_WITH_AS((void)load_weights(path + ".crc"), doctest::Contains("CRC"),
                             DataError);
    }
    SUBCASE("truncated file") {
        auto bytes = [&] {
            std::ifstream in(path, std::ios::binary);
            return std::vector<char>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
        }();
        bytes.resize(bytes.size() / 2);
        {
            std::ofstream out(path + ".trunc", std::ios::binary);
            out.write(bytes.data(), std::streamsize(bytes.size()));
        }
        CHECK_THROWS_WITH_AS((void)load_weights(path + ".trunc"), doctest::Contains("truncated"),
                             DataError);
    }
    SUBCASE("loading into a mismatching config names the first offending tensor") {
        ManConfig other = cfg;
        other.width = 9;
        other.groups = {lka_spec_7(), lka_spec_21(), lka_spec_35()};
        auto wrong = build_model<float>(other, 0);
        CHECK_THROWS_WITH_AS(load_weights_into(wrong, path), doctest::Contains("sf.weight"),
                             DataError);
    }
    fs::remove_all(dir);
}

TEST_CASE("checkpoint: resume reproduces an uninterrupted run bit-exactly") {
    auto dir = fs::temp_directory_path() / "man_test_ckpt";
    fs::create_directories(dir);
    const auto path = (dir / "c.manc").string();
    auto cfg = toy_config();
    auto ds = toy_dataset(cfg.scale);
    auto tc = TrainConfig::preset(Stage::Scratch);
    tc.total_iters = 20;
    tc.batch = 2;
    tc.patch = 8;
    tc.seed = 11;

    // Uninterrupted run.
    auto model_a = build_model<float>(cfg, 7);
    auto st_a = init_train_state(model_a, tc);
    auto log_a = train(model_a, st_a, ds, tc);

    // Interrupted at 10, checkpointed, resumed in a fresh process-like state.
    auto model_b = build_model<float>(cfg, 7);
    auto st_b = init_train_state(model_b, tc);
    TrainHooks pause;
    pause.should_stop = [](i64 it) { return it == 10; };
    auto log_b1 = train(model_b, st_b, ds, tc, pause);
    save_checkpoint(model_b, st_b, path);

    auto model_c = build_model<float>(cfg, 999);  // different seed; fully overwritten by load
    CHECK(is_checkpoint_file(path));
    auto st_c = load_checkpoint(model_c, path);
    CHECK(st_c.iter == 10);
    auto log_b2 = train(model_c, st_c, ds, tc);

    CHECK(snapshot(model_a) == snapshot(model_c));
    REQUIRE(log_b1.size() + log_b2.size() == log_a.size());
    for (size_t i = 0; i < log_a.size(); ++i) {
        const auto& e = i < 10 ? log_b1[i] : log_b2[i - 10];
        CHECK(e.loss == log_a[i].loss);
        CHECK(e.iter == log_a[i].iter);
    }
    // Adam moments restored exactly as well.
    for (size_t i = 0; i < st_a.adam.m.size(); ++i)
        for (i64 j = 0; j < st_a.adam.m[i].numel(); ++j) {
            CHECK(st_a.adam.m[i].data()[j] == st_c.adam.m[i].data()[j]);
            CHECK(st_a.adam.v[i].data()[j] == st_c.adam.v[i].data()[j]);
        }
    // A plain weight file is not a checkpoint.
    save_weights(model_a, (dir / "w.manw").string());
    CHECK(!is_checkpoint_file((dir / "w.manw").string()));
    CHECK_THROWS_AS((void)load_checkpoint(model_a, (dir / "w.manw").string()), DataError);
    fs::remove_all(dir);
}

TEST_CASE("train: non-finite loss aborts with a diagnostic") {
    auto cfg = toy_config();
    auto model = build_model<float>(cfg, 8);
    // Blow up a weight so the forward overflows to inf.
    visit_params<float>(model, [&](const std::string& name, Tensor& t) {
        if (name == "sf.weight")
            for (auto& v : t.values()) v = 3e38f;
    });
    auto tc = TrainConfig::preset(Stage::Scratch);
    tc.total_iters = 3;
    tc.batch = 1;
    tc.patch = 8;
    auto st = init_train_state(model, tc);
    auto ds = toy_dataset(cfg.scale);
    CHECK_THROWS_AS((void)train(model, st, ds, tc), NumericError);
}
