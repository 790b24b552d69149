// Checkpoint byte-exactness, config round trips, and the training driver
// (locking, determinism, resume).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "miniseg/checkpoint.hpp"
#include "miniseg/config.hpp"
#include "miniseg/trainer.hpp"
#include "testing/helpers.hpp"
#include "testing/synthetic.hpp"

namespace fs = std::filesystem;
using namespace miniseg;

namespace {

struct TmpDir {
    fs::path path;
    explicit TmpDir(const std::string& name) {
        path = fs::temp_directory_path() / name;
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
};

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string nano_variant_json() {
    return R"({
        "name": "nano",
        "dims": [8, 16, 32, 64],
        "depths": [1, 1, 1, 1],
        "heads": [1, 1, 2, 2],
        "sr_ratios": [8, 4, 2, 1],
        "decoder_dim": 16,
        "aux_head": true,
        "aux_channels": 8
    })";
}

RunConfig tiny_run_config(const fs::path& out_dir, std::uint64_t iters,
                          std::uint64_t seed = 7) {
    std::ostringstream cfg;
    cfg << R"({
      "model": )" << nano_variant_json() << R"(,
      "data": { "aug": { "crop": [32, 32], "scale_range": [1.0, 1.0],
                         "photometric": {"enabled": false} } },
      "loss": { "ohem": {"thresh": 0.5, "min_kept": 100} },
      "optim": { "lr0": 0.001, "total_iters": )" << iters << R"(,
                 "warmup_iters": 0 },
      "train": { "batch_size": 2, "seed": )" << seed << R"(,
                 "out_dir": ")" << out_dir.string() << R"(",
                 "checkpoint_interval": 2, "log_interval": 1 }
    })";
    return RunConfig::from_json_text(cfg.str());
}

}  // namespace

// ---------------------------------------------------------------------------
// checkpoint container
// ---------------------------------------------------------------------------

TEST_CASE("save -> load -> save is byte-identical") {
    TmpDir tmp("miniseg_ckpt_rt");
    Rng rng(1);
    ParameterSet<float> params;
    params.emplace_back("a.weight",
                        testing::random_tensor<float>({3, 4}, rng, true));
    params.emplace_back("b.bias", testing::random_tensor<float>({7}, rng, true));
    AdamWState<float> opt;
    opt.init_like(params);
    opt.t = 42;
    for (auto& m : opt.m) {
        for (auto& v : m) v = float(rng.uniform(-1, 1));
    }

    Checkpoint ckpt =
        snapshot_train_state(params, &opt, 1000, "{\"config\":true}", "123 456");
    const fs::path p1 = tmp.path / "one.ckpt";
    const fs::path p2 = tmp.path / "two.ckpt";
    save_checkpoint(p1.string(), ckpt);
    Checkpoint loaded = load_checkpoint(p1.string());
    save_checkpoint(p2.string(), loaded);
    CHECK(file_bytes(p1) == file_bytes(p2));

    CHECK(loaded.iteration == 1000);
    CHECK(loaded.adam_t == 42);
    CHECK(loaded.config_json == "{\"config\":true}");
    CHECK(loaded.rng_state == "123 456");
    REQUIRE(loaded.tensors.size() == 2 + 4);  // params + m/v moments
}

TEST_CASE("restore_train_state checks names and shapes") {
    Rng rng(2);
    ParameterSet<float> params;
    params.emplace_back("w", testing::random_tensor<float>({2, 2}, rng, true));
    Checkpoint ckpt = snapshot_train_state(params, nullptr, 0, "", "");

    ParameterSet<float> renamed;
    renamed.emplace_back("other",
                         testing::random_tensor<float>({2, 2}, rng, true));
    CHECK_THROWS_AS(restore_train_state(ckpt, renamed, nullptr), DataError);

    ParameterSet<float> reshaped;
    reshaped.emplace_back("w", testing::random_tensor<float>({4}, rng, true));
    CHECK_THROWS_AS(restore_train_state(ckpt, reshaped, nullptr), DataError);
}

TEST_CASE("model forward is identical after a checkpoint reload") {
    Rng rng(3);
    RunConfig cfg = tiny_run_config("unused", 4);
    SegModel<float> model(cfg.model, rng);
    ParameterSet<float> params = model.parameters();

    TmpDir tmp("miniseg_ckpt_fw");
    Checkpoint ckpt = snapshot_train_state(params, nullptr, 0,
                                           cfg.canonical_json(), "");
    const fs::path path = tmp.path / "m.ckpt";
    save_checkpoint(path.string(), ckpt);

    auto image = testing::random_tensor<float>({3, 32, 32}, rng);
    autograd::NoGradGuard no_grad;
    Tensor<float> before = model.forward_full(image).main;

    SegModel<float> reloaded = model_from_checkpoint(load_checkpoint(path.string()));
    Tensor<float> after = reloaded.forward_full(image).main;
    REQUIRE(before.numel() == after.numel());
    for (std::size_t i = 0; i < before.numel(); ++i) {
        CHECK(before.data()[i] == after.data()[i]);
    }
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

TEST_CASE("canonical config json round-trips") {
    RunConfig cfg = tiny_run_config("runs/x", 10);
    const std::string canon = cfg.canonical_json();
    RunConfig back = RunConfig::from_json_text(canon);
    CHECK(back.canonical_json() == canon);
    CHECK(back.model.encoder.stages[0].embed_dim == 8);
    CHECK(back.ohem_enabled);
    CHECK(back.ohem.min_kept == 100);
}

TEST_CASE("config validation rejects inconsistent settings") {
    // crop not divisible by 32
    std::string bad = R"({
      "model": )" + nano_variant_json() + R"(,
      "data": { "aug": { "crop": [30, 32] } },
      "optim": { "total_iters": 10, "warmup_iters": 0 }
    })";
    CHECK_THROWS_AS(RunConfig::from_json_text(bad), ConfigError);

    std::string bad2 = R"({
      "model": )" + nano_variant_json() + R"(,
      "optim": { "total_iters": 10, "warmup_iters": 0, "lr0": -1 }
    })";
    CHECK_THROWS_AS(RunConfig::from_json_text(bad2), ConfigError);

    std::string reserved = R"({
      "model": )" + nano_variant_json() + R"(,
      "optim": { "total_iters": 100, "warmup_iters": 0, "restart_period": 50 }
    })";
    CHECK_THROWS_AS(RunConfig::from_json_text(reserved), ConfigError);
    std::string bad3 = R"({
      "model": )" + nano_variant_json() + R"(,
      "optim": { "total_iters": 10 }
    })";  // default warmup (1500) exceeds total_iters
    CHECK_THROWS_AS(RunConfig::from_json_text(bad3), ConfigError);

    CHECK_THROWS_AS(RunConfig::from_json_text("{ not json"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text("{}"), ConfigError);
}

TEST_CASE("variant files resolve relative to the config directory") {
    TmpDir tmp("miniseg_cfg_dir");
    {
        std::ofstream v(tmp.path / "tiny.json");
        v << nano_variant_json();
    }
    std::string cfg_text = R"({
      "model": { "variant": "tiny.json", "num_classes": 19 },
      "optim": { "total_iters": 10, "warmup_iters": 0 }
    })";
    {
        std::ofstream c(tmp.path / "run.json");
        c << cfg_text;
    }
    RunConfig cfg = RunConfig::load((tmp.path / "run.json").string());
    CHECK(cfg.model.encoder.variant_name == "nano");
    CHECK(cfg.model.decoder.unify_dim == 16);
    CHECK(cfg.model.with_aux);
}

// ---------------------------------------------------------------------------
// training driver
// ---------------------------------------------------------------------------

TEST_CASE("training is deterministic per seed and writes the CSV log") {
    TmpDir tmp("miniseg_train_det");
    auto samples = testing::synthetic_dataset(4, 48, 48, 6, 99);

    // identical config (including out_dir), run twice back to back
    RunConfig cfg1 = tiny_run_config(tmp.path / "run1", 4);
    TrainResult r1 = run_training(cfg1, "", samples);
    const std::string first_bytes = file_bytes(r1.final_checkpoint);
    TrainResult r2 = run_training(cfg1, "", samples);
    CHECK(first_bytes == file_bytes(r2.final_checkpoint));

    // different seed -> different weights
    RunConfig cfg3 = tiny_run_config(tmp.path / "run3", 4, 8);
    TrainResult r3 = run_training(cfg3, "", samples);
    CHECK(first_bytes != file_bytes(r3.final_checkpoint));

    std::ifstream log(tmp.path / "run1" / "train_log.csv");
    std::string header;
    std::getline(log, header);
    CHECK(header == "iter,lr,main_loss,aux_loss,wall_ms");
    int rows = 0;
    for (std::string line; std::getline(log, line);) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 4);
}

TEST_CASE("resume continues the schedule at the stored iteration") {
    TmpDir tmp("miniseg_train_resume");
    auto samples = testing::synthetic_dataset(4, 48, 48, 6, 99);

    RunConfig cfg = tiny_run_config(tmp.path / "runA", 2);
    TrainResult first = run_training(cfg, "", samples);
    Checkpoint mid = load_checkpoint(first.final_checkpoint);
    CHECK(mid.iteration == 2);

    RunConfig cfg2 = tiny_run_config(tmp.path / "runB", 4);
    run_training(cfg2, first.final_checkpoint, samples);

    // the resumed log starts at iter 2 with lr_at(2)
    std::ifstream log(tmp.path / "runB" / "train_log.csv");
    std::string header, line;
    std::getline(log, header);
    std::getline(log, line);
    const auto comma = line.find(',');
    CHECK(line.substr(0, comma) == "2");
    const double lr = std::stod(line.substr(comma + 1));
    CHECK(lr == doctest::Approx(lr_at(2, cfg2.sched)));
}

TEST_CASE("the output directory is locked during a run") {
    TmpDir tmp("miniseg_train_lock");
    auto samples = testing::synthetic_dataset(2, 32, 32, 4, 1);
    fs::create_directories(tmp.path / "run");
    {
        std::ofstream lock(tmp.path / "run" / ".lock");
        lock << "held";
    }
    RunConfig cfg = tiny_run_config(tmp.path / "run", 2);
    CHECK_THROWS_AS(run_training(cfg, "", samples), ConfigError);
}

TEST_CASE("invalid configs never create output files") {
    TmpDir tmp("miniseg_train_noside");
    RunConfig cfg = tiny_run_config(tmp.path / "never", 4);
    cfg.batch_size = 0;  // invalid
    CHECK_THROWS_AS(run_training(cfg, "", {}), ConfigError);
    CHECK_FALSE(fs::exists(tmp.path / "never"));
}

TEST_CASE("short training run trends the loss downward") {
    TmpDir tmp("miniseg_train_trend");
    auto samples = testing::synthetic_dataset(4, 32, 32, 4, 123);
    RunConfig cfg = tiny_run_config(tmp.path / "run", 30);
    TrainResult res = run_training(cfg, "", samples);

    std::ifstream log(tmp.path / "run" / "train_log.csv");
    std::string header;
    std::getline(log, header);
    std::vector<double> losses;
    for (std::string line; std::getline(log, line);) {
        if (line.empty()) continue;
        // iter,lr,main_loss,...
        std::size_t p1 = line.find(',');
        std::size_t p2 = line.find(',', p1 + 1);
        std::size_t p3 = line.find(',', p2 + 1);
        losses.push_back(std::stod(line.substr(p2 + 1, p3 - p2 - 1)));
    }
    REQUIRE(losses.size() == 30);
    double head = 0, tail = 0;
    for (int i = 0; i < 5; ++i) {
        head += losses[i];
        tail += losses[losses.size() - 1 - i];
    }
    CHECK(tail < head);
    CHECK(res.final_main_loss < losses.front());
}
