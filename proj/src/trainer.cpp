#include "miniseg/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "miniseg/loss.hpp"

namespace fs = std::filesystem;

namespace miniseg {

namespace {

// Exclusive ownership of the output directory for the lifetime of a run.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
        std::error_code ec;
        fs::create_directories(dir, ec);
        FILE* f = std::fopen(path_.c_str(), "wx");
        if (!f) {
            throw ConfigError("output dir is locked by another run (found " +
                              path_.string() + ")");
        }
        std::fclose(f);
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
};

std::vector<float> weight_vector(const RunConfig& cfg,
                                 const std::vector<Sample>& samples) {
    if (cfg.weight_mode == ClassWeightMode::none) return {};
    ClassHistogram hist = class_pixel_distribution(samples);
    std::array<std::uint64_t, kNumClasses> counts{};
    std::copy(hist.counts.begin(), hist.counts.end(), counts.begin());
    const WeightMode mode = cfg.weight_mode == ClassWeightMode::effective_number
                                ? WeightMode::effective_number
                                : WeightMode::inverse_frequency;
    ClassWeights cw = class_balanced_weights(counts, cfg.weight_beta, mode);
    std::vector<float> w(kNumClasses);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        w[c] = static_cast<float>(cw.w[c]);
    }
    return w;
}

double masked_mean_value(std::span<const float> values,
                         const std::vector<std::uint8_t>& mask) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) {
            sum += values[i];
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace

SegModel<float> model_from_checkpoint(const Checkpoint& ckpt) {
    RunConfig cfg = RunConfig::from_json_text(ckpt.config_json);
    Rng rng(0);  // weights are overwritten immediately
    SegModel<float> model(cfg.model, rng);
    ParameterSet<float> params = model.parameters();
    restore_train_state(ckpt, params, nullptr);
    return model;
}

TrainResult run_training(const RunConfig& cfg,
                         const std::string& resume_checkpoint,
                         std::vector<Sample> samples) {
    cfg.validate();
    const fs::path out_dir = resolve_out_dir(cfg.out_dir);
    DirLock lock(out_dir);

    if (samples.empty()) {
        samples = load_dataset(cfg.data_root, "train");
    }
    if (samples.empty()) {
        throw DataError("training split is empty under " + cfg.data_root);
    }

    // rng streams: one for weight init, one for data order + augmentation
    Rng init_rng(cfg.seed);
    Rng data_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

    SegModel<float> model(cfg.model, init_rng);
    ParameterSet<float> params = model.parameters();

    AdamWHyper<float> hyper;
    hyper.alpha = static_cast<float>(cfg.sched.lr0);
    hyper.beta1 = static_cast<float>(cfg.adam_beta1);
    hyper.beta2 = static_cast<float>(cfg.adam_beta2);
    hyper.eps = static_cast<float>(cfg.adam_eps);
    hyper.lambda = static_cast<float>(cfg.weight_decay);
    AdamWState<float> state;
    state.init_like(params);

    std::uint64_t start_iter = 0;
    if (!resume_checkpoint.empty()) {
        Checkpoint ckpt = load_checkpoint(resume_checkpoint);
        restore_train_state(ckpt, params, &state);
        start_iter = ckpt.iteration;
        if (!ckpt.rng_state.empty()) data_rng.restore_state(ckpt.rng_state);
    }

    const std::vector<float> class_w = weight_vector(cfg, samples);
    LossConfig loss_cfg;
    loss_cfg.aux_weight = cfg.aux_weight;
    if (cfg.ohem_enabled) loss_cfg.ohem = cfg.ohem;

    const std::string config_json = cfg.canonical_json();

    const fs::path log_path = out_dir / "train_log.csv";
    const bool fresh_log = start_iter == 0 || !fs::exists(log_path);
    std::ofstream log(log_path,
                      start_iter == 0 ? std::ios::trunc : std::ios::app);
    if (fresh_log) {
        log << "iter,lr,main_loss,aux_loss,wall_ms\n";
    }

    // epoch-shuffled sample order
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();  // force shuffle on first use
    auto next_index = [&]() {
        if (cursor >= order.size()) {
            for (std::size_t i = order.size() - 1; i > 0; --i) {
                std::swap(order[i], order[data_rng.uniform_int(i + 1)]);
            }
            cursor = 0;
        }
        return order[cursor++];
    };

    auto write_ckpt = [&](std::uint64_t iter, const std::string& name) {
        Checkpoint ckpt = snapshot_train_state(params, &state, iter, config_json,
                                               data_rng.save_state());
        const std::string path = (out_dir / name).string();
        save_checkpoint(path, ckpt);
        return path;
    };

    TrainResult result;
    bool warned_zero_kept = false;
    double last_main = 0.0;
    for (std::uint64_t it = start_iter; it < cfg.sched.total_iters; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at(it, cfg.sched);
        const float eta = static_cast<float>(lr / cfg.sched.lr0);

        Tensor<float> batch_loss = Tensor<float>::zeros({});
        double main_log = 0.0, aux_log = 0.0;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const Sample& raw = samples[next_index()];
            Sample s = augment(raw, cfg.aug, data_rng);
            ForwardOutput<float> out = model.forward_full(s.image);

            PixelCeResult<float> main_ce =
                pixel_ce(out.main, s.label, class_w, loss_cfg.ignore_index);
            std::vector<std::uint8_t> keep =
                loss_cfg.ohem ? ohem_select<float>(main_ce.loss.values(),
                                                   main_ce.true_class_prob,
                                                   main_ce.valid_mask,
                                                   *loss_cfg.ohem)
                              : main_ce.valid_mask;

            std::optional<Tensor<float>> aux_px;
            if (out.aux.defined()) {
                PixelCeResult<float> aux_ce =
                    pixel_ce(out.aux, s.label, class_w, loss_cfg.ignore_index);
                aux_px = aux_ce.loss;
                aux_log += masked_mean_value(aux_ce.loss.values(),
                                             aux_ce.valid_mask);
            }
            TotalLoss<float> total = total_loss(main_ce.loss, keep, aux_px,
                                                main_ce.valid_mask, loss_cfg);
            if (total.zero_kept && !warned_zero_kept) {
                std::cerr << "warning: zero kept pixels at iter " << it
                          << "; loss defined as 0\n";
                warned_zero_kept = true;
            }
            main_log += masked_mean_value(main_ce.loss.values(), keep);
            batch_loss = add(batch_loss,
                             scale(total.value,
                                   1.0f / static_cast<float>(cfg.batch_size)));
        }
        backward(batch_loss);
        adamw_step(params, state, hyper, eta);
        zero_grads(params);

        main_log /= static_cast<double>(cfg.batch_size);
        aux_log /= static_cast<double>(cfg.batch_size);
        last_main = main_log;

        const auto t1 = std::chrono::steady_clock::now();
        const double wall_ms =
            std::chrono::duration<double, std::milli>(t1 - t0).count();
        if ((it + 1) % cfg.log_interval == 0 || it + 1 == cfg.sched.total_iters) {
            log << it << ',' << lr << ',' << main_log << ',' << aux_log << ','
                << wall_ms << '\n';
            log.flush();
        }
        if ((it + 1) % cfg.checkpoint_interval == 0) {
            write_ckpt(it + 1, "checkpoint_latest.ckpt");
        }
    }

    result.iterations = cfg.sched.total_iters;
    result.final_main_loss = last_main;
    result.final_checkpoint =
        write_ckpt(cfg.sched.total_iters, "checkpoint_final.ckpt");
    return result;
}

}  // namespace miniseg
