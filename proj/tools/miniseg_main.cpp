#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "miniseg/checkpoint.hpp"
#include "miniseg/config.hpp"
#include "miniseg/eval.hpp"
#include "miniseg/image_io.hpp"
#include "miniseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace miniseg;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path.string());
    os << text;
}

int cmd_train(const std::string& config_path, const std::string& checkpoint,
              std::int64_t seed_override, const std::string& data_override,
              const std::string& out_override) {
    RunConfig cfg = RunConfig::load(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    if (!data_override.empty()) cfg.data_root = data_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    cfg.validate();
    TrainResult res = run_training(cfg, checkpoint);
    std::cout << "trained " << res.iterations << " iterations, final main loss "
              << res.final_main_loss << "\ncheckpoint: " << res.final_checkpoint
              << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_root,
             std::vector<double> scales, bool flip, const std::string& split,
             const std::string& out) {
    Checkpoint ckpt = load_checkpoint(checkpoint);
    RunConfig cfg = RunConfig::from_json_text(ckpt.config_json);
    SegModel<float> model = model_from_checkpoint(ckpt);
    if (scales.empty()) scales = cfg.eval_scales;

    const std::string root = data_root.empty() ? cfg.data_root : data_root;
    std::vector<Sample> samples = load_dataset(root, split);
    if (samples.empty()) {
        std::cerr << "no samples in split '" << split << "' under " << root
                  << "\n";
        return 1;
    }
    ConfusionMatrix cm;
    for (const Sample& s : samples) {
        Tensor<float> img = normalize_image(s.image, cfg.aug.mean,
                                            cfg.aug.stddev);
        Tensor<float> scores = multi_scale_predict(model, img, scales, flip);
        update_cm(cm, argmax_map(scores), s.label);
    }
    IoUReport rep = iou_report(cm);
    const fs::path out_dir = resolve_out_dir(out);
    fs::create_directories(out_dir);
    write_text(out_dir / "iou.csv", iou_report_csv(rep));
    write_text(out_dir / "summary.txt", iou_report_summary(rep));
    std::cout << iou_report_summary(rep);
    return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& image_path,
                std::vector<double> scales, bool flip, bool overlay,
                const std::string& palette_path, const std::string& out) {
    Checkpoint ckpt = load_checkpoint(checkpoint);
    RunConfig cfg = RunConfig::from_json_text(ckpt.config_json);
    SegModel<float> model = model_from_checkpoint(ckpt);
    if (scales.empty()) scales = {1.0};
    const auto palette =
        palette_path.empty() ? kPalette : load_palette(palette_path);

    ImageU8 raw = read_png(image_path);
    Tensor<float> img = normalize_image(image_to_tensor(raw), cfg.aug.mean,
                                        cfg.aug.stddev);
    Tensor<float> scores = multi_scale_predict(model, img, scales, flip);
    LabelMap pred = argmax_map(scores);

    const fs::path out_dir = resolve_out_dir(out);
    fs::create_directories(out_dir);
    const std::string stem = fs::path(image_path).stem().string();
    write_png((out_dir / (stem + "_pred.png")).string(), label_to_image(pred));
    save_palette((out_dir / "palette.csv").string(), palette);
    if (overlay) {
        ImageU8 color = colorize_label(pred, palette);
        for (std::size_t i = 0; i < color.pixels.size(); ++i) {
            color.pixels[i] = static_cast<std::uint8_t>(
                (color.pixels[i] + raw.pixels[i]) / 2);
        }
        write_png((out_dir / (stem + "_overlay.png")).string(), color);
    }
    std::cout << "wrote " << (out_dir / (stem + "_pred.png")).string() << "\n";
    return 0;
}

int cmd_analyze(const std::string& data_root, const std::string& split,
                const std::string& out) {
    std::vector<Sample> samples = load_dataset(data_root, split);
    ClassHistogram hist = class_pixel_distribution(samples);
    const fs::path out_dir = resolve_out_dir(out);
    fs::create_directories(out_dir);
    write_text(out_dir / "class_histogram.csv", histogram_csv(hist));
    render_histogram_png(hist, (out_dir / "class_histogram.png").string());
    std::cout << histogram_csv(hist);
    return 0;
}

int cmd_cost(const std::string& variant_path, std::size_t resolution, bool aux) {
    ModelConfig cfg = load_variant_file(variant_path);
    cfg.with_aux = aux;
    CostReport rep = count_cost(cfg, resolution, resolution);
    std::cout << rep.text();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"miniseg - desk-scale hierarchical-transformer semantic "
                 "segmentation"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, data_root, image_path, out = "out";
    std::string split = "val", variant_path, palette_path;
    std::vector<double> scales;
    std::int64_t seed = -1;
    std::size_t resolution = 512;
    bool flip = false, overlay = false, aux = false;

    CLI::App* train = app.add_subcommand("train", "train a model from a config");
    train->add_option("--config", config_path, "run config JSON")->required();
    train->add_option("--checkpoint", checkpoint, "checkpoint to resume from");
    train->add_option("--seed", seed, "override config seed");
    train->add_option("--data", data_root, "override dataset root");
    train->add_option("--out", out, "override output directory")->default_val("");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint (mIoU)");
    eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    eval->add_option("--data", data_root, "dataset root");
    eval->add_option("--scales", scales, "test scales (default from config)");
    eval->add_flag("--flip", flip, "add horizontal-flip passes");
    eval->add_option("--split", split, "dataset split")->default_val("val");
    eval->add_option("--out", out, "report directory");

    CLI::App* predict = app.add_subcommand("predict", "segment one image");
    predict->add_option("--checkpoint", checkpoint, "model checkpoint")
        ->required();
    predict->add_option("--image", image_path, "input PNG")->required();
    predict->add_option("--scales", scales, "test scales");
    predict->add_flag("--flip", flip, "add horizontal-flip passes");
    predict->add_flag("--overlay", overlay, "also write a color overlay");
    predict->add_option("--palette", palette_path,
                        "palette CSV for overlay colors (default Cityscapes)");
    predict->add_option("--out", out, "output directory");

    CLI::App* analyze =
        app.add_subcommand("analyze", "class pixel distribution of a dataset");
    analyze->add_option("--data", data_root, "dataset root")->required();
    analyze->add_option("--split", split, "dataset split")->default_val("train");
    analyze->add_option("--out", out, "output directory");

    CLI::App* cost =
        app.add_subcommand("cost", "analytic parameter/MAC report");
    cost->add_option("--variant", variant_path, "variant JSON file")->required();
    cost->add_option("--resolution", resolution, "square input resolution")
        ->default_val(512);
    cost->add_flag("--aux", aux, "include the auxiliary head");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            return cmd_train(config_path, checkpoint, seed, data_root, out);
        }
        if (eval->parsed()) {
            return cmd_eval(checkpoint, data_root, scales, flip, split, out);
        }
        if (predict->parsed()) {
            return cmd_predict(checkpoint, image_path, scales, flip, overlay,
                               palette_path, out);
        }
        if (analyze->parsed()) return cmd_analyze(data_root, split, out);
        if (cost->parsed()) return cmd_cost(variant_path, resolution, aux);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
