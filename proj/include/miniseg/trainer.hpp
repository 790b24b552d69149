#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "miniseg/checkpoint.hpp"
#include "miniseg/config.hpp"
#include "miniseg/decoder.hpp"

// Deterministic training driver behind `miniseg train`: owns the output
// directory (lock file), iterates augment -> forward -> loss -> AdamW step,
// appends the CSV log and writes checkpoints.

namespace miniseg {

struct TrainResult {
    std::uint64_t iterations = 0;
    double final_main_loss = 0.0;
    std::string final_checkpoint;
};

// Runs (or resumes) training. The dataset may be passed in directly for
// synthetic fixtures; when `samples` is empty the train split is loaded from
// cfg.data_root.
TrainResult run_training(const RunConfig& cfg,
                         const std::string& resume_checkpoint = "",
                         std::vector<Sample> samples = {});

// Builds the model and restores parameters from a checkpoint file.
SegModel<float> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace miniseg
