#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "miniseg/data.hpp"
#include "miniseg/decoder.hpp"
#include "miniseg/loss.hpp"
#include "miniseg/optim.hpp"

// Declarative run configuration. A config file is a single JSON document;
// the model section either inlines the four-stage variant table or points at
// a variant file (resolved relative to the config's directory). Loading
// fully validates before anything else happens, and the canonical dump is
// self-contained (variant inlined) so checkpoints can rebuild the model.

namespace miniseg {

enum class ClassWeightMode { none, effective_number, inverse_frequency };

struct RunConfig {
    // model (resolved; variant tables live in config files, not code)
    ModelConfig model;

    // data
    std::string data_root;
    AugSpec aug;

    // loss
    ClassWeightMode weight_mode = ClassWeightMode::none;
    double weight_beta = 0.9999;
    bool ohem_enabled = false;
    OhemConfig ohem;
    double aux_weight = 0.4;

    // optimizer + schedule
    PolySchedule sched;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;

    // training
    std::size_t batch_size = 2;
    std::uint64_t seed = 0;
    std::string out_dir = "runs/default";
    std::uint64_t checkpoint_interval = 1000;
    std::uint64_t log_interval = 10;

    // evaluation
    std::vector<double> eval_scales{1.0};
    bool eval_flip = false;

    void validate() const;

    // Canonical self-contained JSON (sorted keys, variant inlined).
    std::string canonical_json() const;

    static RunConfig from_json_text(const std::string& text,
                                    const std::string& base_dir = "");
    static RunConfig load(const std::string& path);
};

// Variant table: the four-stage encoder hyperparameters plus decoder dim.
ModelConfig load_variant_file(const std::string& path,
                              std::size_t num_classes = kNumClasses);

// Resolves an output directory against MINISEG_OUT_ROOT (relative paths are
// joined under the override root when the variable is set).
std::string resolve_out_dir(const std::string& dir);

}  // namespace miniseg
