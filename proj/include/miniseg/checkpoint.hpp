#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "miniseg/encoder.hpp"
#include "miniseg/optim.hpp"

// Checkpoint container: fixed header, then named tensors as a shape list
// plus raw little-endian float32 payloads. Save -> load -> save is
// byte-identical; tensor order is the model's registration order, with
// optimizer moments appended as optim.m.* / optim.v.* entries.

namespace miniseg {

inline constexpr char kCheckpointMagic[8] = {'M', 'S', 'E', 'G',
                                             'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::uint64_t iteration = 0;
    std::uint64_t adam_t = 0;
    std::string config_json;
    std::string rng_state;
    ParameterSet<float> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot of a training state. The optimizer may be null (inference-only
// checkpoints).
Checkpoint snapshot_train_state(const ParameterSet<float>& params,
                                const AdamWState<float>* opt,
                                std::uint64_t iteration,
                                const std::string& config_json,
                                const std::string& rng_state);

// Copies checkpoint tensors into an existing parameter set (by name; shapes
// must match) and rebuilds optimizer state when moments are present.
void restore_train_state(const Checkpoint& ckpt, ParameterSet<float>& params,
                         AdamWState<float>* opt);

}  // namespace miniseg
