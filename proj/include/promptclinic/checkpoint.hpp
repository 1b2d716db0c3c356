#pragma once

#include "promptclinic/classify.hpp"
#include "promptclinic/trainer.hpp"

#include <filesystem>

namespace promptclinic {

// Single-file binary archive: magic + version header, a JSON metadata record
// (config, strategy, template, verbalizer, vocabulary), then named float64
// tensors written raw, so a reload is bit-exact and reproduces logits
// identically.
void save_checkpoint(const std::filesystem::path& path, const StrategyModel& sm,
                     TrainPolicy policy);

struct LoadedCheckpoint {
    StrategyModel model;
    TrainPolicy policy = TrainPolicy::full_finetune;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Adapter-only archive in the same format, loadable independently of the
// base weights.
void save_adapters(const std::filesystem::path& path, const AdapterSet& adapters);
AdapterSet load_adapters(const std::filesystem::path& path);

} // namespace promptclinic
