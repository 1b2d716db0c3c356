#pragma once

#include "promptclinic/classify.hpp"
#include "promptclinic/trainer.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace promptclinic {

struct CorpusConfig {
    std::string dir;
    std::string manifest;
    std::string archive; // normalized corpus file; alternative to dir+manifest
    std::vector<std::string> speakers = {"PAR"};
};

struct LoraConfig {
    int rank = 4;
    double alpha = 8.0; // default alpha = 2r
    // entries either name a specific matrix ("layers.0.attn.q") or a
    // per-layer family ("attn.q") expanded across all layers
    std::vector<std::string> targets = {"attn.q", "attn.v"};
};

struct SoftPromptConfig {
    int length = 16;
    SoftPromptInit init = SoftPromptInit::warm;
};

struct ExperimentConfig {
    CorpusConfig corpus;
    ModelConfig model; // vocab_size filled per run; mode follows the strategy
    Strategy strategy = Strategy::verbalizer;
    TrainPolicy policy = TrainPolicy::full_finetune;
    HardTemplate tmpl;
    Verbalizer verbalizer;
    LoraConfig lora;
    SoftPromptConfig soft_prompt;
    bool quantize_base = false;
    Hyperparams train;
    std::vector<GridAxis> grid; // empty = no search
    int folds = 10;
    uint64_t seed = 42;
    std::string out_dir = "out";
};

// Throws ConfigError naming the offending field path.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::filesystem::path& path);

// Canonical form: every field materialized, keys sorted by the json library,
// so the hash is stable under field reordering in the source file.
nlohmann::json config_to_json(const ExperimentConfig& c);
std::string config_hash(const ExperimentConfig& c); // fnv1a-64, hex

void validate_experiment(const ExperimentConfig& c);

std::vector<std::string> expand_lora_targets(const ModelConfig& cfg,
                                             const std::vector<std::string>& targets);

// Builds the per-fold model: seeded init, adapters attached per policy,
// frozen base weights stored through int8 when quantize_base is set, soft
// prompt warm-started from the template's leading tokens.
StrategyModel build_strategy_model(const ExperimentConfig& c, const Vocabulary& vocab,
                                   uint64_t seed);

uint64_t fnv1a64(const std::string& bytes);
uint64_t mix_seed(uint64_t base, uint64_t salt);

} // namespace promptclinic
