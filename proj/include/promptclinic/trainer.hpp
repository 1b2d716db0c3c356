#pragma once

#include "promptclinic/classify.hpp"

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace promptclinic {

enum class TrainPolicy { full_finetune, lora, soft_prompt_only };

std::string policy_name(TrainPolicy p);
TrainPolicy policy_from_name(const std::string& s);
TrainMask mask_for(TrainPolicy p);

enum class DecayPolicy { standard, paper_literal };

std::string decay_policy_name(DecayPolicy p);
DecayPolicy decay_policy_from_name(const std::string& s);

struct Hyperparams {
    double learning_rate = 1e-3;
    int micro_batch_size = 4;
    int grad_accum_steps = 1;
    int epochs = 10;
    double weight_decay = 0.01;
    DecayPolicy decay_policy = DecayPolicy::standard;
    uint64_t seed = 42;
};

void validate_hyperparams(const Hyperparams& hp);

// Whether decoupled weight decay touches this parameter class. The default
// follows common practice (all non-bias weights, LayerNorm excluded);
// paper_literal additionally decays the LayerNorm module as written.
bool decays(ParamClass cls, DecayPolicy policy);

/// One trainable tensor hooked to its gradient.
struct ParamSlot {
    std::string name;
    Matrix* param = nullptr;
    const Matrix* grad = nullptr;
    ParamClass cls = ParamClass::weight;
};

// The trainable set implied by the policy: every model tensor, only the
// adapter matrices, or only the soft prompt vectors.
std::vector<ParamSlot> trainable_slots(StrategyModel& sm, TrainPolicy policy, GradSet& grads);

/// AdamW with decoupled weight decay. beta1 0.9, beta2 0.999, eps 1e-8.
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long t = 0;
    std::map<std::string, std::pair<Matrix, Matrix>> state; // first/second moments

    void step(std::vector<ParamSlot>& slots, const Hyperparams& hp);
};

struct LabeledDoc {
    std::string id;
    std::string text;
    Label label;
};

struct EpochCheckpoint {
    int epoch = 0; // 1-based
    std::shared_ptr<const StrategyModel> snapshot;
    std::vector<std::string> val_ids;
    std::vector<Prediction> val_predictions;
    double val_loss = 0.0;
    double train_loss = 0.0; // mean over the epoch's optimizer steps
};

// Fine-tunes sm in place, one checkpoint per epoch. Gradient accumulation
// averages micro-batch gradients, so accumulated updates match large-batch
// updates on the same data order. Throws NonFiniteLoss on divergence and
// ModePolicyMismatch when the policy or strategy does not fit the model.
std::vector<EpochCheckpoint> train(StrategyModel& sm, TrainPolicy policy,
                                   const std::vector<LabeledDoc>& train_docs,
                                   const std::vector<LabeledDoc>& val_docs,
                                   const Hyperparams& hp);

struct GridAxis {
    std::string field; // a Hyperparams field name
    std::vector<double> values;
};

void set_hp_field(Hyperparams& hp, const std::string& field, double value);

// Coordinate-wise search: one sweep over the axes in order, each axis
// optimized with the others held at the current best. Ties keep the earlier
// value. Evaluation count is the sum of the axis sizes.
Hyperparams greedy_search(const std::vector<GridAxis>& grid, Hyperparams base,
                          const std::function<double(const Hyperparams&)>& objective,
                          int* evaluations = nullptr);

} // namespace promptclinic
