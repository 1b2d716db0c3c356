#include "promptclinic/trainer.hpp"

#include "promptclinic/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace promptclinic {

std::string policy_name(TrainPolicy p) {
    switch (p) {
        case TrainPolicy::full_finetune: return "full";
        case TrainPolicy::lora: return "lora";
        case TrainPolicy::soft_prompt_only: return "soft_prompt";
    }
    return "?";
}

TrainPolicy policy_from_name(const std::string& s) {
    if (s == "full" || s == "full_finetune") return TrainPolicy::full_finetune;
    if (s == "lora") return TrainPolicy::lora;
    if (s == "soft_prompt" || s == "soft_prompt_only") return TrainPolicy::soft_prompt_only;
    throw ConfigError("unknown train policy '" + s + "'");
}

TrainMask mask_for(TrainPolicy p) {
    switch (p) {
        case TrainPolicy::full_finetune: return {true, false, false};
        case TrainPolicy::lora: return {false, true, false};
        case TrainPolicy::soft_prompt_only: return {false, false, true};
    }
    return {};
}

std::string decay_policy_name(DecayPolicy p) {
    return p == DecayPolicy::standard ? "standard" : "paper_literal";
}

DecayPolicy decay_policy_from_name(const std::string& s) {
    if (s == "standard") return DecayPolicy::standard;
    if (s == "paper_literal") return DecayPolicy::paper_literal;
    throw ConfigError("unknown decay policy '" + s + "'");
}

void validate_hyperparams(const Hyperparams& hp) {
    if (!(hp.learning_rate >= 0.0) || hp.micro_batch_size < 1 || hp.grad_accum_steps < 1 ||
        hp.epochs < 1 || hp.weight_decay < 0.0)
        throw ConfigError("hyperparameters must be positive (learning_rate >= 0)");
}

bool decays(ParamClass cls, DecayPolicy policy) {
    switch (cls) {
        case ParamClass::weight:
        case ParamClass::embedding: return true;
        case ParamClass::ln_gain:
        case ParamClass::ln_bias: return policy == DecayPolicy::paper_literal;
    }
    return false;
}

std::vector<ParamSlot> trainable_slots(StrategyModel& sm, TrainPolicy policy, GradSet& grads) {
    std::vector<ParamSlot> slots;
    switch (policy) {
        case TrainPolicy::full_finetune: {
            auto params = named_tensors(sm.params);
            auto gs = named_tensors(grads.model);
            for (size_t i = 0; i < params.size(); ++i)
                slots.push_back({params[i].name, params[i].m, gs[i].m, params[i].cls});
            break;
        }
        case TrainPolicy::lora: {
            if (sm.adapters.empty())
                throw ModePolicyMismatch("lora policy with no attached adapters");
            for (auto& [target, ad] : sm.adapters.by_target) {
                LoraGrad& lg = grads.lora.at(target);
                slots.push_back({"lora." + target + ".A", &ad.a, &lg.a, ParamClass::weight});
                slots.push_back({"lora." + target + ".B", &ad.b, &lg.b, ParamClass::weight});
            }
            break;
        }
        case TrainPolicy::soft_prompt_only: {
            if (!sm.soft_prompt)
                throw ModePolicyMismatch("soft_prompt policy with no soft prompt attached");
            slots.push_back(
                {"soft_prompt", &sm.soft_prompt->vectors, &grads.soft_prompt, ParamClass::weight});
            break;
        }
    }
    return slots;
}

void AdamW::step(std::vector<ParamSlot>& slots, const Hyperparams& hp) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& slot : slots) {
        auto& [m, v] = state[slot.name];
        if (m.empty()) {
            m = Matrix(slot.param->rows, slot.param->cols);
            v = Matrix(slot.param->rows, slot.param->cols);
        }
        const double wd = decays(slot.cls, hp.decay_policy) ? hp.weight_decay : 0.0;
        double* p = slot.param->data.data();
        const double* g = slot.grad->data.data();
        double* md = m.data.data();
        double* vd = v.data.data();
        const size_t n = slot.param->data.size();
        for (size_t i = 0; i < n; ++i) {
            md[i] = beta1 * md[i] + (1.0 - beta1) * g[i];
            vd[i] = beta2 * vd[i] + (1.0 - beta2) * g[i] * g[i];
            const double mhat = md[i] / bc1;
            const double vhat = vd[i] / bc2;
            p[i] -= hp.learning_rate * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
        }
    }
}

namespace {

void scale_grads(GradSet& g, double s) {
    for (auto& t : named_tensors(g.model))
        for (auto& x : t.m->data) x *= s;
    for (auto& [name, lg] : g.lora) {
        for (auto& x : lg.a.data) x *= s;
        for (auto& x : lg.b.data) x *= s;
    }
    for (auto& x : g.soft_prompt.data) x *= s;
}

} // namespace

std::vector<EpochCheckpoint> train(StrategyModel& sm, TrainPolicy policy,
                                   const std::vector<LabeledDoc>& train_docs,
                                   const std::vector<LabeledDoc>& val_docs,
                                   const Hyperparams& hp) {
    validate_hyperparams(hp);
    if (train_docs.empty()) throw EmptyInput("train: no training documents");
    if (sm.cfg.mode != required_mode(sm.strategy))
        throw ModePolicyMismatch(strategy_name(sm.strategy) + " strategy needs a " +
                                 mode_name(required_mode(sm.strategy)) + " model");

    const Objective obj = objective_for(sm.strategy);
    const TrainMask mask = mask_for(policy);

    std::vector<TrainExample> examples;
    examples.reserve(train_docs.size());
    for (const auto& d : train_docs) examples.push_back(build_train_example(sm, d.text, d.label));

    std::vector<TrainExample> val_examples;
    for (const auto& d : val_docs) val_examples.push_back(build_train_example(sm, d.text, d.label));

    GradSet grads = make_grads_like(sm.cfg, sm.params, sm.adapters_or_null(),
                                    sm.soft_prompt_or_null());
    std::vector<ParamSlot> slots = trainable_slots(sm, policy, grads);
    AdamW opt;

    std::mt19937_64 rng(hp.seed);
    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), size_t{0});

    std::vector<EpochCheckpoint> checkpoints;
    for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);

        double epoch_loss = 0.0;
        int step_count = 0;
        size_t cursor = 0;
        while (cursor < order.size()) {
            zero_grads(grads);
            double group_loss = 0.0;
            int micro_count = 0;
            for (int acc = 0; acc < hp.grad_accum_steps && cursor < order.size(); ++acc) {
                std::vector<TrainExample> batch;
                for (int b = 0; b < hp.micro_batch_size && cursor < order.size(); ++b, ++cursor)
                    batch.push_back(examples[order[cursor]]);
                group_loss += loss_and_grads(sm.cfg, sm.params, sm.adapters_or_null(),
                                             sm.soft_prompt_or_null(), batch, obj, mask, grads);
                ++micro_count;
            }
            scale_grads(grads, 1.0 / micro_count);
            opt.step(slots, hp);
            epoch_loss += group_loss / micro_count;
            ++step_count;
        }

        EpochCheckpoint cp;
        cp.epoch = epoch;
        cp.train_loss = step_count > 0 ? epoch_loss / step_count : 0.0;
        for (const auto& d : val_docs) {
            cp.val_ids.push_back(d.id);
            cp.val_predictions.push_back(classify_document(sm, d.text));
        }
        if (!val_examples.empty())
            cp.val_loss = batch_loss(sm.cfg, sm.params, sm.adapters_or_null(),
                                     sm.soft_prompt_or_null(), val_examples, obj);
        cp.snapshot = std::make_shared<StrategyModel>(sm);
        checkpoints.push_back(std::move(cp));
    }
    return checkpoints;
}

void set_hp_field(Hyperparams& hp, const std::string& field, double value) {
    if (field == "learning_rate") hp.learning_rate = value;
    else if (field == "micro_batch_size") hp.micro_batch_size = static_cast<int>(value);
    else if (field == "grad_accum_steps") hp.grad_accum_steps = static_cast<int>(value);
    else if (field == "epochs") hp.epochs = static_cast<int>(value);
    else if (field == "weight_decay") hp.weight_decay = value;
    else throw ConfigError("unknown hyperparameter grid axis '" + field + "'");
}

Hyperparams greedy_search(const std::vector<GridAxis>& grid, Hyperparams base,
                          const std::function<double(const Hyperparams&)>& objective,
                          int* evaluations) {
    if (grid.empty()) throw EmptyGrid("hyperparameter grid is empty");
    for (const auto& axis : grid)
        if (axis.values.empty()) throw EmptyGrid("grid axis '" + axis.field + "' has no values");

    int evals = 0;
    Hyperparams current = base;
    for (const auto& axis : grid) {
        double best_score = -std::numeric_limits<double>::infinity();
        double best_value = axis.values.front();
        for (double v : axis.values) {
            Hyperparams trial = current;
            set_hp_field(trial, axis.field, v);
            const double score = objective(trial);
            ++evals;
            if (score > best_score) {
                best_score = score;
                best_value = v;
            }
        }
        set_hp_field(current, axis.field, best_value);
    }
    if (evaluations) *evaluations = evals;
    return current;
}

} // namespace promptclinic
