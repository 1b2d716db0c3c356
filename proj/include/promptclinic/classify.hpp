#pragma once

#include "promptclinic/model.hpp"
#include "promptclinic/prompt.hpp"

#include <optional>
#include <string>

namespace promptclinic {

enum class Strategy { verbalizer, generative, conditional };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& s);

// Model mode each strategy requires: verbalizer reads a mask slot
// (bidirectional); the other two score continuations autoregressively.
Mode required_mode(Strategy s);

struct Prediction {
    Label label = Label::AD;
    double score_ad = 0.0; // log-domain
    double score_hc = 0.0;
    Strategy strategy = Strategy::verbalizer;
    bool tie = false;
};

/// Everything needed to score a document: the model, its adapters and soft
/// prompt, the vocabulary, and the prompt configuration. This is also the
/// unit a checkpoint stores.
struct StrategyModel {
    ModelConfig cfg;
    ModelParams params;
    AdapterSet adapters;
    std::optional<SoftPrompt> soft_prompt;
    Vocabulary vocab;
    HardTemplate tmpl;
    Verbalizer verbalizer;
    Strategy strategy = Strategy::verbalizer;

    const AdapterSet* adapters_or_null() const { return adapters.empty() ? nullptr : &adapters; }
    const SoftPrompt* soft_prompt_or_null() const {
        return soft_prompt ? &*soft_prompt : nullptr;
    }
    int n_prompt() const { return soft_prompt ? soft_prompt->length() : 0; }
};

// Cloze scoring: logits at the mask anchor, restricted to the two label-word
// ids, softmax over the pair. Scores are the two log-probabilities.
Prediction classify_verbalizer(const StrategyModel& sm, const std::string& doc);

// Chain-rule log probability of `continuation` given `prefix` under a causal
// model: sum over continuation positions of log softmax(logits)[next token].
double sequence_log_prob(const StrategyModel& sm, const std::vector<int>& prefix_ids,
                         const std::vector<int>& continuation_ids);

// Scores the document under both label phrases; higher total log-likelihood
// wins.
Prediction classify_conditional(const StrategyModel& sm, const std::string& doc);

// Constrained response scoring: per-label response strings are scored at the
// response anchor and length-normalized; no free decoding.
Prediction classify_generative(const StrategyModel& sm, const std::string& doc);

Prediction classify_document(const StrategyModel& sm, const std::string& doc);

// Token ids of a single label word for the cloze verbalizer; throws
// LabelWordOOV when the word is unknown or not a single token.
int cloze_label_word_id(const Vocabulary& v, const std::string& word);

// Renders the training sequence for one labeled document: the cloze sequence
// plus mask metadata (verbalizer), or the prompt plus the true label's
// continuation with loss restricted to the continuation (generative), or the
// label-phrase-conditioned document with loss on document tokens only
// (conditional).
TrainExample build_train_example(const StrategyModel& sm, const std::string& doc, Label label);

Objective objective_for(Strategy s);

} // namespace promptclinic
