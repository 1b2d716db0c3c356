#pragma once

#include "promptclinic/chat.hpp"
#include "promptclinic/matrix.hpp"
#include "promptclinic/vocab.hpp"

#include <optional>
#include <string>

namespace promptclinic {

enum class TemplateMode { cloze, instruction_response, conditional_prefix, conditional_suffix };

std::string template_mode_name(TemplateMode m);
TemplateMode template_mode_from_name(const std::string& s);

/// Hard prompt template. Pattern slots: {input}, {instruction},
/// {label_phrase}, <MASK>. Cloze patterns carry exactly one <MASK>;
/// instruction_response patterns end at the response anchor; conditional
/// patterns place {label_phrase} before or after {input}.
struct HardTemplate {
    TemplateMode mode = TemplateMode::cloze;
    std::string pattern;
    std::string instruction;

    // Model mode implied by the template.
    Mode model_mode() const {
        return mode == TemplateMode::cloze ? Mode::masked : Mode::causal;
    }
};

// Throws SlotMissing / MultipleMasks / ConfigError on invariant violations.
void validate_template(const HardTemplate& t);

/// Label -> label word(s). Single-token words for cloze ("dementia",
/// "healthy"); free phrases for generative responses and conditional label
/// sentences.
struct Verbalizer {
    std::string ad_text;
    std::string hc_text;

    const std::string& text_for(Label l) const { return l == Label::AD ? ad_text : hc_text; }
    Verbalizer swapped() const { return Verbalizer{hc_text, ad_text}; }
};

struct RenderAnchors {
    int mask_pos = -1;           // cloze: index holding the MASK id
    int response_start = -1;     // instruction_response: where a response would begin
    int continuation_start = -1; // conditional: first token of the scored span
};

struct Rendered {
    TokenSequence seq;
    RenderAnchors anchors;
};

// Deterministic token-level rendering. Causal renders are prefixed with BOS
// so every scored token has a predecessor. `label_phrase` feeds the
// {label_phrase} slot and is ignored by non-conditional templates.
// Throws SequenceTooLong when the result exceeds max_len (doc must be
// pre-truncated via truncate_document).
Rendered render(const HardTemplate& t, const Vocabulary& v, const std::string& doc,
                const std::string& label_phrase = "", int max_len = 0);

// Token budget available for the document once the template, instruction,
// BOS, soft prompt rows and `reserve_tail` extra tokens are accounted for.
int document_budget(const HardTemplate& t, const Vocabulary& v, int max_len, int n_prompt,
                    int reserve_tail = 0);

// The template's literal text (pattern fragments plus the instruction), used
// to seed the vocabulary so prompt tokens are never OOV.
std::vector<std::string> template_literal_texts(const HardTemplate& t);

/// Learnable prompt vectors prepended to the input embedding while the model
/// stays frozen.
struct SoftPrompt {
    Matrix vectors; // n_prompt x d_model

    int length() const { return vectors.rows; }
};

enum class SoftPromptInit { warm, random };

// Warm start copies the embeddings of the template's first tokens; missing
// rows (and the random variant) are drawn normal(0, 0.02).
SoftPrompt make_soft_prompt(int n_prompt, int d_model, SoftPromptInit init,
                            const Matrix& tok_emb, const std::vector<int>& template_ids,
                            std::mt19937_64& rng);

// Output has n_prompt + input rows; rows [0, n_prompt) are sp.vectors,
// anchors shift by n_prompt. Throws LengthOverflow past max_len.
Matrix prepend_soft_prompt(const Matrix& embedded, const SoftPrompt& sp, int max_len);

} // namespace promptclinic
