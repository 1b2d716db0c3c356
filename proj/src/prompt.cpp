#include "promptclinic/prompt.hpp"

#include "promptclinic/errors.hpp"

#include <algorithm>

namespace promptclinic {

std::string template_mode_name(TemplateMode m) {
    switch (m) {
        case TemplateMode::cloze: return "cloze";
        case TemplateMode::instruction_response: return "instruction_response";
        case TemplateMode::conditional_prefix: return "conditional_prefix";
        case TemplateMode::conditional_suffix: return "conditional_suffix";
    }
    return "?";
}

TemplateMode template_mode_from_name(const std::string& s) {
    if (s == "cloze") return TemplateMode::cloze;
    if (s == "instruction_response") return TemplateMode::instruction_response;
    if (s == "conditional_prefix") return TemplateMode::conditional_prefix;
    if (s == "conditional_suffix") return TemplateMode::conditional_suffix;
    throw ConfigError("unknown template mode '" + s + "'");
}

namespace {

enum class SlotKind { literal, input, instruction, label_phrase, mask };

struct Segment {
    SlotKind kind;
    std::string text; // literal only
};

std::vector<Segment> parse_pattern(const std::string& pattern) {
    std::vector<Segment> segs;
    size_t i = 0;
    std::string lit;
    auto flush = [&] {
        if (!lit.empty()) {
            segs.push_back({SlotKind::literal, lit});
            lit.clear();
        }
    };
    while (i < pattern.size()) {
        if (pattern.compare(i, 7, "{input}") == 0) {
            flush();
            segs.push_back({SlotKind::input, ""});
            i += 7;
        } else if (pattern.compare(i, 13, "{instruction}") == 0) {
            flush();
            segs.push_back({SlotKind::instruction, ""});
            i += 13;
        } else if (pattern.compare(i, 14, "{label_phrase}") == 0) {
            flush();
            segs.push_back({SlotKind::label_phrase, ""});
            i += 14;
        } else if (pattern.compare(i, 6, "<MASK>") == 0) {
            flush();
            segs.push_back({SlotKind::mask, ""});
            i += 6;
        } else {
            lit.push_back(pattern[i]);
            ++i;
        }
    }
    flush();
    return segs;
}

int count_kind(const std::vector<Segment>& segs, SlotKind k) {
    return static_cast<int>(std::count_if(segs.begin(), segs.end(),
                                          [&](const Segment& s) { return s.kind == k; }));
}

std::string rstrip_spaces(std::string s) {
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.pop_back();
    return s;
}

} // namespace

void validate_template(const HardTemplate& t) {
    auto segs = parse_pattern(t.pattern);
    if (count_kind(segs, SlotKind::input) != 1)
        throw SlotMissing("template pattern needs exactly one {input} slot");
    const int masks = count_kind(segs, SlotKind::mask);
    switch (t.mode) {
        case TemplateMode::cloze:
            if (masks == 0) throw SlotMissing("cloze template has no <MASK>");
            if (masks > 1) throw MultipleMasks("cloze template has more than one <MASK>");
            break;
        case TemplateMode::instruction_response: {
            if (masks > 0) throw ConfigError("instruction_response template must not contain <MASK>");
            if (count_kind(segs, SlotKind::instruction) != 1)
                throw SlotMissing("instruction_response template needs an {instruction} slot");
            if (segs.empty() || segs.back().kind != SlotKind::literal ||
                !rstrip_spaces(segs.back().text).ends_with(':'))
                throw ConfigError("instruction_response pattern must end at the response anchor");
            break;
        }
        case TemplateMode::conditional_prefix:
        case TemplateMode::conditional_suffix: {
            if (masks > 0) throw ConfigError("conditional template must not contain <MASK>");
            if (count_kind(segs, SlotKind::label_phrase) != 1)
                throw SlotMissing("conditional template needs a {label_phrase} slot");
            // placement must match the declared mode
            int input_at = -1, phrase_at = -1;
            for (int i = 0; i < static_cast<int>(segs.size()); ++i) {
                if (segs[i].kind == SlotKind::input) input_at = i;
                if (segs[i].kind == SlotKind::label_phrase) phrase_at = i;
            }
            const bool phrase_first = phrase_at < input_at;
            if (t.mode == TemplateMode::conditional_prefix && !phrase_first)
                throw ConfigError("conditional_prefix needs {label_phrase} before {input}");
            if (t.mode == TemplateMode::conditional_suffix && phrase_first)
                throw ConfigError("conditional_suffix needs {label_phrase} after {input}");
            break;
        }
    }
}

Rendered render(const HardTemplate& t, const Vocabulary& v, const std::string& doc,
                const std::string& label_phrase, int max_len) {
    validate_template(t);
    const bool conditional =
        t.mode == TemplateMode::conditional_prefix || t.mode == TemplateMode::conditional_suffix;
    if (conditional && label_phrase.empty())
        throw SlotMissing("conditional render needs a label phrase");

    Rendered r;
    r.seq.mode = t.model_mode();
    auto& ids = r.seq.ids;
    if (r.seq.mode == Mode::causal) ids.push_back(kBos);

    int input_start = -1, phrase_start = -1;
    for (const auto& seg : parse_pattern(t.pattern)) {
        switch (seg.kind) {
            case SlotKind::literal: {
                for (int id : v.encode(seg.text)) ids.push_back(id);
                break;
            }
            case SlotKind::input: {
                input_start = static_cast<int>(ids.size());
                for (int id : v.encode(doc)) ids.push_back(id);
                break;
            }
            case SlotKind::instruction: {
                for (int id : v.encode(t.instruction)) ids.push_back(id);
                break;
            }
            case SlotKind::label_phrase: {
                phrase_start = static_cast<int>(ids.size());
                for (int id : v.encode(label_phrase)) ids.push_back(id);
                break;
            }
            case SlotKind::mask: {
                r.anchors.mask_pos = static_cast<int>(ids.size());
                ids.push_back(kMask);
                break;
            }
        }
    }

    switch (t.mode) {
        case TemplateMode::cloze:
            r.seq.mask_positions.push_back(r.anchors.mask_pos);
            break;
        case TemplateMode::instruction_response:
            r.anchors.response_start = static_cast<int>(ids.size());
            break;
        case TemplateMode::conditional_prefix:
            r.anchors.continuation_start = input_start;
            break;
        case TemplateMode::conditional_suffix:
            // the scored span is the label phrase, conditioned on the document
            r.anchors.continuation_start = phrase_start;
            break;
    }

    if (max_len > 0 && r.seq.length() > max_len)
        throw SequenceTooLong("rendered sequence of " + std::to_string(r.seq.length()) +
                              " tokens exceeds max_len " + std::to_string(max_len));
    return r;
}

int document_budget(const HardTemplate& t, const Vocabulary& v, int max_len, int n_prompt,
                    int reserve_tail) {
    const bool conditional =
        t.mode == TemplateMode::conditional_prefix || t.mode == TemplateMode::conditional_suffix;
    // conditional templates get a one-token placeholder phrase that is
    // subtracted again; the real phrase length goes through reserve_tail
    Rendered empty_doc = render(t, v, "", conditional ? "x" : "", 0);
    const int overhead = empty_doc.seq.length() - (conditional ? 1 : 0);
    return std::max(0, max_len - overhead - n_prompt - reserve_tail);
}

std::vector<std::string> template_literal_texts(const HardTemplate& t) {
    std::vector<std::string> out;
    for (const auto& seg : parse_pattern(t.pattern))
        if (seg.kind == SlotKind::literal && !seg.text.empty()) out.push_back(seg.text);
    if (!t.instruction.empty()) out.push_back(t.instruction);
    return out;
}

SoftPrompt make_soft_prompt(int n_prompt, int d_model, SoftPromptInit init,
                            const Matrix& tok_emb, const std::vector<int>& template_ids,
                            std::mt19937_64& rng) {
    if (n_prompt < 1) throw ConfigError("soft prompt length must be >= 1");
    SoftPrompt sp;
    sp.vectors = Matrix::randn(n_prompt, d_model, 0.02, rng);
    if (init == SoftPromptInit::warm) {
        for (int i = 0; i < n_prompt && i < static_cast<int>(template_ids.size()); ++i) {
            const int id = template_ids[i];
            for (int j = 0; j < d_model; ++j) sp.vectors(i, j) = tok_emb(id, j);
        }
    }
    return sp;
}

Matrix prepend_soft_prompt(const Matrix& embedded, const SoftPrompt& sp, int max_len) {
    if (sp.vectors.cols != embedded.cols)
        throw ShapeMismatch("soft prompt width " + std::to_string(sp.vectors.cols) +
                            " vs embedding width " + std::to_string(embedded.cols));
    const int total = sp.length() + embedded.rows;
    if (max_len > 0 && total > max_len)
        throw LengthOverflow("soft prompt + input length " + std::to_string(total) +
                             " exceeds max_len " + std::to_string(max_len));
    Matrix out(total, embedded.cols);
    for (int i = 0; i < sp.length(); ++i)
        std::copy(sp.vectors.row(i), sp.vectors.row(i) + sp.vectors.cols, out.row(i));
    for (int i = 0; i < embedded.rows; ++i)
        std::copy(embedded.row(i), embedded.row(i) + embedded.cols, out.row(sp.length() + i));
    return out;
}

} // namespace promptclinic
