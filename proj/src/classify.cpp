#include "promptclinic/classify.hpp"

#include "promptclinic/errors.hpp"

#include <cmath>

namespace promptclinic {

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::verbalizer: return "verbalizer";
        case Strategy::generative: return "generative";
        case Strategy::conditional: return "conditional";
    }
    return "?";
}

Strategy strategy_from_name(const std::string& s) {
    if (s == "verbalizer") return Strategy::verbalizer;
    if (s == "generative") return Strategy::generative;
    if (s == "conditional") return Strategy::conditional;
    throw ConfigError("unknown strategy '" + s + "'");
}

Mode required_mode(Strategy s) {
    return s == Strategy::verbalizer ? Mode::masked : Mode::causal;
}

Objective objective_for(Strategy s) {
    return s == Strategy::verbalizer ? Objective::mask_label_ce : Objective::next_token_ce;
}

namespace {

Prediction decide(double score_ad, double score_hc, Strategy strategy) {
    Prediction p;
    p.strategy = strategy;
    p.score_ad = score_ad;
    p.score_hc = score_hc;
    p.tie = score_ad == score_hc;
    p.label = score_hc > score_ad ? Label::HC : Label::AD; // AD wins ties, fixed order
    return p;
}

std::vector<int> encode_label_text(const Vocabulary& v, const std::string& text) {
    std::vector<int> ids = v.encode(text);
    if (ids.empty()) throw LabelWordOOV("label text '" + text + "' produced no tokens");
    for (int id : ids)
        if (id == kUnk)
            throw LabelWordOOV("label text '" + text + "' contains out-of-vocabulary tokens");
    return ids;
}

} // namespace

int cloze_label_word_id(const Vocabulary& v, const std::string& word) {
    auto ids = encode_label_text(v, word);
    if (ids.size() != 1)
        throw LabelWordOOV("cloze label word '" + word + "' must be a single token, got " +
                           std::to_string(ids.size()));
    return ids[0];
}

Prediction classify_verbalizer(const StrategyModel& sm, const std::string& doc) {
    if (sm.cfg.mode != Mode::masked)
        throw ModePolicyMismatch("verbalizer classification needs a masked-mode model");
    Rendered r = render(sm.tmpl, sm.vocab, doc, "", sm.cfg.max_len - sm.n_prompt());
    const int w_ad = cloze_label_word_id(sm.vocab, sm.verbalizer.ad_text);
    const int w_hc = cloze_label_word_id(sm.vocab, sm.verbalizer.hc_text);

    ForwardCache cache;
    const Matrix& logits = forward_cached(sm.cfg, sm.params, sm.adapters_or_null(),
                                          sm.soft_prompt_or_null(), r.seq, cache);
    const int row = cache.n_prompt + r.anchors.mask_pos;
    const double l_ad = logits(row, w_ad);
    const double l_hc = logits(row, w_hc);
    // softmax restricted to the two label words, in the log domain
    const double m = std::max(l_ad, l_hc);
    const double z = std::log(std::exp(l_ad - m) + std::exp(l_hc - m)) + m;
    return decide(l_ad - z, l_hc - z, Strategy::verbalizer);
}

double sequence_log_prob(const StrategyModel& sm, const std::vector<int>& prefix_ids,
                         const std::vector<int>& continuation_ids) {
    if (sm.cfg.mode != Mode::causal)
        throw ModePolicyMismatch("sequence_log_prob needs a causal-mode model");
    if (continuation_ids.empty()) return 0.0; // empty product
    if (prefix_ids.empty()) throw Error("sequence_log_prob: empty prefix");

    TokenSequence seq;
    seq.mode = Mode::causal;
    seq.ids = prefix_ids;
    seq.ids.insert(seq.ids.end(), continuation_ids.begin(), continuation_ids.end());
    const int total = seq.length() + sm.n_prompt();
    if (total > sm.cfg.max_len)
        throw LengthOverflow("prefix+continuation length " + std::to_string(total) +
                             " exceeds max_len " + std::to_string(sm.cfg.max_len));

    ForwardCache cache;
    const Matrix& logits = forward_cached(sm.cfg, sm.params, sm.adapters_or_null(),
                                          sm.soft_prompt_or_null(), seq, cache);
    const int vocab = logits.cols;
    double total_logp = 0.0;
    for (int t = static_cast<int>(prefix_ids.size()); t < seq.length(); ++t) {
        const int row = cache.n_prompt + t - 1;
        const double* lr = logits.row(row);
        double mx = lr[0];
        for (int j = 1; j < vocab; ++j) mx = std::max(mx, lr[j]);
        double z = 0.0;
        for (int j = 0; j < vocab; ++j) z += std::exp(lr[j] - mx);
        total_logp += lr[seq.ids[t]] - mx - std::log(z);
    }
    return total_logp;
}

Prediction classify_conditional(const StrategyModel& sm, const std::string& doc) {
    auto score_phrase = [&](const std::string& phrase) {
        Rendered r = render(sm.tmpl, sm.vocab, doc, phrase, sm.cfg.max_len - sm.n_prompt());
        const int split = r.anchors.continuation_start;
        std::vector<int> prefix(r.seq.ids.begin(), r.seq.ids.begin() + split);
        std::vector<int> cont(r.seq.ids.begin() + split, r.seq.ids.end());
        return sequence_log_prob(sm, prefix, cont);
    };
    return decide(score_phrase(sm.verbalizer.ad_text), score_phrase(sm.verbalizer.hc_text),
                  Strategy::conditional);
}

Prediction classify_generative(const StrategyModel& sm, const std::string& doc) {
    Rendered r = render(sm.tmpl, sm.vocab, doc, "", 0);
    auto score_response = [&](const std::string& response) {
        std::vector<int> cont = encode_label_text(sm.vocab, response);
        const int total = r.seq.length() + static_cast<int>(cont.size()) + sm.n_prompt();
        if (total > sm.cfg.max_len)
            throw LengthOverflow("prompt+response length " + std::to_string(total) +
                                 " exceeds max_len " + std::to_string(sm.cfg.max_len));
        // length-normalized so longer response strings are not penalized
        return sequence_log_prob(sm, r.seq.ids, cont) / static_cast<double>(cont.size());
    };
    return decide(score_response(sm.verbalizer.ad_text), score_response(sm.verbalizer.hc_text),
                  Strategy::generative);
}

Prediction classify_document(const StrategyModel& sm, const std::string& doc) {
    switch (sm.strategy) {
        case Strategy::verbalizer: return classify_verbalizer(sm, doc);
        case Strategy::generative: return classify_generative(sm, doc);
        case Strategy::conditional: return classify_conditional(sm, doc);
    }
    throw Error("unreachable");
}

TrainExample build_train_example(const StrategyModel& sm, const std::string& doc, Label label) {
    TrainExample ex;
    switch (sm.strategy) {
        case Strategy::verbalizer: {
            Rendered r = render(sm.tmpl, sm.vocab, doc, "", sm.cfg.max_len - sm.n_prompt());
            ex.seq = std::move(r.seq);
            ex.mask_pos = r.anchors.mask_pos;
            ex.label_words = {cloze_label_word_id(sm.vocab, sm.verbalizer.ad_text),
                              cloze_label_word_id(sm.vocab, sm.verbalizer.hc_text)};
            ex.true_label = label == Label::AD ? 0 : 1;
            break;
        }
        case Strategy::generative: {
            Rendered r = render(sm.tmpl, sm.vocab, doc, "", 0);
            std::vector<int> cont =
                encode_label_text(sm.vocab, sm.verbalizer.text_for(label));
            ex.loss_from = r.seq.length();
            ex.seq = std::move(r.seq);
            ex.seq.ids.insert(ex.seq.ids.end(), cont.begin(), cont.end());
            if (ex.seq.length() + sm.n_prompt() > sm.cfg.max_len)
                throw SequenceTooLong("training sequence exceeds max_len");
            break;
        }
        case Strategy::conditional: {
            Rendered r = render(sm.tmpl, sm.vocab, doc, sm.verbalizer.text_for(label),
                                sm.cfg.max_len - sm.n_prompt());
            // the label phrase is conditioning; the loss covers the scored span
            ex.loss_from = r.anchors.continuation_start;
            ex.seq = std::move(r.seq);
            break;
        }
    }
    return ex;
}

} // namespace promptclinic
