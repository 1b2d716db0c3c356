#include "promptclinic/vocab.hpp"

#include "promptclinic/errors.hpp"

#include <algorithm>
#include <set>

namespace promptclinic {

namespace {

const char* kReservedNames[kNumReserved] = {"<PAD>", "<MASK>", "<BOS>", "<EOS>", "<UNK>"};

bool is_word_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '\'' || c == '_' || c == '-' || static_cast<unsigned char>(c) >= 0x80;
}

} // namespace

Vocabulary::Vocabulary() {
    for (int i = 0; i < kNumReserved; ++i) id_to_token_.push_back(kReservedNames[i]);
    rebuild_lookup();
}

std::vector<std::string> Vocabulary::split(const std::string& text) {
    std::vector<std::string> out;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        char c = text[i];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            ++i;
            continue;
        }
        if (c == '<') {
            // reserved token names round-trip through decode/encode
            bool matched = false;
            for (const char* name : kReservedNames) {
                const size_t len = std::char_traits<char>::length(name);
                if (text.compare(i, len, name) == 0) {
                    out.emplace_back(name);
                    i += len;
                    matched = true;
                    break;
                }
            }
            if (matched) continue;
        }
        if (is_word_char(c)) {
            size_t j = i;
            while (j < n && is_word_char(text[j])) ++j;
            out.emplace_back(text.substr(i, j - i));
            i = j;
            continue;
        }
        out.emplace_back(1, c); // punctuation: one token per character
        ++i;
    }
    return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
    std::set<std::string> uniq;
    for (const auto& t : texts)
        for (auto& tok : split(t))
            if (tok != "<MASK>") uniq.insert(std::move(tok));
    Vocabulary v;
    for (const auto& t : uniq) v.id_to_token_.push_back(t);
    v.rebuild_lookup();
    return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& non_reserved_tokens) {
    Vocabulary v;
    for (const auto& t : non_reserved_tokens) v.id_to_token_.push_back(t);
    v.rebuild_lookup();
    return v;
}

void Vocabulary::rebuild_lookup() {
    sorted_lookup_.clear();
    sorted_lookup_.reserve(id_to_token_.size());
    for (int i = 0; i < static_cast<int>(id_to_token_.size()); ++i)
        sorted_lookup_.emplace_back(id_to_token_[i], i);
    std::sort(sorted_lookup_.begin(), sorted_lookup_.end());
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = std::lower_bound(sorted_lookup_.begin(), sorted_lookup_.end(),
                               std::make_pair(token, 0));
    if (it != sorted_lookup_.end() && it->first == token) return it->second;
    return kUnk;
}

bool Vocabulary::contains(const std::string& token) const {
    auto it = std::lower_bound(sorted_lookup_.begin(), sorted_lookup_.end(),
                               std::make_pair(token, 0));
    return it != sorted_lookup_.end() && it->first == token;
}

const std::string& Vocabulary::token_of(int id) const { return id_to_token_.at(id); }

std::vector<int> Vocabulary::encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& tok : split(text)) ids.push_back(id_of(tok));
    return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (!out.empty()) out.push_back(' ');
        out += token_of(id);
    }
    return out;
}

TokenSequence tokenize(const Vocabulary& v, const std::string& text, Mode mode, int max_len) {
    TokenSequence seq;
    seq.mode = mode;
    seq.ids = v.encode(text);
    if (max_len > 0 && seq.length() > max_len)
        throw SequenceTooLong("sequence of " + std::to_string(seq.ids.size()) +
                              " tokens exceeds max_len " + std::to_string(max_len));
    if (mode == Mode::masked)
        for (int i = 0; i < seq.length(); ++i)
            if (seq.ids[i] == kMask) seq.mask_positions.push_back(i);
    return seq;
}

std::string detokenize(const Vocabulary& v, const TokenSequence& seq) {
    return v.decode(seq.ids);
}

std::vector<int> truncate_document(const std::vector<int>& doc_ids, int budget) {
    if (budget <= 0) return {};
    if (static_cast<int>(doc_ids.size()) <= budget) return doc_ids;
    return std::vector<int>(doc_ids.begin(), doc_ids.begin() + budget);
}

} // namespace promptclinic
