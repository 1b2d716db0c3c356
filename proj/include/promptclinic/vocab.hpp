#pragma once

#include <string>
#include <vector>

namespace promptclinic {

// Reserved ids are fixed so checkpoints stay readable across vocabularies.
enum ReservedToken : int {
    kPad = 0,
    kMask = 1,
    kBos = 2,
    kEos = 3,
    kUnk = 4,
    kNumReserved = 5,
};

enum class Mode { causal, masked };

struct TokenSequence {
    std::vector<int> ids;
    std::vector<int> mask_positions; // masked mode only; each index holds kMask
    Mode mode = Mode::causal;

    int length() const { return static_cast<int>(ids.size()); }
};

/// Deterministic whitespace-and-punctuation vocabulary. Words are maximal
/// runs of non-space, non-punctuation characters; each punctuation character
/// is its own token; "<MASK>" is matched as a unit and maps to the reserved
/// mask id.
class Vocabulary {
  public:
    Vocabulary();

    // Tokens are deduplicated and sorted, so the same token set always
    // produces the same id assignment.
    static Vocabulary build(const std::vector<std::string>& texts);

    static std::vector<std::string> split(const std::string& text);

    int size() const { return static_cast<int>(id_to_token_.size()); }
    int id_of(const std::string& token) const; // kUnk when absent
    bool contains(const std::string& token) const;
    const std::string& token_of(int id) const;
    const std::vector<std::string>& tokens() const { return id_to_token_; }

    // OOV tokens become kUnk. Never throws.
    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

    // Rebuild from a stored token list (checkpoint reload).
    static Vocabulary from_tokens(const std::vector<std::string>& non_reserved_tokens);

  private:
    std::vector<std::string> id_to_token_;
    std::vector<std::pair<std::string, int>> sorted_lookup_; // binary search
    void rebuild_lookup();
};

// Whole-text tokenization with a length contract: throws SequenceTooLong when
// the encoded length exceeds max_len (0 disables the check).
TokenSequence tokenize(const Vocabulary& v, const std::string& text, Mode mode, int max_len = 0);
std::string detokenize(const Vocabulary& v, const TokenSequence& seq);

// Head truncation: keeps the first `budget` tokens.
std::vector<int> truncate_document(const std::vector<int>& doc_ids, int budget);

} // namespace promptclinic
