#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace promptclinic {

enum class Label { AD, HC };

std::string label_name(Label l);
Label label_from_name(const std::string& s);

struct Utterance {
    std::string speaker;    // tier code, e.g. "PAR", "INV"
    std::string raw_text;   // original tier payload, preserved for audit
    std::string clean_text; // after annotation-code stripping; empty => dropped
};

struct Transcript {
    std::string id;
    std::vector<Utterance> utterances;
    std::optional<Label> label;
};

struct Corpus {
    std::vector<Transcript> transcripts;
    std::map<Label, int> label_counts;

    int count(Label l) const {
        auto it = label_counts.find(l);
        return it == label_counts.end() ? 0 : it->second;
    }
    size_t size() const { return transcripts.size(); }
};

// Parses one CHAT file. Keeps main-tier ('*') utterances in file order;
// header ('@') and dependent ('%') tiers are consumed but not kept.
// Continuation lines starting with a tab attach to the previous tier.
// Throws MalformedChat on a missing @Begin/@End or a tier line without ':'.
Transcript parse_chat(const std::string& raw);

// Applies the cleaning rule table, in order: drop '&'-prefixed tokens; drop
// "(.)" "(..)" "(...)" pause marks; drop "[...]" code groups entirely; strip
// '<' and '>' keeping the enclosed words; drop '+'-prefixed shorthand tokens;
// collapse whitespace. Total and idempotent; may return "".
std::string clean_utterance(const std::string& raw);

// Label manifest: CSV with header "id,label", label in {AD, HC}.
std::map<std::string, Label> load_manifest(const std::filesystem::path& csv_path);

struct LoadOptions {
    bool strict = false;              // abort on the first unparseable file
    bool require_adress_counts = false; // hard-assert 108 transcripts, 54/54
};

// Loads every *.cha under root (recursive), labels from the manifest, sorted
// by id. Unparseable files are skipped with a warning unless strict.
Corpus load_corpus(const std::filesystem::path& root,
                   const std::map<std::string, Label>& manifest,
                   const LoadOptions& opts = {});

// Concatenation of clean_text of utterances whose speaker is in `speakers`,
// in transcript order, joined by single spaces. Lowercased here (not at
// parse) so raw text stays available for audit.
std::string to_document(const Transcript& t, const std::set<std::string>& speakers);

} // namespace promptclinic
