#include "promptclinic/chat.hpp"

#include "promptclinic/errors.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <sstream>

namespace promptclinic {

std::string label_name(Label l) { return l == Label::AD ? "AD" : "HC"; }

Label label_from_name(const std::string& s) {
    if (s == "AD") return Label::AD;
    if (s == "HC") return Label::HC;
    throw ConfigError("unknown label '" + s + "' (expected AD or HC)");
}

namespace {

std::string rstrip(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n' || s.back() == ' ' || s.back() == '\t'))
        s.pop_back();
    return s;
}

std::vector<std::string> split_lines(const std::string& raw) {
    std::vector<std::string> lines;
    std::string cur;
    for (char ch : raw) {
        if (ch == '\n') {
            if (!cur.empty() && cur.back() == '\r') cur.pop_back();
            lines.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) {
        if (cur.back() == '\r') cur.pop_back();
        lines.push_back(cur);
    }
    return lines;
}

bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string collapse_ws(const std::string& s) {
    std::string out;
    bool in_space = true;
    for (char c : s) {
        if (c == ' ' || c == '\t') {
            if (!in_space) out.push_back(' ');
            in_space = true;
        } else {
            out.push_back(c);
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

std::vector<std::string> split_tokens(const std::string& s) {
    std::vector<std::string> toks;
    std::istringstream is(s);
    std::string t;
    while (is >> t) toks.push_back(t);
    return toks;
}

std::string erase_all(std::string s, const std::string& pat) {
    size_t pos;
    while ((pos = s.find(pat)) != std::string::npos) s.replace(pos, pat.size(), " ");
    return s;
}

} // namespace

std::string clean_utterance(const std::string& raw) {
    // 1. '&'-prefixed tokens (fillers, events)
    std::string s;
    {
        std::string joined;
        for (const auto& tok : split_tokens(raw)) {
            if (!tok.empty() && tok[0] == '&') continue;
            joined += tok;
            joined += ' ';
        }
        s = joined;
    }
    // 2. pause marks, longest first so "(...)" is not left as "(.)" + ".."
    s = erase_all(s, "(...)");
    s = erase_all(s, "(..)");
    s = erase_all(s, "(.)");
    // 3. bracketed code groups, including their contents
    {
        std::string out;
        size_t i = 0;
        while (i < s.size()) {
            if (s[i] == '[') {
                size_t close = s.find(']', i);
                if (close == std::string::npos) { i = s.size(); break; }
                i = close + 1;
                out.push_back(' ');
            } else {
                out.push_back(s[i]);
                ++i;
            }
        }
        s = out;
    }
    // 4. angle-bracket retrace markers: drop the brackets, keep the words
    {
        std::string out;
        for (char c : s)
            if (c != '<' && c != '>') out.push_back(c);
        s = out;
    }
    // 5. '+'-prefixed shorthand tokens
    {
        std::string joined;
        for (const auto& tok : split_tokens(s)) {
            if (!tok.empty() && tok[0] == '+') continue;
            joined += tok;
            joined += ' ';
        }
        s = joined;
    }
    // 6. collapse whitespace
    return collapse_ws(s);
}

Transcript parse_chat(const std::string& raw) {
    const auto lines = split_lines(raw);

    int first = -1, last = -1;
    for (int i = 0; i < static_cast<int>(lines.size()); ++i) {
        if (!is_blank(lines[i])) {
            if (first < 0) first = i;
            last = i;
        }
    }
    if (first < 0) throw MalformedChat("empty file");
    if (rstrip(lines[first]) != "@Begin") throw MalformedChat("file does not begin with @Begin");
    if (rstrip(lines[last]) != "@End") throw MalformedChat("file does not end with @End");

    Transcript t;
    // index into t.utterances of the tier an indented continuation attaches
    // to; -1 when the previous tier was a header or dependent tier
    int open_main = -1;
    bool have_tier = false;

    for (int i = first + 1; i < last; ++i) {
        const std::string& line = lines[i];
        if (is_blank(line)) continue;

        if (line[0] == '\t' || line[0] == ' ') {
            if (!have_tier)
                throw MalformedChat("continuation line before any tier (line " + std::to_string(i + 1) + ")");
            if (open_main >= 0) {
                t.utterances[open_main].raw_text += " " + collapse_ws(line);
            }
            continue;
        }

        if (line[0] == '@') {
            open_main = -1;
            have_tier = false;
            continue;
        }

        if (line[0] == '*' || line[0] == '%') {
            size_t colon = line.find(':');
            if (colon == std::string::npos)
                throw MalformedChat("tier line without ':' separator (line " + std::to_string(i + 1) + ")");
            have_tier = true;
            if (line[0] == '%') {
                open_main = -1;
                continue;
            }
            std::string speaker = line.substr(1, colon - 1);
            std::string payload = collapse_ws(line.substr(colon + 1));
            t.utterances.push_back(Utterance{speaker, payload, ""});
            open_main = static_cast<int>(t.utterances.size()) - 1;
            continue;
        }

        throw MalformedChat("unrecognized line form (line " + std::to_string(i + 1) + ")");
    }

    for (auto& u : t.utterances) u.clean_text = clean_utterance(u.raw_text);
    // drop utterances whose cleaned text is empty
    std::erase_if(t.utterances, [](const Utterance& u) { return u.clean_text.empty(); });
    return t;
}

std::map<std::string, Label> load_manifest(const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw ConfigError("cannot open manifest: " + csv_path.string());
    std::map<std::string, Label> out;
    std::string line;
    bool header = true;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = rstrip(line);
        if (line.empty()) continue;
        if (header) {
            if (collapse_ws(line) != "id,label")
                throw ConfigError("manifest must start with header 'id,label': " + csv_path.string());
            header = false;
            continue;
        }
        size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw ConfigError("manifest line " + std::to_string(lineno) + " has no comma");
        std::string id = collapse_ws(line.substr(0, comma));
        std::string lab = collapse_ws(line.substr(comma + 1));
        if (out.count(id)) throw DuplicateId("duplicate manifest id: " + id);
        out.emplace(id, label_from_name(lab));
    }
    return out;
}

Corpus load_corpus(const std::filesystem::path& root,
                   const std::map<std::string, Label>& manifest,
                   const LoadOptions& opts) {
    std::vector<std::filesystem::path> files;
    if (std::filesystem::exists(root)) {
        for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
            if (e.is_regular_file() && e.path().extension() == ".cha") files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());

    struct Slot {
        Transcript t;
        bool ok = false;
        bool skipped = false;
        std::string error;
    };
    std::vector<Slot> slots(files.size());

    // parsing is pure per file
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(files.size()); ++i) {
        std::ifstream in(files[i]);
        std::stringstream buf;
        buf << in.rdbuf();
        try {
            slots[i].t = parse_chat(buf.str());
            slots[i].t.id = files[i].stem().string();
            slots[i].ok = true;
        } catch (const MalformedChat& e) {
            slots[i].skipped = true;
            slots[i].error = e.what();
        }
    }

    Corpus corpus;
    corpus.label_counts[Label::AD] = 0;
    corpus.label_counts[Label::HC] = 0;
    std::set<std::string> seen, skipped_ids;
    for (size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].skipped) {
            if (opts.strict)
                throw MalformedChat(files[i].string() + ": " + slots[i].error);
            std::cerr << "warning: skipping " << files[i].string() << ": " << slots[i].error << "\n";
            skipped_ids.insert(files[i].stem().string());
            continue;
        }
        Transcript& t = slots[i].t;
        if (seen.count(t.id)) throw DuplicateId("duplicate transcript id: " + t.id);
        seen.insert(t.id);
        auto it = manifest.find(t.id);
        if (it == manifest.end()) throw MissingLabel("no manifest label for transcript id: " + t.id);
        t.label = it->second;
        corpus.label_counts[*t.label] += 1;
        corpus.transcripts.push_back(std::move(t));
    }

    for (const auto& [id, lab] : manifest) {
        (void)lab;
        if (!seen.count(id) && !skipped_ids.count(id))
            throw MissingLabel("manifest id not found in corpus directory: " + id);
    }

    std::sort(corpus.transcripts.begin(), corpus.transcripts.end(),
              [](const Transcript& a, const Transcript& b) { return a.id < b.id; });

    if (opts.require_adress_counts) {
        if (corpus.size() != 108 || corpus.count(Label::AD) != 54 || corpus.count(Label::HC) != 54)
            throw Error("ADReSS count assertion failed: got " + std::to_string(corpus.size()) +
                        " transcripts (AD " + std::to_string(corpus.count(Label::AD)) + " / HC " +
                        std::to_string(corpus.count(Label::HC)) + "), expected 108 (54/54)");
    }
    return corpus;
}

std::string to_document(const Transcript& t, const std::set<std::string>& speakers) {
    std::string out;
    for (const auto& u : t.utterances) {
        if (!speakers.count(u.speaker)) continue;
        if (!out.empty()) out.push_back(' ');
        out += u.clean_text;
    }
    // lowercase at assembly; ASCII only, multibyte UTF-8 passes through
    for (auto& c : out)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return out;
}

} // namespace promptclinic
