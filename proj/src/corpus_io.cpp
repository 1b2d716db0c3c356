#include "promptclinic/corpus_io.hpp"

#include "promptclinic/errors.hpp"

#include "json.hpp"

#include <fstream>

namespace promptclinic {

using nlohmann::json;

void save_corpus_archive(const std::filesystem::path& path, const Corpus& corpus) {
    json j;
    j["format"] = "promptclinic-corpus";
    j["version"] = 1;
    json transcripts = json::array();
    for (const auto& t : corpus.transcripts) {
        json ju = json::array();
        for (const auto& u : t.utterances)
            ju.push_back({{"speaker", u.speaker}, {"raw", u.raw_text}, {"clean", u.clean_text}});
        transcripts.push_back({{"id", t.id},
                               {"label", t.label ? label_name(*t.label) : ""},
                               {"utterances", ju}});
    }
    j["transcripts"] = transcripts;
    std::ofstream os(path);
    if (!os) throw Error("cannot write corpus archive: " + path.string());
    os << j.dump(2) << "\n";
}

Corpus load_corpus_archive(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open corpus archive: " + path.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw Error("corpus archive parse failure: " + std::string(e.what()));
    }
    if (j.value("format", "") != "promptclinic-corpus")
        throw Error("not a corpus archive: " + path.string());
    Corpus corpus;
    corpus.label_counts[Label::AD] = 0;
    corpus.label_counts[Label::HC] = 0;
    for (const auto& jt : j.at("transcripts")) {
        Transcript t;
        t.id = jt.at("id").get<std::string>();
        const std::string lab = jt.value("label", "");
        if (!lab.empty()) t.label = label_from_name(lab);
        for (const auto& ju : jt.at("utterances"))
            t.utterances.push_back(Utterance{ju.at("speaker").get<std::string>(),
                                             ju.at("raw").get<std::string>(),
                                             ju.at("clean").get<std::string>()});
        if (t.label) corpus.label_counts[*t.label] += 1;
        corpus.transcripts.push_back(std::move(t));
    }
    return corpus;
}

} // namespace promptclinic
