#include "promptclinic/toygen.hpp"

#include "promptclinic/config.hpp"
#include "promptclinic/errors.hpp"

#include <fstream>
#include <random>
#include <sstream>

namespace promptclinic {

namespace {

// cookie-theft-flavored word pool
const char* kNouns[] = {"boy",    "girl",  "mother", "cookie", "jar",    "stool",
                        "window", "water", "sink",   "plate",  "kitchen", "curtain"};
const char* kVerbs[] = {"takes", "falls", "washes", "reaches", "spills", "stands",
                        "grabs", "dries", "looks",  "climbs"};
const char* kMods[] = {"little", "tall", "wet", "open", "full", "busy"};
const char* kFillers[] = {"uh", "um", "er", "hm"};

std::string make_utterance(std::mt19937_64& rng, const ToyCorpusSpec& spec, double filler_rate) {
    std::uniform_int_distribution<int> n_words(spec.words_per_utterance_min,
                                               spec.words_per_utterance_max);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<size_t> noun(0, std::size(kNouns) - 1);
    std::uniform_int_distribution<size_t> verb(0, std::size(kVerbs) - 1);
    std::uniform_int_distribution<size_t> mod(0, std::size(kMods) - 1);
    std::uniform_int_distribution<size_t> filler(0, std::size(kFillers) - 1);

    const int n = n_words(rng);
    std::ostringstream os;
    for (int w = 0; w < n; ++w) {
        if (coin(rng) < filler_rate) os << kFillers[filler(rng)] << ' ';
        switch (w % 3) {
            case 0: os << "the " << kNouns[noun(rng)]; break;
            case 1: os << kVerbs[verb(rng)]; break;
            default: os << "the " << kMods[mod(rng)] << ' ' << kNouns[noun(rng)]; break;
        }
        os << ' ';
    }
    os << '.';
    return os.str();
}

} // namespace

Corpus make_toy_corpus(const ToyCorpusSpec& spec) {
    Corpus corpus;
    corpus.label_counts[Label::AD] = 0;
    corpus.label_counts[Label::HC] = 0;
    std::uniform_int_distribution<int> n_utt(spec.utterances_min, spec.utterances_max);
    for (int i = 0; i < 2 * spec.n_per_class; ++i) {
        const Label label = i % 2 == 0 ? Label::AD : Label::HC;
        const double rate = label == Label::AD ? spec.filler_rate_ad : spec.filler_rate_hc;
        std::mt19937_64 rng(mix_seed(spec.seed, 0x70F0 + i));

        Transcript t;
        char idbuf[16];
        std::snprintf(idbuf, sizeof idbuf, "toy%03d", i);
        t.id = idbuf;
        t.label = label;
        const int utts = n_utt(rng);
        for (int u = 0; u < utts; ++u) {
            Utterance ut;
            ut.speaker = "PAR";
            ut.raw_text = make_utterance(rng, spec, rate);
            ut.clean_text = clean_utterance(ut.raw_text);
            t.utterances.push_back(std::move(ut));
        }
        // an investigator backchannel, so speaker filtering matters
        t.utterances.push_back(Utterance{"INV", "mhm go on .", "mhm go on ."});
        corpus.label_counts[label] += 1;
        corpus.transcripts.push_back(std::move(t));
    }
    return corpus;
}

void write_toy_corpus_files(const Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.csv");
    if (!manifest) throw Error("cannot write manifest under " + dir.string());
    manifest << "id,label\n";
    for (const auto& t : corpus.transcripts) {
        manifest << t.id << ',' << label_name(*t.label) << '\n';
        std::ofstream cha(dir / (t.id + ".cha"));
        if (!cha) throw Error("cannot write transcript under " + dir.string());
        cha << "@Begin\n";
        cha << "@Languages:\teng\n";
        cha << "@Participants:\tPAR Participant, INV Investigator\n";
        for (const auto& u : t.utterances) cha << '*' << u.speaker << ":\t" << u.raw_text << '\n';
        cha << "@End\n";
    }
}

} // namespace promptclinic
