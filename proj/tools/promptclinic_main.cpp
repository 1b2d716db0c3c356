#include "promptclinic/checkpoint.hpp"
#include "promptclinic/config.hpp"
#include "promptclinic/corpus_io.hpp"
#include "promptclinic/errors.hpp"
#include "promptclinic/evaluation.hpp"
#include "promptclinic/toygen.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>

namespace {

using namespace promptclinic;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;

std::string lowercase_ascii(std::string s) {
    for (auto& c : s)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return s;
}

Corpus load_input_corpus(const ExperimentConfig& cfg, bool strict) {
    if (!cfg.corpus.archive.empty()) return load_corpus_archive(cfg.corpus.archive);
    if (cfg.corpus.dir.empty() || cfg.corpus.manifest.empty())
        throw ConfigError("config error at corpus: either archive or dir+manifest is required");
    LoadOptions opts;
    opts.strict = strict;
    return load_corpus(cfg.corpus.dir, load_manifest(cfg.corpus.manifest), opts);
}

int cmd_parse(const std::string& input_dir, const std::string& manifest_path,
              const std::string& out_file, bool strict, bool expect_adress) {
    LoadOptions opts;
    opts.strict = strict;
    opts.require_adress_counts = expect_adress;
    Corpus corpus = load_corpus(input_dir, load_manifest(manifest_path), opts);
    if (!out_file.empty()) save_corpus_archive(out_file, corpus);
    std::cout << corpus.size() << " transcripts (AD " << corpus.count(Label::AD) << " / HC "
              << corpus.count(Label::HC) << ")\n";
    return kExitOk;
}

int cmd_run(const std::string& config_path, std::optional<uint64_t> seed_override,
            std::optional<int> folds_override, std::string out_override, bool strict,
            bool save_model) {
    ExperimentConfig cfg = load_config_file(config_path);
    if (seed_override) {
        cfg.seed = *seed_override;
        cfg.train.seed = *seed_override;
    }
    if (folds_override) cfg.folds = *folds_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    validate_experiment(cfg);

    Corpus corpus = load_input_corpus(cfg, strict);
    std::cout << "corpus: " << corpus.size() << " transcripts (AD " << corpus.count(Label::AD)
              << " / HC " << corpus.count(Label::HC) << ")\n";

    if (!cfg.grid.empty()) {
        std::cout << "greedy search over " << cfg.grid.size() << " axes...\n";
        int evals = 0;
        cfg.train = greedy_search(
            cfg.grid, cfg.train,
            [&](const Hyperparams& hp) {
                ExperimentConfig trial = cfg;
                trial.train = hp;
                trial.grid.clear();
                const double acc = run_cv(corpus, trial).metrics.accuracy;
                std::cout << "  lr " << hp.learning_rate << " mb " << hp.micro_batch_size
                          << " acc " << hp.grad_accum_steps << " epochs " << hp.epochs
                          << " -> mean CV accuracy " << acc << "\n";
                return acc;
            },
            &evals);
        std::cout << "greedy search done after " << evals << " evaluations\n";
        cfg.grid.clear();
    }

    RunReport report = run_cv(corpus, cfg);

    std::filesystem::create_directories(cfg.out_dir);
    const auto report_path = std::filesystem::path(cfg.out_dir) / "report.json";
    const auto csv_path = std::filesystem::path(cfg.out_dir) / "fold_accuracy.csv";
    {
        std::ofstream os(report_path);
        os << report_to_json(report).dump(2) << "\n";
    }
    {
        std::ofstream os(csv_path);
        os << report_csv(report);
    }

    if (save_model) {
        // one deployable model trained on the full corpus with the final
        // hyperparameters
        const std::set<std::string> speakers(cfg.corpus.speakers.begin(),
                                             cfg.corpus.speakers.end());
        std::vector<LabeledDoc> all_docs;
        std::vector<std::string> vocab_texts;
        for (const auto& t : corpus.transcripts) {
            all_docs.push_back(LabeledDoc{t.id, to_document(t, speakers), *t.label});
            vocab_texts.push_back(all_docs.back().text);
        }
        for (const auto& s : template_literal_texts(cfg.tmpl)) vocab_texts.push_back(s);
        vocab_texts.push_back(cfg.verbalizer.ad_text);
        vocab_texts.push_back(cfg.verbalizer.hc_text);
        Vocabulary vocab = Vocabulary::build(vocab_texts);
        StrategyModel sm = build_strategy_model(cfg, vocab, mix_seed(cfg.seed, 0xF1A1));
        Hyperparams hp = cfg.train;
        hp.seed = mix_seed(cfg.seed, 0xF1A2);
        train(sm, cfg.policy, all_docs, {}, hp);
        save_checkpoint(std::filesystem::path(cfg.out_dir) / "model.ckpt", sm, cfg.policy);
        std::cout << "model checkpoint: " << (std::filesystem::path(cfg.out_dir) / "model.ckpt")
                  << "\n";
    }

    const auto& m = report.metrics;
    std::cout << "mean CV accuracy " << m.accuracy << ", precision " << m.precision << ", recall "
              << m.recall << ", F1 " << m.f1 << " (acc std " << m.acc_std_dev << ", f1 std "
              << m.f1_std_dev << ")\n";
    std::cout << "report: " << report_path << "\n";
    return kExitOk;
}

int cmd_predict(const std::string& checkpoint_path, std::optional<std::string> text,
                std::optional<std::string> file, const std::vector<std::string>& speakers) {
    LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
    std::string doc;
    if (text) {
        doc = lowercase_ascii(*text);
    } else if (file) {
        std::ifstream is(*file);
        if (!is) throw Error("cannot open input file: " + *file);
        std::stringstream buf;
        buf << is.rdbuf();
        const std::string raw = buf.str();
        if (file->size() >= 4 && file->compare(file->size() - 4, 4, ".cha") == 0) {
            Transcript t = parse_chat(raw);
            doc = to_document(t, std::set<std::string>(speakers.begin(), speakers.end()));
        } else {
            doc = lowercase_ascii(raw);
        }
    } else {
        throw ConfigError("predict needs --text or --file");
    }

    // keep within the model's context, template overhead included
    const StrategyModel& sm = loaded.model;
    const int reserve_tail =
        static_cast<int>(std::max(sm.vocab.encode(sm.verbalizer.ad_text).size(),
                                  sm.vocab.encode(sm.verbalizer.hc_text).size()));
    const int budget =
        document_budget(sm.tmpl, sm.vocab, sm.cfg.max_len, sm.n_prompt(), reserve_tail);
    std::vector<int> ids = sm.vocab.encode(doc);
    if (static_cast<int>(ids.size()) > budget)
        doc = sm.vocab.decode(truncate_document(ids, budget));

    const Prediction p = classify_document(sm, doc);
    std::cout << "label: " << label_name(p.label) << "\n";
    std::cout << "score_AD: " << p.score_ad << "\n";
    std::cout << "score_HC: " << p.score_hc << "\n";
    std::cout << "tie: " << (p.tie ? "true" : "false") << "\n";
    std::cout << "strategy: " << strategy_name(p.strategy) << "\n";
    return kExitOk;
}

int cmd_gen_toy(const std::string& out_dir, int per_class, uint64_t seed) {
    ToyCorpusSpec spec;
    spec.n_per_class = per_class;
    spec.seed = seed;
    Corpus corpus = make_toy_corpus(spec);
    write_toy_corpus_files(corpus, out_dir);
    std::cout << corpus.size() << " transcripts written to " << out_dir << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"prompt-based transcript classification pipeline"};
    app.require_subcommand(1);

    auto* parse = app.add_subcommand("parse", "parse CHAT files into a normalized corpus archive");
    std::string input_dir, manifest_path, parse_out;
    bool parse_strict = false, expect_adress = false;
    parse->add_option("--input", input_dir, "directory of .cha files")->required();
    parse->add_option("--manifest", manifest_path, "id,label CSV")->required();
    parse->add_option("--out", parse_out, "output archive path (JSON)");
    parse->add_flag("--strict", parse_strict, "fail on the first unparseable file");
    parse->add_flag("--expect-adress", expect_adress, "assert 108 transcripts, 54 per label");

    auto* run = app.add_subcommand("run", "run cross-validated training per a config file");
    std::string config_path, run_out;
    bool run_strict = false, save_model = false;
    std::optional<uint64_t> seed_override;
    std::optional<int> folds_override;
    run->add_option("--config", config_path, "experiment config (JSON)")->required();
    run->add_option("--seed", seed_override, "override the config seed");
    run->add_option("--folds", folds_override, "override the fold count (smoke runs)");
    run->add_option("--out", run_out, "override the output directory");
    run->add_flag("--strict", run_strict, "fail on the first unparseable corpus file");
    run->add_flag("--save-model", save_model,
                  "also train on the full corpus and write model.ckpt");

    auto* predict = app.add_subcommand("predict", "classify one document with a checkpoint");
    std::string checkpoint_path;
    std::optional<std::string> text, file;
    std::vector<std::string> speakers = {"PAR"};
    predict->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    predict->add_option("--text", text, "document text");
    predict->add_option("--file", file, "text or .cha file");
    predict->add_option("--speakers", speakers, "tiers to keep when reading .cha input");

    auto* gen = app.add_subcommand("gen-toy", "write a synthetic demo corpus");
    std::string gen_out = "toy_corpus";
    int per_class = 100;
    uint64_t gen_seed = 7;
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--per-class", per_class, "transcripts per class");
    gen->add_option("--seed", gen_seed, "generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (parse->parsed())
            return cmd_parse(input_dir, manifest_path, parse_out, parse_strict, expect_adress);
        if (run->parsed())
            return cmd_run(config_path, seed_override, folds_override, run_out, run_strict,
                           save_model);
        if (predict->parsed()) return cmd_predict(checkpoint_path, text, file, speakers);
        if (gen->parsed()) return cmd_gen_toy(gen_out, per_class, gen_seed);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NonFiniteLoss& e) {
        std::cerr << "error: training diverged: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitConfig;
}
