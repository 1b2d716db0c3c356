#include "promptclinic/evaluation.hpp"

#include "promptclinic/errors.hpp"
#include "promptclinic/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <random>
#include <sstream>
#include <thread>

namespace promptclinic {

using nlohmann::json;

FoldPlan stratified_folds(const Corpus& corpus, int k, uint64_t seed) {
    if (k < 1) throw TooFewSamples("fold count must be >= 1");
    std::map<Label, std::vector<std::string>> by_class;
    for (const auto& t : corpus.transcripts) {
        if (!t.label) throw MissingLabel("transcript '" + t.id + "' has no label");
        by_class[*t.label].push_back(t.id);
    }
    for (auto& [label, ids] : by_class) {
        if (static_cast<int>(ids.size()) < k)
            throw TooFewSamples("class " + label_name(label) + " has " +
                                std::to_string(ids.size()) + " samples, need at least " +
                                std::to_string(k));
        std::sort(ids.begin(), ids.end());
    }

    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.fold_ids.assign(k, {});

    int class_index = 0;
    const int n_classes = static_cast<int>(by_class.size());
    for (auto& [label, ids] : by_class) {
        std::mt19937_64 rng(mix_seed(seed, 0xF01D + class_index));
        std::shuffle(ids.begin(), ids.end(), rng);
        // stagger the per-class remainders so fold sizes stay within one of
        // each other
        const int offset = n_classes > 0 ? class_index * k / n_classes : 0;
        for (size_t i = 0; i < ids.size(); ++i)
            plan.fold_ids[(i + offset) % k].push_back(ids[i]);
        ++class_index;
    }
    for (auto& fold : plan.fold_ids) std::sort(fold.begin(), fold.end());
    return plan;
}

std::vector<Label> majority_vote(const std::vector<EpochPredictions>& last_three_epochs) {
    if (last_three_epochs.size() != 3)
        throw MisalignedPredictions("majority vote needs exactly 3 epoch prediction lists, got " +
                                    std::to_string(last_three_epochs.size()));
    const auto& ref = last_three_epochs.front();
    for (const auto& ep : last_three_epochs) {
        if (ep.ids != ref.ids)
            throw MisalignedPredictions("epoch prediction lists are not aligned by transcript id");
        if (ep.labels.size() != ep.ids.size())
            throw MisalignedPredictions("prediction list size does not match id list");
    }
    std::vector<Label> out(ref.ids.size(), Label::HC);
    for (size_t i = 0; i < ref.ids.size(); ++i) {
        int ad_votes = 0;
        for (const auto& ep : last_three_epochs)
            if (ep.labels[i] == Label::AD) ++ad_votes;
        out[i] = ad_votes >= 2 ? Label::AD : Label::HC;
    }
    return out;
}

PrfMetrics metrics_from_counts(long long tp, long long fp, long long fn) {
    PrfMetrics m;
    if (tp + fp > 0) {
        m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    } else {
        m.degenerate = true;
    }
    if (tp + fn > 0) {
        m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    } else {
        m.degenerate = true;
    }
    if (m.precision + m.recall > 0.0) {
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
        m.degenerate = true;
    }
    return m;
}

FoldResult score_fold(int fold, std::vector<std::string> ids, std::vector<Label> predicted,
                      std::vector<Label> actual, std::vector<bool> ties) {
    if (ids.empty()) throw EmptyInput("score_fold: empty fold");
    if (predicted.size() != ids.size() || actual.size() != ids.size())
        throw MisalignedPredictions("score_fold: prediction/label lists are misaligned");
    FoldResult r;
    r.fold = fold;
    r.ids = std::move(ids);
    r.predicted = std::move(predicted);
    r.actual = std::move(actual);
    r.ties = ties.empty() ? std::vector<bool>(r.ids.size(), false) : std::move(ties);
    long long correct = 0;
    for (size_t i = 0; i < r.ids.size(); ++i) {
        const bool pred_ad = r.predicted[i] == Label::AD;
        const bool is_ad = r.actual[i] == Label::AD;
        if (pred_ad && is_ad) ++r.tp;
        else if (pred_ad && !is_ad) ++r.fp;
        else if (!pred_ad && is_ad) ++r.fn;
        else ++r.tn;
        if (r.predicted[i] == r.actual[i]) ++correct;
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.ids.size());
    const PrfMetrics m = metrics_from_counts(r.tp, r.fp, r.fn);
    r.f1 = m.f1;
    r.degenerate = m.degenerate;
    return r;
}

namespace {

double population_std(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return std::sqrt(var / static_cast<double>(xs.size()));
}

} // namespace

MetricsReport compute_metrics(const std::vector<FoldResult>& folds) {
    if (folds.empty()) throw EmptyInput("compute_metrics: no folds");
    MetricsReport rep;
    std::vector<double> fold_f1;
    long long total = 0;
    for (const auto& f : folds) {
        rep.fold_accuracies.push_back(f.accuracy);
        fold_f1.push_back(f.f1);
        rep.tp += f.tp;
        rep.fp += f.fp;
        rep.fn += f.fn;
        rep.tn += f.tn;
        total += static_cast<long long>(f.ids.size());
        rep.degenerate = rep.degenerate || f.degenerate;
    }
    double acc_sum = 0.0;
    for (double a : rep.fold_accuracies) acc_sum += a;
    rep.accuracy = acc_sum / static_cast<double>(folds.size());
    rep.pooled_accuracy = total > 0 ? static_cast<double>(rep.tp + rep.tn) / total : 0.0;
    const PrfMetrics pooled = metrics_from_counts(rep.tp, rep.fp, rep.fn);
    rep.precision = pooled.precision;
    rep.recall = pooled.recall;
    rep.f1 = pooled.f1;
    rep.degenerate = rep.degenerate || pooled.degenerate;
    rep.acc_std_dev = population_std(rep.fold_accuracies);
    rep.f1_std_dev = population_std(fold_f1);
    return rep;
}

int fold_parallelism(int k) {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("PROMPTCLINIC_THREADS")) {
        try {
            const int cap = std::stoi(env);
            if (cap >= 1) n = std::min(n, cap);
        } catch (...) {
            // unreadable values fall back to the hardware default
        }
    }
    return std::min(n, std::max(1, k));
}

RunReport run_cv(const Corpus& corpus, const ExperimentConfig& config) {
    validate_experiment(config);
    if (config.train.epochs < 3)
        throw ConfigError("run_cv needs train.epochs >= 3 for last-3-epoch majority voting");

    const FoldPlan plan = stratified_folds(corpus, config.folds, config.seed);
    const std::set<std::string> speakers(config.corpus.speakers.begin(),
                                         config.corpus.speakers.end());

    // documents keyed by transcript id
    std::map<std::string, LabeledDoc> docs;
    for (const auto& t : corpus.transcripts)
        docs[t.id] = LabeledDoc{t.id, to_document(t, speakers), *t.label};

    struct FoldSlot {
        FoldResult result;
        std::exception_ptr error;
    };
    std::vector<FoldSlot> slots(plan.k);

    auto run_fold = [&](int f) {
        std::vector<LabeledDoc> train_docs, val_docs;
        for (int g = 0; g < plan.k; ++g)
            for (const auto& id : plan.fold_ids[g])
                (g == f ? val_docs : train_docs).push_back(docs.at(id));

        // fold-local vocabulary from training documents plus prompt text, so
        // the held-out fold can never leak tokens into the model
        std::vector<std::string> vocab_texts;
        for (const auto& d : train_docs) vocab_texts.push_back(d.text);
        for (const auto& s : template_literal_texts(config.tmpl)) vocab_texts.push_back(s);
        vocab_texts.push_back(config.verbalizer.ad_text);
        vocab_texts.push_back(config.verbalizer.hc_text);
        Vocabulary vocab = Vocabulary::build(vocab_texts);

        StrategyModel sm = build_strategy_model(config, vocab, mix_seed(config.seed, 0xA100 + f));

        const int reserve_tail =
            static_cast<int>(std::max(vocab.encode(config.verbalizer.ad_text).size(),
                                      vocab.encode(config.verbalizer.hc_text).size()));
        const int budget =
            document_budget(config.tmpl, vocab, config.model.max_len, sm.n_prompt(), reserve_tail);
        auto truncate = [&](std::vector<LabeledDoc>& ds) {
            for (auto& d : ds) {
                std::vector<int> ids = vocab.encode(d.text);
                if (static_cast<int>(ids.size()) > budget)
                    d.text = vocab.decode(truncate_document(ids, budget));
            }
        };
        truncate(train_docs);
        truncate(val_docs);

        Hyperparams hp = config.train;
        hp.seed = mix_seed(config.seed, 0xE90C + f);
        auto checkpoints = train(sm, config.policy, train_docs, val_docs, hp);

        std::vector<EpochPredictions> last3;
        std::vector<bool> last_epoch_ties;
        for (size_t e = checkpoints.size() - 3; e < checkpoints.size(); ++e) {
            EpochPredictions ep;
            ep.ids = checkpoints[e].val_ids;
            for (const auto& p : checkpoints[e].val_predictions) ep.labels.push_back(p.label);
            last3.push_back(std::move(ep));
        }
        for (const auto& p : checkpoints.back().val_predictions)
            last_epoch_ties.push_back(p.tie);

        std::vector<Label> voted = majority_vote(last3);
        std::vector<Label> actual;
        std::vector<std::string> ids = last3.front().ids;
        for (const auto& id : ids) actual.push_back(docs.at(id).label);
        slots[f].result = score_fold(f, ids, voted, actual, last_epoch_ties);
    };

    const int workers = fold_parallelism(plan.k);
    if (workers <= 1) {
        for (int f = 0; f < plan.k; ++f) {
            try {
                run_fold(f);
            } catch (...) {
                slots[f].error = std::current_exception();
            }
        }
    } else {
        std::atomic<int> next{0};
        auto worker = [&] {
            // fold workers own the cores; kernel-level threading would only
            // oversubscribe
            kernels::ScopedSerial serial;
            for (int f = next.fetch_add(1); f < plan.k; f = next.fetch_add(1)) {
                try {
                    run_fold(f);
                } catch (...) {
                    slots[f].error = std::current_exception();
                }
            }
        };
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    RunReport report;
    for (int f = 0; f < plan.k; ++f) {
        if (slots[f].error) {
            try {
                std::rethrow_exception(slots[f].error);
            } catch (const std::exception& e) {
                throw Error("fold " + std::to_string(f) + " failed: " + e.what());
            }
        }
        report.folds.push_back(std::move(slots[f].result));
    }
    report.metrics = compute_metrics(report.folds);

    report.metadata["config"] = config_to_json(config);
    report.metadata["config_hash"] = config_hash(config);
    report.metadata["seed"] = config.seed;
    report.metadata["folds"] = config.folds;
    report.metadata["code_version"] = "promptclinic 0.1.0";
    report.metadata["optimizer"] = {{"name", "adamw"}, {"beta1", 0.9}, {"beta2", 0.999},
                                    {"eps", 1e-8}};
    report.metadata["conventions"] = {
        {"accuracy", "mean of per-fold accuracies"},
        {"precision_recall_f1", "pooled confusion counts, AD positive"},
        {"std_dev", "population (divisor k) across folds"}};
    return report;
}

json report_to_json(const RunReport& report) {
    json j;
    j["metadata"] = report.metadata;
    j["metrics"] = {{"accuracy", report.metrics.accuracy},
                    {"pooled_accuracy", report.metrics.pooled_accuracy},
                    {"precision", report.metrics.precision},
                    {"recall", report.metrics.recall},
                    {"f1", report.metrics.f1},
                    {"acc_std_dev", report.metrics.acc_std_dev},
                    {"f1_std_dev", report.metrics.f1_std_dev},
                    {"degenerate", report.metrics.degenerate},
                    {"pooled_counts",
                     {{"tp", report.metrics.tp},
                      {"fp", report.metrics.fp},
                      {"fn", report.metrics.fn},
                      {"tn", report.metrics.tn}}},
                    {"fold_accuracies", report.metrics.fold_accuracies}};
    json folds = json::array();
    for (const auto& f : report.folds) {
        json preds = json::array();
        for (size_t i = 0; i < f.ids.size(); ++i)
            preds.push_back({{"id", f.ids[i]},
                             {"predicted", label_name(f.predicted[i])},
                             {"actual", label_name(f.actual[i])},
                             {"tie", static_cast<bool>(f.ties[i])}});
        folds.push_back({{"fold", f.fold},
                         {"accuracy", f.accuracy},
                         {"f1", f.f1},
                         {"tp", f.tp},
                         {"fp", f.fp},
                         {"fn", f.fn},
                         {"tn", f.tn},
                         {"predictions", preds}});
    }
    j["folds"] = folds;
    return j;
}

std::string report_csv(const RunReport& report) {
    std::ostringstream os;
    os << "fold,accuracy\n";
    for (const auto& f : report.folds) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%d,%.6f\n", f.fold, f.accuracy);
        os << buf;
    }
    return os.str();
}

} // namespace promptclinic
