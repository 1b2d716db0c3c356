#pragma once

#include "promptclinic/chat.hpp"
#include "promptclinic/config.hpp"
#include "promptclinic/trainer.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace promptclinic {

struct FoldPlan {
    int k = 0;
    uint64_t seed = 0;
    std::vector<std::vector<std::string>> fold_ids; // sorted ids per fold
};

// Per-class seeded shuffle, then staggered round-robin assignment: the folds
// partition the corpus and per-fold per-class counts differ from
// floor(n_class/k) by at most one. Throws TooFewSamples when k exceeds a
// class count.
FoldPlan stratified_folds(const Corpus& corpus, int k, uint64_t seed);

struct EpochPredictions {
    std::vector<std::string> ids;
    std::vector<Label> labels;
};

// Per transcript, the label predicted by at least 2 of the 3 epochs. Three
// binary voters can never tie. Throws MisalignedPredictions.
std::vector<Label> majority_vote(const std::vector<EpochPredictions>& last_three_epochs);

struct PrfMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool degenerate = false; // a zero denominator was reported as 0
};

// AD is the positive class, fixed.
PrfMetrics metrics_from_counts(long long tp, long long fp, long long fn);

struct FoldResult {
    int fold = 0;
    std::vector<std::string> ids;
    std::vector<Label> predicted;
    std::vector<Label> actual;
    std::vector<bool> ties;
    long long tp = 0, fp = 0, fn = 0, tn = 0;
    double accuracy = 0.0;
    double f1 = 0.0;
    bool degenerate = false;
};

FoldResult score_fold(int fold, std::vector<std::string> ids, std::vector<Label> predicted,
                      std::vector<Label> actual, std::vector<bool> ties = {});

struct MetricsReport {
    std::vector<double> fold_accuracies;
    long long tp = 0, fp = 0, fn = 0, tn = 0; // pooled over folds
    double accuracy = 0.0;    // mean of per-fold accuracies (Table-1 convention)
    double pooled_accuracy = 0.0; // (tp+tn)/n; differs when fold sizes differ
    double precision = 0.0;   // from pooled counts
    double recall = 0.0;
    double f1 = 0.0;
    double acc_std_dev = 0.0; // population std across folds
    double f1_std_dev = 0.0;
    bool degenerate = false;
};

MetricsReport compute_metrics(const std::vector<FoldResult>& folds);

struct RunReport {
    MetricsReport metrics;
    std::vector<FoldResult> folds;
    nlohmann::json metadata;
};

// Trains and scores every fold (train on k-1, per-epoch checkpoints,
// majority vote over the final three epochs, score the held-out fold).
// Folds run in parallel — capped by PROMPTCLINIC_THREADS — without changing
// a single output byte.
RunReport run_cv(const Corpus& corpus, const ExperimentConfig& config);

nlohmann::json report_to_json(const RunReport& report);
std::string report_csv(const RunReport& report); // per-fold accuracy, Fig-2 shape

int fold_parallelism(int k);

} // namespace promptclinic
