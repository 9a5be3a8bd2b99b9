#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <vector>

#include "aspex/corpus.hpp"

namespace aspex {

// Sparse bag-of-words counts, sorted by feature id.
struct BowVector {
    std::vector<std::pair<int, int>> counts;

    int count(int feature_id) const;
    bool empty() const { return counts.empty(); }
};

// Counts of in-vocabulary tokens; out-of-vocabulary tokens are ignored
// (<unk> is a regular feature when present in the vocabulary).
BowVector featurize(const Sentence& sentence, const Vocabulary& feature_vocab);

struct OodTrainConfig {
    double l2 = 1.0;         // weight-decay strength (bias unregularized)
    int max_iter = 100;
    double tol = 1e-6;       // gradient-norm stopping tolerance
};

// Training-set metrics for the in-domain class.
struct OodMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double accuracy = 0.0;
};

class OodModel {
public:
    OodModel() = default;
    OodModel(std::shared_ptr<const Vocabulary> features, Eigen::VectorXd weights,
             double bias, double l2, int iterations_run, int64_t n_id, int64_t n_ood);

    double score(const BowVector& x) const;       // sigmoid(w.x + b)
    double score(const Sentence& sentence) const;

    const Eigen::VectorXd& weights() const { return weights_; }
    double bias() const { return bias_; }
    double l2() const { return l2_; }
    int iterations_run() const { return iterations_run_; }
    const Vocabulary& features() const { return *features_; }
    std::shared_ptr<const Vocabulary> features_ptr() const { return features_; }
    int64_t in_domain_count() const { return n_id_; }
    int64_t out_domain_count() const { return n_ood_; }
    const OodMetrics& train_metrics() const { return metrics_; }
    void set_train_metrics(const OodMetrics& m) { metrics_ = m; }

    // Header lines (feature hash, bias, l2, iterations, class counts)
    // followed by feature_id<TAB>weight rows.
    void save(const std::filesystem::path& path) const;
    static OodModel load(const std::filesystem::path& path,
                         std::shared_ptr<const Vocabulary> features);

private:
    std::shared_ptr<const Vocabulary> features_;
    Eigen::VectorXd weights_;
    double bias_ = 0.0;
    double l2_ = 1.0;
    int iterations_run_ = 0;
    int64_t n_id_ = 0;
    int64_t n_ood_ = 0;
    OodMetrics metrics_;
};

// Mean L2-regularized logistic loss and its gradient at (w, b).
// labels: +1 in-domain, -1 out-of-domain. Exposed for the gradient check.
double logistic_loss(const std::vector<BowVector>& xs, const std::vector<int>& labels,
                     const Eigen::VectorXd& w, double b, double l2,
                     Eigen::VectorXd* grad_w = nullptr, double* grad_b = nullptr);

// Deterministic full-batch gradient descent with backtracking line search.
// The feature vocabulary is built over ID + OOD tokens with min_count 1.
// Label 1 = in-domain. Loss history is appended to *loss_history when given.
OodModel train_ood(const SentenceDataset& id_sentences, const SentenceDataset& ood_sentences,
                   const OodTrainConfig& config = {},
                   std::vector<double>* loss_history = nullptr);

std::vector<double> score_dataset(const SentenceDataset& dataset, const OodModel& model,
                                  int threads = 1);

struct FilterResult {
    SentenceDataset dataset;
    double retention = 0.0;   // kept / total (1.0 for an empty input)
    size_t kept = 0;
    size_t total = 0;
};

// Keeps sentences with score >= theta, in the original order. theta must lie
// in [0, 1); theta == 0.0 keeps everything. An empty result is allowed.
FilterResult filter_dataset(const SentenceDataset& dataset, const OodModel& model,
                            double theta, int threads = 1);
FilterResult filter_scored(const SentenceDataset& dataset, const std::vector<double>& scores,
                           double theta);

// Sentence JSON lines with a trailing "score" field, 6 decimals.
void write_scored_dataset(const SentenceDataset& dataset, const std::vector<double>& scores,
                          std::ostream& out);
void write_scored_dataset(const SentenceDataset& dataset, const std::vector<double>& scores,
                          const std::filesystem::path& path);

}  // namespace aspex
