#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "aspex/corpus.hpp"

namespace aspex {

struct SgnsConfig {
    int dim = 200;
    int window = 10;
    int negatives = 5;
    int min_count = 2;        // vocabulary the dataset was built with
    int epochs = 5;
    double lr_initial = 0.025;
    double lr_final = 1e-4;
    uint64_t seed = 1;
    double norm_cap = 1e3;    // row norms must stay below this after training
};

struct EmbeddingMatrix {
    Eigen::MatrixXd vectors;  // |V| x dim, row id = vocabulary id, <pad> row zero
    std::shared_ptr<const Vocabulary> vocab;

    int dim() const { return static_cast<int>(vectors.cols()); }
    int size() const { return static_cast<int>(vectors.rows()); }
    Eigen::RowVectorXd row(int id) const { return vectors.row(id); }
};

// Skip-gram with negative sampling over in-sentence windows: one positive
// update per (center, context) pair plus `negatives` draws from the
// unigram^0.75 distribution. Single-threaded, deterministic under seed.
// epoch_loss, when given, receives the mean pair loss of each epoch.
EmbeddingMatrix train_sgns(const SentenceDataset& dataset, const SgnsConfig& config,
                           std::vector<double>* epoch_loss = nullptr);

// word2vec text format: "|V| dim" header line, then token + 6-decimal floats.
void write_embeddings(const EmbeddingMatrix& embeddings, const std::filesystem::path& path);
EmbeddingMatrix read_embeddings(const std::filesystem::path& path,
                                std::shared_ptr<const Vocabulary> vocab);

struct Centroids {
    Eigen::MatrixXd centers;          // k x dim
    std::vector<int> assignment;      // per input row
    double inertia = 0.0;
    std::vector<double> inertia_history;  // after each Lloyd iteration
};

// Lloyd's algorithm with k-means++ seeding. An emptied cluster is re-seeded
// at the point farthest from its assigned centroid.
Centroids kmeans(const Eigen::MatrixXd& points, int k, uint64_t seed,
                 int max_iter = 100, double tol = 1e-6, int threads = 1);

// k-means over word vectors with the special-token rows excluded.
Centroids cluster_embeddings(const EmbeddingMatrix& embeddings, int k, uint64_t seed,
                             int max_iter = 100, double tol = 1e-6, int threads = 1);

}  // namespace aspex
