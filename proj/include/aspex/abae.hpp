#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "aspex/embeddings.hpp"

namespace aspex {

// Attention autoencoder over frozen (by default) word embeddings:
//   y = mean embedding, a = softmax over words of w_i' A y,
//   z = sum a_i w_i, p = softmax(W z + b), r = T' p.
struct AbaeModel {
    EmbeddingMatrix embeddings;        // |V| x d
    Eigen::MatrixXd attention;         // A: d x d
    Eigen::MatrixXd aspect_logit_w;    // W: k x d
    Eigen::VectorXd aspect_logit_b;    // b: k
    Eigen::MatrixXd aspect_embeddings; // T: k x d

    int dim() const { return static_cast<int>(attention.rows()); }
    int num_aspects() const { return static_cast<int>(aspect_embeddings.rows()); }
};

struct ForwardTrace {
    Eigen::VectorXd mean_embedding;     // y
    Eigen::VectorXd attention_weights;  // a, length n, simplex
    Eigen::VectorXd sentence_embedding; // z
    Eigen::VectorXd aspect_weights;     // p, length k, simplex
    Eigen::VectorXd reconstruction;     // r
};

ForwardTrace forward(const AbaeModel& model, std::span<const int> ids);

struct AbaeGradients {
    Eigen::MatrixXd attention;
    Eigen::MatrixXd aspect_logit_w;
    Eigen::VectorXd aspect_logit_b;
    Eigen::MatrixXd aspect_embeddings;
    // Non-zero embedding rows only; filled when fine-tuning is enabled.
    std::unordered_map<int, Eigen::VectorXd> embedding_rows;

    void set_zero(int dim, int k);
    void accumulate(const AbaeGradients& other, double scale);
};

// Max-margin reconstruction loss of one sentence against m negative
// sentences (hinge margin 1 on unit-normalized vectors) plus
// ortho_lambda * ||Tn Tn' - I||_F^2 over row-normalized T. Gradients are
// accumulated into *grads when non-null.
double abae_loss(const AbaeModel& model, std::span<const int> sentence,
                 const std::vector<std::vector<int>>& negatives, double ortho_lambda,
                 bool fine_tune_embeddings = false, AbaeGradients* grads = nullptr);

// The regularizer alone; zero iff the normalized rows are orthonormal.
double ortho_penalty(const Eigen::MatrixXd& aspect_embeddings);

struct AbaeTrainConfig {
    int num_aspects = 15;
    int negatives = 20;
    int epochs = 10;
    int batch_size = 256;
    double ortho_lambda = 0.1;
    double learning_rate = 1e-3;   // Adam step size
    uint64_t seed = 1;
    bool fine_tune_embeddings = false;
    int max_sentence_tokens = 256; // longer sentences are truncated
    int kmeans_max_iter = 100;
    double kmeans_tol = 1e-6;
};

// Aspect rows start at the k-means centroids of the content-word vectors,
// the attention matrix at identity, the aspect logit layer at seeded
// uniform Glorot values.
AbaeModel init_abae(EmbeddingMatrix embeddings, const AbaeTrainConfig& config);

struct AbaeTrainResult {
    std::vector<double> epoch_loss;   // mean per-sentence loss per epoch
};

// Mini-batch Adam over shuffled sentences; negatives are drawn uniformly
// from the dataset per batch under the config seed.
AbaeTrainResult train_abae(AbaeModel& model, const SentenceDataset& dataset,
                           const AbaeTrainConfig& config);

struct AspectTable {
    struct Entry {
        int aspect_id;
        int rank;          // 0-based
        std::string word;
        double score;      // cosine similarity (ABAE) or probability (LDA)
    };
    std::vector<Entry> entries;
    int num_aspects = 0;
    int top_n = 0;

    std::vector<std::string> words_of(int aspect_id) const;
};

// Top-N vocabulary words per aspect by cosine similarity to the aspect row;
// special tokens excluded, ties broken by vocabulary id.
AspectTable extract_aspects(const AbaeModel& model, int top_n);

// argmax of p with ties broken toward the lowest aspect id.
std::pair<int, Eigen::VectorXd> assign_aspect(const AbaeModel& model,
                                              std::span<const int> ids);

void write_aspect_table(const AspectTable& table, const std::filesystem::path& path);
AspectTable read_aspect_table(const std::filesystem::path& path);

// Text checkpoint: shapes, then A, W, b, T row-major, with an embeddings
// file reference and a config echo in the header.
void save_abae(const AbaeModel& model, const std::filesystem::path& path,
               const std::string& embeddings_ref, const AbaeTrainConfig& config);
AbaeModel load_abae(const std::filesystem::path& path, EmbeddingMatrix embeddings);

}  // namespace aspex
