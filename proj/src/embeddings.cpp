#include "aspex/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "aspex/parallel.hpp"
#include "aspex/rng.hpp"

namespace aspex {

namespace {

double sigmoid(double t) {
    if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
    double e = std::exp(t);
    return e / (1.0 + e);
}

double log1pexp(double t) {
    if (t > 0) return t + std::log1p(std::exp(-t));
    return std::log1p(std::exp(t));
}

// Cumulative unigram^0.75 table over sampleable ids (frequency > 0, not <pad>).
struct NegativeTable {
    std::vector<int> ids;
    std::vector<double> cumulative;
    double total = 0.0;

    int sample(std::mt19937_64& rng) const {
        double u = uniform_double(rng) * total;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        size_t idx = std::min<size_t>(it - cumulative.begin(), ids.size() - 1);
        return ids[idx];
    }
};

NegativeTable build_negative_table(const Vocabulary& vocab) {
    NegativeTable table;
    for (int id = 0; id < vocab.size(); ++id) {
        if (id == kPadId || vocab.frequency(id) <= 0) continue;
        table.ids.push_back(id);
        table.total += std::pow(static_cast<double>(vocab.frequency(id)), 0.75);
        table.cumulative.push_back(table.total);
    }
    return table;
}

}  // namespace

EmbeddingMatrix train_sgns(const SentenceDataset& dataset, const SgnsConfig& config,
                           std::vector<double>* epoch_loss) {
    if (dataset.empty()) throw DataError("cannot train embeddings on an empty dataset");
    if (!dataset.vocab) throw DataError("dataset has no vocabulary; run build_vocab first");
    if (dataset.vocab->min_count() != config.min_count) {
        throw DataError("dataset vocabulary was built with min_count " +
                        std::to_string(dataset.vocab->min_count()) + ", config expects " +
                        std::to_string(config.min_count));
    }
    if (config.window < 1) throw DataError("window must be >= 1");
    const Vocabulary& vocab = *dataset.vocab;
    if (vocab.content_size() < 2) {
        throw DataError("vocabulary needs at least 2 content tokens for SGNS");
    }

    const int v = vocab.size();
    const int dim = config.dim;
    std::mt19937_64 rng(config.seed);

    std::vector<Eigen::VectorXd> input(v), context(v);
    for (int id = 0; id < v; ++id) {
        input[id].setZero(dim);
        context[id].setZero(dim);
        if (id == kPadId) continue;
        for (int j = 0; j < dim; ++j) {
            input[id][j] = (uniform_double(rng) - 0.5) / dim;
        }
    }

    NegativeTable negatives = build_negative_table(vocab);

    std::vector<std::vector<int>> corpus;
    corpus.reserve(dataset.size());
    size_t total_tokens = 0;
    for (const Sentence& s : dataset.sentences) {
        corpus.push_back(token_ids(s, vocab));
        total_tokens += corpus.back().size();
    }
    const double total_steps =
        static_cast<double>(total_tokens) * std::max(1, config.epochs);

    Eigen::VectorXd grad_center(dim);
    size_t processed = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double loss_sum = 0.0;
        size_t pair_count = 0;
        for (const std::vector<int>& ids : corpus) {
            const int n = static_cast<int>(ids.size());
            for (int pos = 0; pos < n; ++pos) {
                ++processed;
                const double progress = static_cast<double>(processed) / total_steps;
                const double lr =
                    config.lr_initial + (config.lr_final - config.lr_initial) * progress;
                const int center = ids[pos];
                if (center == kPadId) continue;
                const int lo = std::max(0, pos - config.window);
                const int hi = std::min(n - 1, pos + config.window);
                for (int cpos = lo; cpos <= hi; ++cpos) {
                    if (cpos == pos) continue;
                    const int target = ids[cpos];
                    if (target == kPadId) continue;
                    Eigen::VectorXd& h = input[center];
                    grad_center.setZero();
                    double pair_loss = 0.0;

                    double fpos = h.dot(context[target]);
                    pair_loss += log1pexp(-fpos);
                    double g = 1.0 - sigmoid(fpos);
                    grad_center += g * context[target];
                    context[target] += (lr * g) * h;

                    for (int s = 0; s < config.negatives; ++s) {
                        int neg = negatives.sample(rng);
                        for (int retry = 0; retry < 8 && neg == target; ++retry) {
                            neg = negatives.sample(rng);
                        }
                        if (neg == target) continue;
                        double fneg = h.dot(context[neg]);
                        pair_loss += log1pexp(fneg);
                        double gn = -sigmoid(fneg);
                        grad_center += gn * context[neg];
                        context[neg] += (lr * gn) * h;
                    }
                    h += lr * grad_center;
                    loss_sum += pair_loss;
                    ++pair_count;
                }
            }
        }
        if (epoch_loss) {
            epoch_loss->push_back(pair_count > 0 ? loss_sum / pair_count : 0.0);
        }
    }

    // Word representation = input + context vector. The combined vectors
    // carry the within-window co-occurrence similarity the aspect pipeline
    // clusters on; raw input vectors anti-align for words that only ever
    // co-occur with each other.
    EmbeddingMatrix result;
    result.vocab = dataset.vocab;
    result.vectors.resize(v, dim);
    for (int id = 0; id < v; ++id) {
        Eigen::VectorXd combined = input[id] + context[id];
        const double norm = combined.norm();
        if (!std::isfinite(norm) || norm >= config.norm_cap) {
            throw NumericError("embedding row norm out of range for token '" +
                               vocab.token(id) + "'");
        }
        result.vectors.row(id) = combined.transpose();
    }
    result.vectors.row(kPadId).setZero();
    return result;
}

void write_embeddings(const EmbeddingMatrix& embeddings, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write embeddings file: " + path.string());
    out << embeddings.size() << ' ' << embeddings.dim() << '\n';
    char buf[32];
    for (int id = 0; id < embeddings.size(); ++id) {
        out << embeddings.vocab->token(id);
        for (int j = 0; j < embeddings.dim(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.6f", embeddings.vectors(id, j));
            out << ' ' << buf;
        }
        out << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path,
                                std::shared_ptr<const Vocabulary> vocab) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read embeddings file: " + path.string());
    int v = 0, dim = 0;
    in >> v >> dim;
    if (!in || v <= 0 || dim <= 0) throw DataError(path.string() + ": bad embeddings header");
    if (v != vocab->size()) {
        throw DataError(path.string() + ": vocabulary size mismatch (" + std::to_string(v) +
                        " rows vs " + std::to_string(vocab->size()) + " tokens)");
    }
    EmbeddingMatrix result;
    result.vocab = std::move(vocab);
    result.vectors.resize(v, dim);
    for (int id = 0; id < v; ++id) {
        std::string token;
        in >> token;
        if (token != result.vocab->token(id)) {
            throw DataError(path.string() + ": token order mismatch at row " +
                            std::to_string(id));
        }
        for (int j = 0; j < dim; ++j) {
            if (!(in >> result.vectors(id, j))) {
                throw DataError(path.string() + ": truncated vector at row " +
                                std::to_string(id));
            }
        }
    }
    return result;
}

namespace {

void assign_points(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centers,
                   std::vector<int>& assignment, std::vector<double>& distances,
                   int threads) {
    const int n = static_cast<int>(points.rows());
    const int k = static_cast<int>(centers.rows());
    parallel_for(static_cast<size_t>(n), threads, [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int best_c = 0;
            for (int c = 0; c < k; ++c) {
                double d = (points.row(i) - centers.row(c)).squaredNorm();
                if (d < best) {
                    best = d;
                    best_c = c;
                }
            }
            assignment[i] = best_c;
            distances[i] = best;
        }
    });
}

Eigen::MatrixXd seed_plus_plus(const Eigen::MatrixXd& points, int k, std::mt19937_64& rng) {
    const int n = static_cast<int>(points.rows());
    Eigen::MatrixXd centers(k, points.cols());
    centers.row(0) = points.row(static_cast<int>(uniform_index(rng, n)));
    std::vector<double> d2(n);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < c; ++j) {
                best = std::min(best, (points.row(i) - centers.row(j)).squaredNorm());
            }
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            // all remaining points coincide with chosen centers
            centers.row(c) = points.row(static_cast<int>(uniform_index(rng, n)));
            continue;
        }
        double u = uniform_double(rng) * total;
        double acc = 0.0;
        int chosen = n - 1;
        for (int i = 0; i < n; ++i) {
            acc += d2[i];
            if (acc >= u) {
                chosen = i;
                break;
            }
        }
        centers.row(c) = points.row(chosen);
    }
    return centers;
}

}  // namespace

Centroids kmeans(const Eigen::MatrixXd& points, int k, uint64_t seed, int max_iter,
                 double tol, int threads) {
    const int n = static_cast<int>(points.rows());
    if (k < 1) throw DataError("k must be >= 1");
    if (k > n) throw DataError("k exceeds the number of points");

    std::mt19937_64 rng(seed);
    Centroids result;
    result.centers = seed_plus_plus(points, k, rng);
    result.assignment.assign(n, 0);
    std::vector<double> distances(n, 0.0);

    Eigen::MatrixXd sums(k, points.cols());
    std::vector<int64_t> sizes(k);

    for (int iter = 0; iter < max_iter; ++iter) {
        assign_points(points, result.centers, result.assignment, distances, threads);

        // Re-seed any emptied cluster at the point farthest from its centroid.
        sizes.assign(k, 0);
        for (int i = 0; i < n; ++i) ++sizes[result.assignment[i]];
        std::vector<bool> taken(n, false);
        for (int c = 0; c < k; ++c) {
            if (sizes[c] > 0) continue;
            int farthest = -1;
            double best = -1.0;
            for (int i = 0; i < n; ++i) {
                if (taken[i] || sizes[result.assignment[i]] <= 1) continue;
                if (distances[i] > best) {
                    best = distances[i];
                    farthest = i;
                }
            }
            if (farthest < 0) continue;
            taken[farthest] = true;
            --sizes[result.assignment[farthest]];
            result.centers.row(c) = points.row(farthest);
            result.assignment[farthest] = c;
            distances[farthest] = 0.0;
            sizes[c] = 1;
        }

        result.inertia = 0.0;
        for (int i = 0; i < n; ++i) result.inertia += distances[i];
        result.inertia_history.push_back(result.inertia);

        sums.setZero();
        for (int i = 0; i < n; ++i) sums.row(result.assignment[i]) += points.row(i);
        double shift = 0.0;
        for (int c = 0; c < k; ++c) {
            if (sizes[c] == 0) continue;  // nothing left to re-seed it with
            Eigen::RowVectorXd mean = sums.row(c) / static_cast<double>(sizes[c]);
            shift = std::max(shift, (mean - result.centers.row(c)).norm());
            result.centers.row(c) = mean;
        }
        if (shift < tol) break;
    }

    // Final assignment against the converged centers.
    assign_points(points, result.centers, result.assignment, distances, threads);
    result.inertia = 0.0;
    for (int i = 0; i < n; ++i) result.inertia += distances[i];
    return result;
}

Centroids cluster_embeddings(const EmbeddingMatrix& embeddings, int k, uint64_t seed,
                             int max_iter, double tol, int threads) {
    const int content = embeddings.size() - kNumSpecialTokens;
    if (content < 1) throw DataError("no content words to cluster");
    if (k > content) {
        throw DataError("k exceeds the number of non-special vocabulary words");
    }
    Eigen::MatrixXd points = embeddings.vectors.bottomRows(content);
    return kmeans(points, k, seed, max_iter, tol, threads);
}

}  // namespace aspex
