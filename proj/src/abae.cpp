#include "aspex/abae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "aspex/rng.hpp"

namespace aspex {

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    Eigen::VectorXd out = (logits.array() - logits.maxCoeff()).exp();
    return out / out.sum();
}

std::string sentence_label(std::span<const int> ids) {
    std::string s = "[";
    for (size_t i = 0; i < ids.size() && i < 6; ++i) {
        if (i) s += ' ';
        s += std::to_string(ids[i]);
    }
    if (ids.size() > 6) s += " ...";
    return s + "]";
}

Eigen::MatrixXd word_matrix(const AbaeModel& model, std::span<const int> ids) {
    Eigen::MatrixXd x(ids.size(), model.dim());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= model.embeddings.size()) {
            throw DataError("token id out of vocabulary range: " + std::to_string(ids[i]));
        }
        x.row(i) = model.embeddings.vectors.row(ids[i]);
    }
    return x;
}

Eigen::VectorXd mean_embedding(const AbaeModel& model, std::span<const int> ids) {
    if (ids.empty()) throw DataError("empty sentence");
    Eigen::VectorXd y = Eigen::VectorXd::Zero(model.dim());
    for (int id : ids) {
        if (id < 0 || id >= model.embeddings.size()) {
            throw DataError("token id out of vocabulary range: " + std::to_string(id));
        }
        y += model.embeddings.vectors.row(id).transpose();
    }
    return y / static_cast<double>(ids.size());
}

// d(x/|x|) backprop: given g = dL/d(x_hat), returns dL/dx.
Eigen::VectorXd normalize_backprop(const Eigen::VectorXd& unit, double norm,
                                   const Eigen::VectorXd& g) {
    return (g - unit.dot(g) * unit) / norm;
}

}  // namespace

ForwardTrace forward(const AbaeModel& model, std::span<const int> ids) {
    if (ids.empty()) throw DataError("forward pass on an empty sentence");
    const Eigen::MatrixXd x = word_matrix(model, ids);

    ForwardTrace t;
    t.mean_embedding = x.colwise().mean().transpose();
    Eigen::VectorXd logits = x * (model.attention * t.mean_embedding);
    t.attention_weights = softmax(logits);
    t.sentence_embedding = x.transpose() * t.attention_weights;
    t.aspect_weights =
        softmax(model.aspect_logit_w * t.sentence_embedding + model.aspect_logit_b);
    t.reconstruction = model.aspect_embeddings.transpose() * t.aspect_weights;

    if (!t.reconstruction.allFinite() || !t.attention_weights.allFinite()) {
        throw NumericError("non-finite forward pass on sentence " + sentence_label(ids));
    }
    return t;
}

void AbaeGradients::set_zero(int dim, int k) {
    attention.setZero(dim, dim);
    aspect_logit_w.setZero(k, dim);
    aspect_logit_b.setZero(k);
    aspect_embeddings.setZero(k, dim);
    embedding_rows.clear();
}

void AbaeGradients::accumulate(const AbaeGradients& other, double scale) {
    attention += scale * other.attention;
    aspect_logit_w += scale * other.aspect_logit_w;
    aspect_logit_b += scale * other.aspect_logit_b;
    aspect_embeddings += scale * other.aspect_embeddings;
    for (const auto& [id, g] : other.embedding_rows) {
        auto [it, fresh] = embedding_rows.try_emplace(id, scale * g);
        if (!fresh) it->second += scale * g;
    }
}

double ortho_penalty(const Eigen::MatrixXd& aspect_embeddings) {
    const int k = static_cast<int>(aspect_embeddings.rows());
    Eigen::MatrixXd tn = aspect_embeddings;
    for (int c = 0; c < k; ++c) {
        double norm = tn.row(c).norm();
        if (norm == 0.0) throw NumericError("aspect row " + std::to_string(c) + " has zero norm");
        tn.row(c) /= norm;
    }
    Eigen::MatrixXd gram = tn * tn.transpose();
    gram.diagonal().array() -= 1.0;
    return gram.squaredNorm();
}

namespace {

// Adds lambda * dP/dT for P = ||Tn Tn' - I||_F^2 into grad; returns P.
double ortho_penalty_grad(const Eigen::MatrixXd& t, double lambda, Eigen::MatrixXd* grad) {
    const int k = static_cast<int>(t.rows());
    Eigen::MatrixXd tn = t;
    Eigen::VectorXd norms(k);
    for (int c = 0; c < k; ++c) {
        norms[c] = tn.row(c).norm();
        if (norms[c] == 0.0) {
            throw NumericError("aspect row " + std::to_string(c) + " has zero norm");
        }
        tn.row(c) /= norms[c];
    }
    Eigen::MatrixXd gram = tn * tn.transpose();
    gram.diagonal().array() -= 1.0;
    const double penalty = gram.squaredNorm();
    if (grad && lambda != 0.0) {
        Eigen::MatrixXd dtn = 4.0 * gram * tn;  // gram already symmetric
        for (int c = 0; c < k; ++c) {
            Eigen::VectorXd row_grad = normalize_backprop(
                tn.row(c).transpose(), norms[c], dtn.row(c).transpose());
            grad->row(c) += lambda * row_grad.transpose();
        }
    }
    return penalty;
}

}  // namespace

double abae_loss(const AbaeModel& model, std::span<const int> sentence,
                 const std::vector<std::vector<int>>& negatives, double ortho_lambda,
                 bool fine_tune_embeddings, AbaeGradients* grads) {
    if (negatives.empty()) throw DataError("at least one negative sentence is required");
    const int d = model.dim();
    const int n = static_cast<int>(sentence.size());

    const Eigen::MatrixXd x = word_matrix(model, sentence);
    const Eigen::VectorXd y = x.colwise().mean().transpose();
    const Eigen::VectorXd att_key = model.attention * y;
    const Eigen::VectorXd logits = x * att_key;
    const Eigen::VectorXd a = softmax(logits);
    const Eigen::VectorXd z = x.transpose() * a;
    const Eigen::VectorXd u = model.aspect_logit_w * z + model.aspect_logit_b;
    const Eigen::VectorXd p = softmax(u);
    const Eigen::VectorXd r = model.aspect_embeddings.transpose() * p;

    const double z_norm = z.norm();
    if (z_norm == 0.0) {
        throw NumericError("zero-norm sentence embedding for sentence " +
                           sentence_label(sentence));
    }
    const double r_norm = r.norm();
    if (r_norm == 0.0) {
        throw NumericError("zero-norm reconstruction for sentence " +
                           sentence_label(sentence));
    }
    const Eigen::VectorXd z_hat = z / z_norm;
    const Eigen::VectorXd r_hat = r / r_norm;

    double loss = 0.0;
    Eigen::VectorXd d_r_hat = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd d_z_hat = Eigen::VectorXd::Zero(d);
    std::vector<Eigen::VectorXd> neg_units;
    std::vector<double> neg_norms;
    std::vector<char> neg_active;
    neg_units.reserve(negatives.size());

    const double pos_sim = r_hat.dot(z_hat);
    for (const std::vector<int>& neg : negatives) {
        Eigen::VectorXd v = mean_embedding(model, neg);
        const double v_norm = v.norm();
        if (v_norm == 0.0) {
            throw NumericError("zero-norm negative sentence " +
                               sentence_label(std::span<const int>(neg)));
        }
        v /= v_norm;
        const double margin = 1.0 - pos_sim + r_hat.dot(v);
        const bool active = margin > 0.0;
        if (active) {
            loss += margin;
            d_r_hat += v - z_hat;
            d_z_hat -= r_hat;
        }
        neg_units.push_back(std::move(v));
        neg_norms.push_back(v_norm);
        neg_active.push_back(active ? 1 : 0);
    }

    if (grads) {
        const Eigen::VectorXd d_r = normalize_backprop(r_hat, r_norm, d_r_hat);
        Eigen::VectorXd d_z = normalize_backprop(z_hat, z_norm, d_z_hat);

        // r = T' p
        grads->aspect_embeddings += p * d_r.transpose();
        const Eigen::VectorXd d_p = model.aspect_embeddings * d_r;

        // p = softmax(u)
        const Eigen::VectorXd d_u = p.cwiseProduct(
            d_p - Eigen::VectorXd::Constant(p.size(), p.dot(d_p)));

        // u = W z + b
        grads->aspect_logit_w += d_u * z.transpose();
        grads->aspect_logit_b += d_u;
        d_z += model.aspect_logit_w.transpose() * d_u;

        // z = X' a
        const Eigen::VectorXd d_a = x * d_z;

        // a = softmax(logits)
        const Eigen::VectorXd d_logits =
            a.cwiseProduct(d_a - Eigen::VectorXd::Constant(a.size(), a.dot(d_a)));

        // logits = X A y
        const Eigen::VectorXd xtdl = x.transpose() * d_logits;
        grads->attention += xtdl * y.transpose();

        if (fine_tune_embeddings) {
            const Eigen::VectorXd d_y = model.attention.transpose() * xtdl;
            // dX = a dz' + d_logits (A y)' + (1/n) 1 dy'
            Eigen::MatrixXd d_x = a * d_z.transpose();
            d_x += d_logits * att_key.transpose();
            d_x += Eigen::VectorXd::Constant(n, 1.0 / n) * d_y.transpose();
            for (int i = 0; i < n; ++i) {
                auto [it, fresh] =
                    grads->embedding_rows.try_emplace(sentence[i], d_x.row(i).transpose());
                if (!fresh) it->second += d_x.row(i).transpose();
            }
            for (size_t j = 0; j < negatives.size(); ++j) {
                if (!neg_active[j]) continue;
                const Eigen::VectorXd d_v =
                    normalize_backprop(neg_units[j], neg_norms[j], r_hat) /
                    static_cast<double>(negatives[j].size());
                for (int id : negatives[j]) {
                    auto [it, fresh] = grads->embedding_rows.try_emplace(id, d_v);
                    if (!fresh) it->second += d_v;
                }
            }
        }
    }

    if (ortho_lambda != 0.0) {
        loss += ortho_lambda *
                ortho_penalty_grad(model.aspect_embeddings, ortho_lambda,
                                   grads ? &grads->aspect_embeddings : nullptr);
    }

    if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss on sentence " + sentence_label(sentence));
    }
    return loss;
}

AbaeModel init_abae(EmbeddingMatrix embeddings, const AbaeTrainConfig& config) {
    if (config.num_aspects < 2) throw DataError("at least 2 aspects are required");
    const int d = embeddings.dim();
    const int k = config.num_aspects;

    std::mt19937_64 rng(config.seed);
    const uint64_t kmeans_seed = rng();

    AbaeModel model;
    Centroids centroids = cluster_embeddings(embeddings, k, kmeans_seed,
                                             config.kmeans_max_iter, config.kmeans_tol);
    model.embeddings = std::move(embeddings);
    model.aspect_embeddings = centroids.centers;
    model.attention = Eigen::MatrixXd::Identity(d, d);

    const double bound = std::sqrt(6.0 / static_cast<double>(k + d));
    model.aspect_logit_w.resize(k, d);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < d; ++j) {
            model.aspect_logit_w(i, j) = (2.0 * uniform_double(rng) - 1.0) * bound;
        }
    }
    model.aspect_logit_b = Eigen::VectorXd::Zero(k);
    return model;
}

namespace {

// Adam with bias correction; embeddings get row-sparse updates.
struct AdamState {
    Eigen::MatrixXd m, v;
    void init(int rows, int cols) {
        m.setZero(rows, cols);
        v.setZero(rows, cols);
    }
    void step(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, double lr, double t) {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
        const double corr = lr * std::sqrt(1.0 - std::pow(b2, t)) / (1.0 - std::pow(b1, t));
        param.array() -= corr * (m.array() / (v.array().sqrt() + eps));
    }
    void step_row(Eigen::MatrixXd& param, int row, const Eigen::VectorXd& grad, double lr,
                  double t) {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        m.row(row) = b1 * m.row(row) + (1.0 - b1) * grad.transpose();
        v.row(row) =
            b2 * v.row(row) + (1.0 - b2) * grad.cwiseProduct(grad).transpose();
        const double corr = lr * std::sqrt(1.0 - std::pow(b2, t)) / (1.0 - std::pow(b1, t));
        param.row(row).array() -=
            corr * (m.row(row).array() / (v.row(row).array().sqrt() + eps));
    }
};

}  // namespace

AbaeTrainResult train_abae(AbaeModel& model, const SentenceDataset& dataset,
                           const AbaeTrainConfig& config) {
    if (dataset.empty()) throw DataError("cannot train on an empty dataset");
    if (config.negatives < 1) throw DataError("at least one negative sample is required");
    if (dataset.vocab && model.embeddings.vocab &&
        dataset.vocab->content_hash() != model.embeddings.vocab->content_hash()) {
        throw DataError("dataset vocabulary does not match the embedding vocabulary");
    }

    const Vocabulary& vocab = *model.embeddings.vocab;
    std::vector<std::vector<int>> corpus;
    corpus.reserve(dataset.size());
    for (const Sentence& s : dataset.sentences) {
        std::vector<int> ids = token_ids(s, vocab);
        if (static_cast<int>(ids.size()) > config.max_sentence_tokens) {
            ids.resize(config.max_sentence_tokens);
        }
        corpus.push_back(std::move(ids));
    }
    const size_t n = corpus.size();
    if (n < static_cast<size_t>(config.batch_size)) {
        std::cerr << "[abae] dataset (" << n << " sentences) smaller than batch size "
                  << config.batch_size << "; training with one smaller batch per epoch\n";
    }

    std::mt19937_64 rng(config.seed);
    const int d = model.dim();
    const int k = model.num_aspects();

    AdamState adam_a, adam_w, adam_b, adam_t, adam_e;
    adam_a.init(d, d);
    adam_w.init(k, d);
    adam_b.init(k, 1);
    adam_t.init(k, d);
    if (config.fine_tune_embeddings) adam_e.init(model.embeddings.size(), d);

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    AbaeTrainResult result;
    AbaeGradients batch_grads, sentence_grads;
    double adam_step = 0.0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (size_t i = n; i > 1; --i) {
            std::swap(order[i - 1], order[uniform_index(rng, i)]);
        }
        double epoch_loss_sum = 0.0;

        for (size_t start = 0; start < n; start += config.batch_size) {
            const size_t end = std::min(n, start + config.batch_size);
            const double batch = static_cast<double>(end - start);

            std::vector<std::vector<int>> negatives;
            negatives.reserve(config.negatives);
            for (int j = 0; j < config.negatives; ++j) {
                negatives.push_back(corpus[uniform_index(rng, n)]);
            }

            batch_grads.set_zero(d, k);
            double batch_loss = 0.0;
            for (size_t i = start; i < end; ++i) {
                sentence_grads.set_zero(d, k);
                batch_loss += abae_loss(model, corpus[order[i]], negatives, 0.0,
                                        config.fine_tune_embeddings, &sentence_grads);
                batch_grads.accumulate(sentence_grads, 1.0 / batch);
            }
            batch_loss /= batch;
            batch_loss += ortho_penalty_grad(model.aspect_embeddings, config.ortho_lambda,
                                             &batch_grads.aspect_embeddings);

            adam_step += 1.0;
            adam_a.step(model.attention, batch_grads.attention, config.learning_rate,
                        adam_step);
            adam_w.step(model.aspect_logit_w, batch_grads.aspect_logit_w,
                        config.learning_rate, adam_step);
            Eigen::MatrixXd b_mat = model.aspect_logit_b;
            adam_b.step(b_mat, batch_grads.aspect_logit_b, config.learning_rate, adam_step);
            model.aspect_logit_b = b_mat;
            adam_t.step(model.aspect_embeddings, batch_grads.aspect_embeddings,
                        config.learning_rate, adam_step);
            if (config.fine_tune_embeddings) {
                std::vector<int> touched;
                touched.reserve(batch_grads.embedding_rows.size());
                for (const auto& [id, g] : batch_grads.embedding_rows) touched.push_back(id);
                std::sort(touched.begin(), touched.end());
                for (int id : touched) {
                    if (id == kPadId) continue;
                    adam_e.step_row(model.embeddings.vectors, id,
                                    batch_grads.embedding_rows.at(id), config.learning_rate,
                                    adam_step);
                }
            }
            epoch_loss_sum += batch_loss * batch;
        }
        result.epoch_loss.push_back(epoch_loss_sum / static_cast<double>(n));
    }
    return result;
}

std::vector<std::string> AspectTable::words_of(int aspect_id) const {
    std::vector<std::pair<int, std::string>> ranked;
    for (const Entry& e : entries) {
        if (e.aspect_id == aspect_id) ranked.emplace_back(e.rank, e.word);
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<std::string> words;
    words.reserve(ranked.size());
    for (auto& [rank, word] : ranked) words.push_back(std::move(word));
    return words;
}

AspectTable extract_aspects(const AbaeModel& model, int top_n) {
    const Vocabulary& vocab = *model.embeddings.vocab;
    const int content = vocab.size() - kNumSpecialTokens;
    if (top_n < 1) throw DataError("top_n must be >= 1");
    if (top_n > content) {
        throw DataError("top_n exceeds the number of non-special vocabulary words");
    }

    AspectTable table;
    table.num_aspects = model.num_aspects();
    table.top_n = top_n;
    for (int aspect = 0; aspect < model.num_aspects(); ++aspect) {
        const Eigen::VectorXd row = model.aspect_embeddings.row(aspect).transpose();
        const double row_norm = row.norm();
        if (row_norm == 0.0) {
            throw NumericError("aspect row " + std::to_string(aspect) + " has zero norm");
        }
        std::vector<std::pair<double, int>> scored;  // (-cosine, id) for stable sort
        scored.reserve(content);
        for (int id = kNumSpecialTokens; id < vocab.size(); ++id) {
            const double norm = model.embeddings.vectors.row(id).norm();
            const double cosine =
                norm == 0.0
                    ? -2.0
                    : model.embeddings.vectors.row(id).dot(row) / (norm * row_norm);
            scored.emplace_back(-cosine, id);
        }
        std::partial_sort(scored.begin(), scored.begin() + top_n, scored.end());
        for (int rank = 0; rank < top_n; ++rank) {
            table.entries.push_back(
                {aspect, rank, vocab.token(scored[rank].second), -scored[rank].first});
        }
    }
    return table;
}

std::pair<int, Eigen::VectorXd> assign_aspect(const AbaeModel& model,
                                              std::span<const int> ids) {
    ForwardTrace t = forward(model, ids);
    int best = 0;
    for (int i = 1; i < t.aspect_weights.size(); ++i) {
        if (t.aspect_weights[i] > t.aspect_weights[best]) best = i;
    }
    return {best, std::move(t.aspect_weights)};
}

void write_aspect_table(const AspectTable& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write aspect table: " + path.string());
    char buf[32];
    for (const AspectTable::Entry& e : table.entries) {
        std::snprintf(buf, sizeof(buf), "%.6f", e.score);
        out << e.aspect_id << '\t' << e.rank << '\t' << e.word << '\t' << buf << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

AspectTable read_aspect_table(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read aspect table: " + path.string());
    AspectTable table;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        AspectTable::Entry e;
        if (!(ls >> e.aspect_id >> e.rank >> e.word >> e.score)) {
            throw DataError(path.string() + ": line " + std::to_string(line_no) +
                            ": bad aspect row");
        }
        table.num_aspects = std::max(table.num_aspects, e.aspect_id + 1);
        table.top_n = std::max(table.top_n, e.rank + 1);
        table.entries.push_back(std::move(e));
    }
    if (table.entries.empty()) throw DataError(path.string() + ": empty aspect table");
    return table;
}

namespace {

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
    char buf[40];
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
            out << (j ? " " : "") << buf;
        }
        out << '\n';
    }
}

void read_matrix(std::istream& in, Eigen::MatrixXd& m, const std::string& what) {
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) {
            if (!(in >> m(i, j))) throw DataError("truncated " + what + " block");
        }
    }
}

}  // namespace

void save_abae(const AbaeModel& model, const std::filesystem::path& path,
               const std::string& embeddings_ref, const AbaeTrainConfig& config) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write model file: " + path.string());
    out << "#aspex-abae-model v1\n";
    out << "#shape " << model.dim() << ' ' << model.num_aspects() << ' '
        << model.embeddings.size() << '\n';
    out << "#embeddings " << embeddings_ref << '\n';
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", config.ortho_lambda);
    out << "#config negatives=" << config.negatives << " epochs=" << config.epochs
        << " batch=" << config.batch_size << " ortho=" << buf
        << " lr=" << config.learning_rate << " seed=" << config.seed
        << " fine_tune=" << (config.fine_tune_embeddings ? 1 : 0) << '\n';
    out << "#attention\n";
    write_matrix(out, model.attention);
    out << "#aspect_logit_w\n";
    write_matrix(out, model.aspect_logit_w);
    out << "#aspect_logit_b\n";
    write_matrix(out, model.aspect_logit_b.transpose());
    out << "#aspect_embeddings\n";
    write_matrix(out, model.aspect_embeddings);
    if (!out) throw DataError("write failed: " + path.string());
}

AbaeModel load_abae(const std::filesystem::path& path, EmbeddingMatrix embeddings) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read model file: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "#aspex-abae-model v1") {
        throw DataError(path.string() + ": not an abae model file");
    }
    int d = 0, k = 0, v = 0;
    AbaeModel model;
    while (std::getline(in, line)) {
        if (line.rfind("#shape ", 0) == 0) {
            std::istringstream ls(line.substr(7));
            ls >> d >> k >> v;
            if (d <= 0 || k <= 0 || v <= 0) throw DataError(path.string() + ": bad shape line");
            if (v != embeddings.size() || d != embeddings.dim()) {
                throw DataError(path.string() + ": embedding shape mismatch");
            }
            model.attention.resize(d, d);
            model.aspect_logit_w.resize(k, d);
            model.aspect_logit_b.resize(k);
            model.aspect_embeddings.resize(k, d);
        } else if (line == "#attention") {
            read_matrix(in, model.attention, "attention");
        } else if (line == "#aspect_logit_w") {
            read_matrix(in, model.aspect_logit_w, "aspect_logit_w");
        } else if (line == "#aspect_logit_b") {
            Eigen::MatrixXd b(1, k);
            read_matrix(in, b, "aspect_logit_b");
            model.aspect_logit_b = b.transpose();
        } else if (line == "#aspect_embeddings") {
            read_matrix(in, model.aspect_embeddings, "aspect_embeddings");
        }
    }
    if (model.attention.size() == 0) throw DataError(path.string() + ": missing shape line");
    model.embeddings = std::move(embeddings);
    return model;
}

}  // namespace aspex
