#include "aspex/oodfilter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "aspex/parallel.hpp"
#include "json.hpp"

namespace aspex {

namespace {

double sigmoid(double t) {
    if (t >= 0) {
        return 1.0 / (1.0 + std::exp(-t));
    }
    double e = std::exp(t);
    return e / (1.0 + e);
}

// log(1 + exp(t)) without overflow
double log1pexp(double t) {
    if (t > 0) return t + std::log1p(std::exp(-t));
    return std::log1p(std::exp(t));
}

}  // namespace

int BowVector::count(int feature_id) const {
    auto it = std::lower_bound(counts.begin(), counts.end(), feature_id,
                               [](const auto& p, int id) { return p.first < id; });
    if (it == counts.end() || it->first != feature_id) return 0;
    return it->second;
}

BowVector featurize(const Sentence& sentence, const Vocabulary& feature_vocab) {
    std::map<int, int> acc;
    for (const std::string& t : sentence.tokens) {
        if (auto id = feature_vocab.find(t)) ++acc[*id];
    }
    BowVector x;
    x.counts.assign(acc.begin(), acc.end());
    return x;
}

OodModel::OodModel(std::shared_ptr<const Vocabulary> features, Eigen::VectorXd weights,
                   double bias, double l2, int iterations_run, int64_t n_id, int64_t n_ood)
    : features_(std::move(features)),
      weights_(std::move(weights)),
      bias_(bias),
      l2_(l2),
      iterations_run_(iterations_run),
      n_id_(n_id),
      n_ood_(n_ood) {}

double OodModel::score(const BowVector& x) const {
    double t = bias_;
    for (const auto& [id, count] : x.counts) t += weights_[id] * count;
    return sigmoid(t);
}

double OodModel::score(const Sentence& sentence) const {
    return score(featurize(sentence, *features_));
}

double logistic_loss(const std::vector<BowVector>& xs, const std::vector<int>& labels,
                     const Eigen::VectorXd& w, double b, double l2,
                     Eigen::VectorXd* grad_w, double* grad_b) {
    const double n = static_cast<double>(xs.size());
    if (grad_w) grad_w->setZero(w.size());
    if (grad_b) *grad_b = 0.0;
    double loss = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        double f = b;
        for (const auto& [id, count] : xs[i].counts) f += w[id] * count;
        const double y = labels[i];
        loss += log1pexp(-y * f);
        if (grad_w) {
            const double g = -y * sigmoid(-y * f);
            for (const auto& [id, count] : xs[i].counts) (*grad_w)[id] += g * count;
            *grad_b += g;
        }
    }
    loss = loss / n + 0.5 * l2 * w.squaredNorm() / n;
    if (grad_w) {
        *grad_w = (*grad_w + l2 * w) / n;
        *grad_b /= n;
    }
    return loss;
}

namespace {

std::shared_ptr<const Vocabulary> build_feature_vocab(const SentenceDataset& id_sentences,
                                                      const SentenceDataset& ood_sentences) {
    std::unordered_map<std::string, int64_t> counts;
    for (const SentenceDataset* d : {&id_sentences, &ood_sentences}) {
        for (const Sentence& s : d->sentences) {
            for (const std::string& t : s.tokens) ++counts[t];
        }
    }
    auto vocab = std::make_shared<Vocabulary>();
    vocab->set_min_count(1);
    if (auto it = counts.find(kUnkToken); it != counts.end())
        vocab->add_frequency(kUnkId, it->second);
    if (auto it = counts.find(kNumToken); it != counts.end())
        vocab->add_frequency(kNumId, it->second);
    std::vector<std::pair<std::string, int64_t>> kept;
    kept.reserve(counts.size());
    for (const auto& [token, freq] : counts) {
        if (token == kPadToken || token == kUnkToken || token == kNumToken) continue;
        kept.emplace_back(token, freq);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (const auto& [token, freq] : kept) vocab->insert(token, freq);
    return vocab;
}

}  // namespace

OodModel train_ood(const SentenceDataset& id_sentences, const SentenceDataset& ood_sentences,
                   const OodTrainConfig& config, std::vector<double>* loss_history) {
    if (id_sentences.empty()) throw DataError("in-domain training set is empty");
    if (ood_sentences.empty()) throw DataError("out-of-domain training set is empty");
    if (config.max_iter < 1) throw DataError("max_iter must be >= 1");

    auto vocab = build_feature_vocab(id_sentences, ood_sentences);

    const size_t n_id = id_sentences.size();
    const size_t n = n_id + ood_sentences.size();
    std::vector<BowVector> xs;
    xs.reserve(n);
    std::vector<int> labels;
    labels.reserve(n);
    for (const Sentence& s : id_sentences.sentences) {
        xs.push_back(featurize(s, *vocab));
        labels.push_back(+1);
    }
    for (const Sentence& s : ood_sentences.sentences) {
        xs.push_back(featurize(s, *vocab));
        labels.push_back(-1);
    }

    const int dim = vocab->size();
    const double inv_n = 1.0 / static_cast<double>(n);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(dim);
    double b = 0.0;
    // Margins f_i = w.x_i + b, kept in sync with (w, b).
    Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
    double w_sq = 0.0;

    auto data_loss = [&](const Eigen::VectorXd& margins) {
        double loss = 0.0;
        for (size_t i = 0; i < n; ++i) loss += log1pexp(-labels[i] * margins[i]);
        return loss * inv_n;
    };

    double loss = data_loss(f) + 0.5 * config.l2 * w_sq * inv_n;
    if (!std::isfinite(loss)) throw NumericError("non-finite initial logistic loss");

    Eigen::VectorXd grad(dim), direction(dim), step_margins(n), trial(n);
    double step = 1.0;
    int iterations = 0;
    for (int iter = 0; iter < config.max_iter; ++iter) {
        grad.setZero();
        double grad_b = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double g = -labels[i] * sigmoid(-labels[i] * f[i]);
            for (const auto& [id, count] : xs[i].counts) grad[id] += g * count;
            grad_b += g;
        }
        grad = (grad + config.l2 * w) * inv_n;
        grad_b *= inv_n;

        const double grad_norm = std::sqrt(grad.squaredNorm() + grad_b * grad_b);
        if (grad_norm <= config.tol) break;

        direction = -grad;
        const double dir_b = -grad_b;
        for (size_t i = 0; i < n; ++i) {
            double m = dir_b;
            for (const auto& [id, count] : xs[i].counts) m += direction[id] * count;
            step_margins[i] = m;
        }
        const double w_dot_d = w.dot(direction);
        const double d_sq = direction.squaredNorm();
        const double slope = -(grad_norm * grad_norm);  // directional derivative

        double t = std::min(step * 2.0, 1e6);
        double new_loss = loss;
        bool accepted = false;
        for (int back = 0; back < 60; ++back) {
            trial = f + t * step_margins;
            const double reg = 0.5 * config.l2 * (w_sq + 2.0 * t * w_dot_d + t * t * d_sq) * inv_n;
            new_loss = data_loss(trial) + reg;
            if (std::isfinite(new_loss) && new_loss <= loss + 1e-4 * t * slope) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) break;  // step underflow: as converged as line search allows

        w += t * direction;
        b += t * dir_b;
        w_sq = w.squaredNorm();
        f = trial;
        loss = new_loss;
        step = t;
        ++iterations;
        if (!std::isfinite(loss)) throw NumericError("non-finite logistic loss");
        if (loss_history) loss_history->push_back(loss);
    }

    OodModel model(vocab, std::move(w), b, config.l2, iterations,
                   static_cast<int64_t>(n_id), static_cast<int64_t>(ood_sentences.size()));

    int64_t tp = 0, fp = 0, fn = 0, correct = 0;
    for (size_t i = 0; i < n; ++i) {
        const bool predicted_id = sigmoid(f[i]) >= 0.5;
        const bool is_id = labels[i] > 0;
        if (predicted_id && is_id) ++tp;
        if (predicted_id && !is_id) ++fp;
        if (!predicted_id && is_id) ++fn;
        if (predicted_id == is_id) ++correct;
    }
    OodMetrics metrics;
    metrics.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    metrics.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    metrics.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    model.set_train_metrics(metrics);
    return model;
}

std::vector<double> score_dataset(const SentenceDataset& dataset, const OodModel& model,
                                  int threads) {
    std::vector<double> scores(dataset.size());
    parallel_for(dataset.size(), threads, [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            scores[i] = model.score(dataset.sentences[i]);
        }
    });
    return scores;
}

FilterResult filter_scored(const SentenceDataset& dataset, const std::vector<double>& scores,
                           double theta) {
    if (theta < 0.0 || theta >= 1.0) {
        throw DataError("threshold must lie in [0, 1)");
    }
    FilterResult result;
    result.total = dataset.size();
    result.dataset.source = dataset.source;
    result.dataset.vocab = dataset.vocab;
    for (size_t i = 0; i < dataset.size(); ++i) {
        if (scores[i] >= theta) {
            result.dataset.sentences.push_back(dataset.sentences[i]);
        }
    }
    result.kept = result.dataset.size();
    result.retention = result.total == 0
                           ? 1.0
                           : static_cast<double>(result.kept) / static_cast<double>(result.total);
    return result;
}

FilterResult filter_dataset(const SentenceDataset& dataset, const OodModel& model,
                            double theta, int threads) {
    return filter_scored(dataset, score_dataset(dataset, model, threads), theta);
}

void write_scored_dataset(const SentenceDataset& dataset, const std::vector<double>& scores,
                          std::ostream& out) {
    char buf[32];
    for (size_t i = 0; i < dataset.size(); ++i) {
        const Sentence& s = dataset.sentences[i];
        nlohmann::ordered_json j;
        j["sent_id"] = s.sent_id;
        j["doc_id"] = s.doc_id;
        j["domain"] = s.domain;
        j["tokens"] = s.tokens;
        std::string line = j.dump();
        std::snprintf(buf, sizeof(buf), "%.6f", scores[i]);
        line.back() = ',';  // replace closing brace
        out << line << "\"score\":" << buf << "}\n";
    }
}

void write_scored_dataset(const SentenceDataset& dataset, const std::vector<double>& scores,
                          const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write scored dataset: " + path.string());
    write_scored_dataset(dataset, scores, out);
    if (!out) throw DataError("write failed: " + path.string());
}

void OodModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write model file: " + path.string());
    char buf[64];
    out << "#aspex-ood-model v1\n";
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(features_->content_hash()));
    out << "#features " << buf << " " << features_->size() << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", bias_);
    out << "#bias " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", l2_);
    out << "#l2 " << buf << "\n";
    out << "#iterations " << iterations_run_ << "\n";
    out << "#classes " << n_id_ << " " << n_ood_ << "\n";
    for (int i = 0; i < weights_.size(); ++i) {
        if (weights_[i] == 0.0) continue;
        std::snprintf(buf, sizeof(buf), "%.17g", weights_[i]);
        out << i << '\t' << buf << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

OodModel OodModel::load(const std::filesystem::path& path,
                        std::shared_ptr<const Vocabulary> features) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read model file: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "#aspex-ood-model v1") {
        throw DataError(path.string() + ": not an ood model file");
    }
    uint64_t hash = 0;
    int size = 0;
    double bias = 0.0, l2 = 1.0;
    int iterations = 0;
    int64_t n_id = 0, n_ood = 0;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(features->size());
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        if (line[0] == '#') {
            std::string key;
            ls >> key;
            if (key == "#features") {
                std::string hex;
                ls >> hex >> size;
                hash = std::stoull(hex, nullptr, 16);
            } else if (key == "#bias") {
                ls >> bias;
            } else if (key == "#l2") {
                ls >> l2;
            } else if (key == "#iterations") {
                ls >> iterations;
            } else if (key == "#classes") {
                ls >> n_id >> n_ood;
            }
            continue;
        }
        int id;
        double weight;
        if (!(ls >> id >> weight) || id < 0 || id >= features->size()) {
            throw DataError(path.string() + ": line " + std::to_string(line_no) +
                            ": bad weight row");
        }
        w[id] = weight;
    }
    if (hash != features->content_hash() || size != features->size()) {
        throw DataError(path.string() + ": feature vocabulary does not match the model");
    }
    return OodModel(std::move(features), std::move(w), bias, l2, iterations, n_id, n_ood);
}

}  // namespace aspex
