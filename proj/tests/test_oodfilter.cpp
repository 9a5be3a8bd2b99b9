#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <sstream>

#include "aspex/oodfilter.hpp"
#include "doctest.h"

using namespace aspex;
namespace fs = std::filesystem;

namespace {

Sentence make_sentence(const std::string& id, std::vector<std::string> tokens) {
    return Sentence{id, id, "g", std::move(tokens)};
}

SentenceDataset dataset_of(std::vector<std::vector<std::string>> rows, const std::string& tag) {
    SentenceDataset d;
    d.source = tag;
    int i = 0;
    for (auto& tokens : rows) {
        d.sentences.push_back(make_sentence(tag + "#" + std::to_string(i++), std::move(tokens)));
    }
    return d;
}

std::shared_ptr<Vocabulary> vocab_of(const std::vector<std::string>& tokens) {
    auto v = std::make_shared<Vocabulary>();
    for (const auto& t : tokens) v->insert(t, 1);
    return v;
}

}  // namespace

TEST_SUITE_BEGIN("oodfilter");

TEST_CASE("featurize counts in-vocabulary tokens") {
    auto vocab = vocab_of({"a", "b"});
    BowVector x = featurize(make_sentence("s", {"a", "b", "a"}), *vocab);
    CHECK(x.count(vocab->id("a")) == 2);
    CHECK(x.count(vocab->id("b")) == 1);

    BowVector oov = featurize(make_sentence("s", {"c"}), *vocab);
    CHECK(oov.empty());

    auto five = vocab_of({"open", "look", "power", "amp", "ic"});
    BowVector unit = featurize(make_sentence("s", {"open", "look", "power", "amp", "ic"}), *five);
    CHECK(unit.counts.size() == 5);
    for (const auto& [id, count] : unit.counts) CHECK(count == 1);
}

TEST_CASE("score with zero weights and bias is one half") {
    auto vocab = vocab_of({"a"});
    OodModel model(vocab, Eigen::VectorXd::Zero(vocab->size()), 0.0, 1.0, 0, 1, 1);
    CHECK(model.score(make_sentence("s", {"a", "a"})) == doctest::Approx(0.5));
}

TEST_CASE("score matches a hand-evaluated sigmoid") {
    auto vocab = vocab_of({"a", "b", "c"});
    Eigen::VectorXd w = Eigen::VectorXd::Zero(vocab->size());
    w[vocab->id("a")] = std::log(2.0);
    w[vocab->id("b")] = -std::log(2.0);
    OodModel model(vocab, w, 0.0, 1.0, 0, 1, 1);
    // [a, a, b]: margin = 2 ln 2 - ln 2 = ln 2, sigmoid(ln 2) = 2/3
    CHECK(model.score(make_sentence("s", {"a", "a", "b"})) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("score is invariant to token order") {
    auto vocab = vocab_of({"x", "y", "z"});
    Eigen::VectorXd w(vocab->size());
    w << 0.0, -0.3, 0.2, 0.7, -1.1, 0.05;
    OodModel model(vocab, w, 0.2, 1.0, 0, 1, 1);
    std::vector<std::string> tokens = {"x", "y", "z", "x", "y"};
    double reference = model.score(make_sentence("s", tokens));
    std::mt19937 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        std::shuffle(tokens.begin(), tokens.end(), rng);
        CHECK(model.score(make_sentence("s", tokens)) == doctest::Approx(reference).epsilon(1e-12));
    }
}

TEST_CASE("training separates a separable toy set perfectly") {
    SentenceDataset id = dataset_of({{"x"}, {"x", "x"}, {"x", "w"}, {"x"}}, "id");
    SentenceDataset ood = dataset_of({{"y"}, {"y", "y"}, {"y", "w"}, {"y"}}, "ood");
    std::vector<double> history;
    OodModel model = train_ood(id, ood, {}, &history);
    CHECK(model.train_metrics().accuracy == doctest::Approx(1.0));
    CHECK(model.train_metrics().precision == doctest::Approx(1.0));
    CHECK(model.train_metrics().recall == doctest::Approx(1.0));
    // Loss strictly decreases every accepted iteration.
    for (size_t i = 1; i < history.size(); ++i) CHECK(history[i] < history[i - 1]);
}

TEST_CASE("indistinguishable classes drive weights to zero and bias to log-odds") {
    // ID holds two copies of the corpus, OOD one copy: prior 2/3.
    SentenceDataset id = dataset_of({{"a", "b"}, {"b"}, {"a", "b"}, {"b"}}, "id");
    SentenceDataset ood = dataset_of({{"a", "b"}, {"b"}}, "ood");
    OodTrainConfig config;
    config.max_iter = 500;
    OodModel model = train_ood(id, ood, config);
    CHECK(model.bias() == doctest::Approx(std::log(2.0)).epsilon(1e-2));
    for (int i = 0; i < model.weights().size(); ++i) {
        CHECK(std::abs(model.weights()[i]) < 0.05);
    }
    double s = model.score(make_sentence("s", {"a", "b"}));
    CHECK(s == doctest::Approx(2.0 / 3.0).epsilon(1e-2));
    CHECK(model.train_metrics().accuracy == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("training is deterministic") {
    SentenceDataset id = dataset_of({{"u", "v"}, {"u"}, {"u", "w"}}, "id");
    SentenceDataset ood = dataset_of({{"p", "q"}, {"q"}, {"q", "w"}}, "ood");
    OodModel a = train_ood(id, ood);
    OodModel b = train_ood(id, ood);
    CHECK(a.bias() == b.bias());
    REQUIRE(a.weights().size() == b.weights().size());
    for (int i = 0; i < a.weights().size(); ++i) CHECK(a.weights()[i] == b.weights()[i]);
}

TEST_CASE("empty classes are rejected") {
    SentenceDataset id = dataset_of({{"a"}}, "id");
    SentenceDataset none;
    CHECK_THROWS_AS(train_ood(id, none), DataError);
    CHECK_THROWS_AS(train_ood(none, id), DataError);
}

TEST_CASE("logistic gradient matches central finite differences") {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> feat(0, 19);
    std::uniform_int_distribution<int> len(1, 8);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    std::vector<BowVector> xs;
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) {
        std::map<int, int> acc;
        int m = len(rng);
        for (int j = 0; j < m; ++j) ++acc[feat(rng)];
        BowVector x;
        x.counts.assign(acc.begin(), acc.end());
        xs.push_back(std::move(x));
        labels.push_back(i % 2 == 0 ? 1 : -1);
    }
    Eigen::VectorXd w(20);
    for (int i = 0; i < 20; ++i) w[i] = unit(rng);
    double b = unit(rng);

    Eigen::VectorXd grad;
    double grad_b = 0.0;
    logistic_loss(xs, labels, w, b, 0.7, &grad, &grad_b);

    const double h = 1e-5;
    auto relative_error = [](double a, double f) {
        return std::abs(a - f) / std::max({1e-8, std::abs(a), std::abs(f)});
    };
    for (int i = 0; i < 20; ++i) {
        Eigen::VectorXd wp = w, wm = w;
        wp[i] += h;
        wm[i] -= h;
        double fd = (logistic_loss(xs, labels, wp, b, 0.7) -
                     logistic_loss(xs, labels, wm, b, 0.7)) /
                    (2 * h);
        CHECK(relative_error(grad[i], fd) < 1e-5);
    }
    double fd_b = (logistic_loss(xs, labels, w, b + h, 0.7) -
                   logistic_loss(xs, labels, w, b - h, 0.7)) /
                  (2 * h);
    CHECK(relative_error(grad_b, fd_b) < 1e-5);
}

TEST_CASE("filter keeps scores above the threshold in order") {
    SentenceDataset d = dataset_of({{"a"}, {"b"}, {"c"}}, "d");
    FilterResult r = filter_scored(d, {0.9, 0.3, 0.6}, 0.5);
    REQUIRE(r.dataset.size() == 2);
    CHECK(r.dataset.sentences[0].sent_id == "d#0");
    CHECK(r.dataset.sentences[1].sent_id == "d#2");
    CHECK(r.retention == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("threshold zero is the identity") {
    SentenceDataset d = dataset_of({{"a", "b"}, {"b"}, {"c", "a"}}, "d");
    FilterResult r = filter_scored(d, {0.01, 0.99, 0.5}, 0.0);
    std::ostringstream before, after;
    write_dataset(d, before);
    write_dataset(r.dataset, after);
    CHECK(before.str() == after.str());
    CHECK(r.retention == doctest::Approx(1.0));
}

TEST_CASE("threshold outside [0,1) is rejected") {
    SentenceDataset d = dataset_of({{"a"}}, "d");
    CHECK_THROWS_AS(filter_scored(d, {0.5}, 1.0), DataError);
    CHECK_THROWS_AS(filter_scored(d, {0.5}, -0.1), DataError);
}

TEST_CASE("retention is monotone and filtered sets are nested") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 25; ++trial) {
        size_t n = 1 + static_cast<size_t>(rng() % 40);
        SentenceDataset d;
        std::vector<double> scores;
        for (size_t i = 0; i < n; ++i) {
            d.sentences.push_back(make_sentence("s#" + std::to_string(i), {"t"}));
            scores.push_back(unit(rng));
        }
        double t1 = unit(rng) * 0.99;
        double t2 = unit(rng) * 0.99;
        if (t1 > t2) std::swap(t1, t2);
        FilterResult low = filter_scored(d, scores, t1);
        FilterResult high = filter_scored(d, scores, t2);
        CHECK(high.retention <= low.retention);
        // Nesting: every id kept at the higher threshold is kept at the lower.
        size_t li = 0;
        bool nested = true;
        for (const Sentence& s : high.dataset.sentences) {
            while (li < low.dataset.size() && low.dataset.sentences[li].sent_id != s.sent_id) ++li;
            if (li == low.dataset.size()) {
                nested = false;
                break;
            }
        }
        CHECK(nested);
    }
}

TEST_CASE("model file round trip") {
    SentenceDataset id = dataset_of({{"volt", "amp"}, {"volt"}, {"ic", "amp"}}, "id");
    SentenceDataset ood = dataset_of({{"ball", "bat"}, {"bat"}, {"ball"}}, "ood");
    OodModel model = train_ood(id, ood);

    fs::path dir = fs::temp_directory_path() / "aspex_test_oodmodel";
    fs::create_directories(dir);
    model.save(dir / "model.tsv");
    OodModel loaded = OodModel::load(dir / "model.tsv", model.features_ptr());
    CHECK(loaded.bias() == model.bias());
    CHECK(loaded.l2() == model.l2());
    CHECK(loaded.iterations_run() == model.iterations_run());
    for (int i = 0; i < model.weights().size(); ++i) {
        CHECK(loaded.weights()[i] == model.weights()[i]);
    }

    auto other = vocab_of({"different"});
    CHECK_THROWS_AS(OodModel::load(dir / "model.tsv", other), DataError);
}

TEST_CASE("scored dataset lines append a six-decimal score") {
    SentenceDataset d = dataset_of({{"a"}}, "d");
    std::ostringstream out;
    write_scored_dataset(d, {0.844}, out);
    CHECK(out.str() ==
          "{\"sent_id\":\"d#0\",\"doc_id\":\"d#0\",\"domain\":\"g\",\"tokens\":[\"a\"],"
          "\"score\":0.844000}\n");
}

TEST_SUITE_END();
