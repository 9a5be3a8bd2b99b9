#include <cmath>
#include <filesystem>
#include <random>

#include "aspex/embeddings.hpp"
#include "aspex/rng.hpp"
#include "doctest.h"

using namespace aspex;
namespace fs = std::filesystem;

namespace {

SentenceDataset synthetic_cooccurrence_corpus() {
    // x and y always co-occur; x and z never do. Padding words keep z in
    // vocabulary without ever sharing a window with x.
    SentenceDataset d;
    d.source = "synthetic";
    std::mt19937_64 rng(3);
    for (int i = 0; i < 300; ++i) {
        Sentence s;
        s.sent_id = "s#" + std::to_string(i);
        s.doc_id = "s";
        s.domain = "g";
        if (i % 2 == 0) {
            s.tokens = {"x", "y"};
        } else {
            s.tokens = {"z", "w"};
        }
        if (uniform_double(rng) < 0.3) s.tokens.push_back("filler");
        d.sentences.push_back(s);
    }
    return d;
}

double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    return a.dot(b) / (a.norm() * b.norm());
}

}  // namespace

TEST_SUITE_BEGIN("embeddings");

TEST_CASE("co-occurring words end up more similar than non-co-occurring") {
    SentenceDataset d = synthetic_cooccurrence_corpus();
    build_vocab(d, 2);
    SgnsConfig config;
    config.dim = 16;
    config.window = 2;
    config.negatives = 3;
    config.epochs = 8;
    config.seed = 7;
    std::vector<double> losses;
    EmbeddingMatrix emb = train_sgns(d, config, &losses);

    const Vocabulary& v = *emb.vocab;
    double sim_xy = cosine(emb.row(v.id("x")), emb.row(v.id("y")));
    double sim_xz = cosine(emb.row(v.id("x")), emb.row(v.id("z")));
    CHECK(sim_xy > sim_xz);

    REQUIRE(losses.size() == 8);
    CHECK(losses.back() < losses.front());
}

TEST_CASE("single repeated pair converges toward mutual similarity") {
    SentenceDataset d;
    d.source = "pair";
    for (int i = 0; i < 200; ++i) {
        d.sentences.push_back(Sentence{"s#" + std::to_string(i), "s", "g", {"a", "b"}});
    }
    build_vocab(d, 2);
    SgnsConfig config;
    config.dim = 8;
    config.window = 1;
    config.negatives = 2;
    config.epochs = 10;
    config.seed = 11;
    EmbeddingMatrix emb = train_sgns(d, config);
    double sim = cosine(emb.row(emb.vocab->id("a")), emb.row(emb.vocab->id("b")));
    CHECK(sim > 0.5);
}

TEST_CASE("seeded determinism of SGNS") {
    SentenceDataset d1 = synthetic_cooccurrence_corpus();
    SentenceDataset d2 = synthetic_cooccurrence_corpus();
    build_vocab(d1, 2);
    build_vocab(d2, 2);
    SgnsConfig config;
    config.dim = 12;
    config.window = 2;
    config.negatives = 2;
    config.epochs = 2;
    config.seed = 5;
    EmbeddingMatrix a = train_sgns(d1, config);
    EmbeddingMatrix b = train_sgns(d2, config);
    CHECK((a.vectors - b.vectors).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pad row is zero and all norms are finite") {
    SentenceDataset d = synthetic_cooccurrence_corpus();
    build_vocab(d, 2);
    SgnsConfig config;
    config.dim = 8;
    config.epochs = 2;
    EmbeddingMatrix emb = train_sgns(d, config);
    CHECK(emb.vectors.row(kPadId).norm() == 0.0);
    for (int i = 0; i < emb.size(); ++i) {
        CHECK(std::isfinite(emb.vectors.row(i).norm()));
        CHECK(emb.vectors.row(i).norm() < config.norm_cap);
    }
}

TEST_CASE("tiny vocabularies are rejected") {
    SentenceDataset d;
    for (int i = 0; i < 10; ++i) {
        d.sentences.push_back(Sentence{"s#" + std::to_string(i), "s", "g", {"only", "only"}});
    }
    build_vocab(d, 2);
    SgnsConfig config;
    CHECK_THROWS_AS(train_sgns(d, config), DataError);
}

TEST_CASE("embedding file round trip") {
    SentenceDataset d = synthetic_cooccurrence_corpus();
    build_vocab(d, 2);
    SgnsConfig config;
    config.dim = 8;
    config.epochs = 1;
    EmbeddingMatrix emb = train_sgns(d, config);

    fs::path dir = fs::temp_directory_path() / "aspex_test_emb";
    fs::create_directories(dir);
    write_embeddings(emb, dir / "vectors.txt");
    EmbeddingMatrix back = read_embeddings(dir / "vectors.txt", d.vocab);
    CHECK(back.dim() == emb.dim());
    CHECK(back.size() == emb.size());
    // 6-decimal quantization
    CHECK((back.vectors - emb.vectors).cwiseAbs().maxCoeff() < 5e-7);

    SentenceDataset other;
    other.sentences.push_back(Sentence{"o#0", "o", "g", {"p", "q"}});
    other.sentences.push_back(Sentence{"o#1", "o", "g", {"p", "q"}});
    auto other_vocab = build_vocab(other, 1);
    CHECK_THROWS_AS(read_embeddings(dir / "vectors.txt", other_vocab), DataError);
}

TEST_CASE("kmeans recovers two separated blobs") {
    std::mt19937_64 rng(17);
    auto noise = [&]() { return (uniform_double(rng) - 0.5) * 0.2; };
    Eigen::MatrixXd points(60, 2);
    Eigen::RowVector2d mean_a(0, 0), mean_b(0, 0);
    for (int i = 0; i < 30; ++i) {
        points.row(i) << 5.0 + noise(), 5.0 + noise();
        mean_a += points.row(i);
    }
    for (int i = 30; i < 60; ++i) {
        points.row(i) << -5.0 + noise(), -5.0 + noise();
        mean_b += points.row(i);
    }
    mean_a /= 30.0;
    mean_b /= 30.0;

    Centroids c = kmeans(points, 2, 23);
    REQUIRE(c.centers.rows() == 2);
    // Match each blob mean to its nearest centroid.
    for (const Eigen::RowVector2d& m : {mean_a, mean_b}) {
        double best = std::min((c.centers.row(0) - m).norm(), (c.centers.row(1) - m).norm());
        CHECK(best < 0.1);
    }
    // All 30+30 points split cleanly.
    int first_cluster = c.assignment[0];
    for (int i = 1; i < 30; ++i) CHECK(c.assignment[i] == first_cluster);
    for (int i = 31; i < 60; ++i) CHECK(c.assignment[i] == c.assignment[30]);
    CHECK(c.assignment[0] != c.assignment[30]);
}

TEST_CASE("kmeans with k=1 returns the global mean") {
    std::mt19937_64 rng(29);
    Eigen::MatrixXd points(40, 3);
    for (int i = 0; i < 40; ++i) {
        for (int j = 0; j < 3; ++j) points(i, j) = uniform_double(rng) * 4.0 - 2.0;
    }
    Centroids c = kmeans(points, 1, 1);
    Eigen::RowVectorXd mean = points.colwise().mean();
    CHECK((c.centers.row(0) - mean).norm() < 1e-12);
}

TEST_CASE("kmeans with k equal to point count has zero inertia") {
    Eigen::MatrixXd points(5, 2);
    points << 0, 0, 1, 0, 0, 1, 3, 3, -2, 1;
    Centroids c = kmeans(points, 5, 3);
    CHECK(c.inertia == doctest::Approx(0.0));
    std::vector<bool> seen(5, false);
    for (int a : c.assignment) {
        CHECK_FALSE(seen[a]);
        seen[a] = true;
    }
}

TEST_CASE("kmeans inertia is non-increasing across iterations") {
    std::mt19937_64 rng(31);
    Eigen::MatrixXd points(80, 4);
    for (int i = 0; i < 80; ++i) {
        for (int j = 0; j < 4; ++j) points(i, j) = uniform_double(rng) * 10.0;
    }
    Centroids c = kmeans(points, 6, 9);
    for (size_t i = 1; i < c.inertia_history.size(); ++i) {
        CHECK(c.inertia_history[i] <= c.inertia_history[i - 1] + 1e-9);
    }
}

TEST_CASE("kmeans determinism and bounds") {
    std::mt19937_64 rng(37);
    Eigen::MatrixXd points(50, 3);
    for (int i = 0; i < 50; ++i) {
        for (int j = 0; j < 3; ++j) points(i, j) = uniform_double(rng);
    }
    Centroids a = kmeans(points, 4, 77);
    Centroids b = kmeans(points, 4, 77);
    CHECK((a.centers - b.centers).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.assignment == b.assignment);
    CHECK_THROWS_AS(kmeans(points, 0, 1), DataError);
    CHECK_THROWS_AS(kmeans(points, 51, 1), DataError);
}

TEST_CASE("cluster_embeddings excludes special tokens") {
    SentenceDataset d = synthetic_cooccurrence_corpus();
    build_vocab(d, 2);
    SgnsConfig config;
    config.dim = 8;
    config.epochs = 1;
    EmbeddingMatrix emb = train_sgns(d, config);
    int content = emb.size() - kNumSpecialTokens;
    Centroids c = cluster_embeddings(emb, 2, 5);
    CHECK(static_cast<int>(c.assignment.size()) == content);
    CHECK_THROWS_AS(cluster_embeddings(emb, content + 1, 5), DataError);
}

TEST_SUITE_END();
