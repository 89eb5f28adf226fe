#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedexplore/detection.hpp"

using namespace fedexplore;
using namespace fedexplore::detect;

TEST(PredictionMatrix, OneHotEncoding) {
    const PredictionMatrix m({2, 0, 1}, 3);
    EXPECT_EQ(m.rows(), 3u);
    EXPECT_EQ(m.cols(), 3u);
    EXPECT_EQ(m.flattened(), (std::vector<double>{0, 0, 1, 1, 0, 0, 0, 1, 0}));
    EXPECT_THROW(PredictionMatrix({3}, 3), LabelRangeError);
}

TEST(PredictionMatrix, FromModelMatchesPredictLabels) {
    nn::ModelDescriptor d;
    d.input_shape = nn::TensorShape{4};
    d.class_count = 3;
    d.layers = {nn::LayerSpec::dense(3), nn::LayerSpec::softmax()};
    Rng rng(5);
    const auto p = nn::init_parameters(d, rng);
    std::vector<nn::Image> xs;
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 10; ++i) xs.push_back({u(rng), u(rng), u(rng), u(rng)});
    EXPECT_EQ(prediction_matrix(d, p, xs).predicted(), nn::predict_labels(d, p, xs));
}

TEST(Cosine, Examples) {
    const PredictionMatrix a({0, 1, 2, 1}, 3);
    EXPECT_DOUBLE_EQ(cosine_similarity(a, a), 1.0);
    EXPECT_DOUBLE_EQ(cosine_similarity(a, PredictionMatrix({1, 2, 0, 0}, 3)), 0.0);
    EXPECT_DOUBLE_EQ(cosine_similarity(a, PredictionMatrix({0, 1, 2, 2}, 3)), 0.75);
}

TEST(Cosine, Errors) {
    EXPECT_THROW(cosine_similarity(PredictionMatrix({0}, 2), PredictionMatrix({0, 1}, 2)), ShapeError);
    const std::vector<double> zero{0, 0}, one{1, 0};
    EXPECT_THROW(cosine_similarity(zero, one), UndefinedSimilarityError);
}

TEST(Cosine, ScaleInvariant) {
    const std::vector<double> a{1, 2, 0, 3}, b{0, 1, 1, 2};
    std::vector<double> a5 = a;
    for (double& v : a5) v *= 5;
    EXPECT_NEAR(cosine_similarity(a, b), cosine_similarity(a5, b), 1e-15);
}

TEST(ScoreClients, IdenticalAndOrthogonal) {
    const PredictionMatrix global({0, 1, 1, 0}, 3);
    std::map<std::size_t, PredictionMatrix> clients{{4, global}, {9, PredictionMatrix({2, 2, 2, 2}, 3)}};
    const auto s = score_clients(global, clients);
    EXPECT_DOUBLE_EQ(s.at(4), 1.0);
    EXPECT_DOUBLE_EQ(s.at(9), 0.0);
    clients.emplace(1, PredictionMatrix({0, 1}, 3));
    EXPECT_THROW(score_clients(global, clients), ShapeError);
}

TEST(Expel, Counts) {
    EXPECT_EQ(expel_count(10, 20), 2u);
    EXPECT_EQ(expel_count(4, 20), 0u);
    EXPECT_EQ(expel_count(10, 0), 0u);
    EXPECT_EQ(expel_count(5, 100), 4u);
    EXPECT_EQ(expel_count(1, 50), 0u);
    EXPECT_EQ(expel_count(0, 50), 0u);
    EXPECT_EQ(expel_count(5, 20), 1u);
    EXPECT_EQ(expel_count(15, 20), 3u);
}

TEST(Expel, LowestScoresGoWithIdTieBreak) {
    const std::vector<std::size_t> members{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::map<std::size_t, double> scores;
    for (std::size_t id : members) scores[id] = 1.0;
    scores[3] = 0.2;
    scores[7] = 0.5;
    scores[8] = 0.5;
    const auto out = expel_lowest(members, scores, 20);
    EXPECT_EQ(out.expelled, (std::vector<std::size_t>{3, 8}));
    EXPECT_EQ(out.surviving.size(), 8u);
    const auto none = expel_lowest(members, scores, 0);
    EXPECT_TRUE(none.expelled.empty());
    EXPECT_EQ(none.surviving, members);
    EXPECT_THROW(expel_lowest(members, scores, 120), ValidationError);
    scores.erase(10);
    EXPECT_THROW(expel_lowest(members, scores, 20), ShapeError);
}

TEST(RankClusters, TieBreak) {
    const PredictionMatrix m({0, 1, 2}, 3);
    const auto r = rank_clusters({{2, m}, {5, m}});
    EXPECT_EQ(r.best, 2u);
    EXPECT_EQ(r.worst, 5u);
    EXPECT_DOUBLE_EQ(r.scores.at(2), r.scores.at(5));
}

TEST(RankClusters, OrthogonalIsWorst) {
    const PredictionMatrix a({0, 1, 2, 0}, 3), c({1, 2, 0, 1}, 3);
    const auto r = rank_clusters({{0, a}, {1, c}, {2, a}});
    EXPECT_EQ(r.worst, 1u);
    EXPECT_EQ(r.best, 0u);
}

TEST(RankClusters, HandComputedFixture) {
    // Mean matrix rows: (2/3,1/3,0) (0,1,0) (1/3,0,2/3) (2/3,1/3,0); |mean| = sqrt(24)/3.
    const auto r = rank_clusters({{0, PredictionMatrix({0, 1, 2, 0}, 3)},
                                  {1, PredictionMatrix({0, 1, 2, 1}, 3)},
                                  {2, PredictionMatrix({1, 1, 0, 0}, 3)}});
    const double root = std::sqrt(24.0);
    EXPECT_NEAR(r.scores.at(0), 9.0 / (2 * root), 1e-12);
    EXPECT_NEAR(r.scores.at(1), 8.0 / (2 * root), 1e-12);
    EXPECT_NEAR(r.scores.at(2), 7.0 / (2 * root), 1e-12);
    EXPECT_EQ(r.best, 0u);
    EXPECT_EQ(r.worst, 2u);
}

TEST(RankClusters, Errors) {
    EXPECT_THROW(rank_clusters({{0, PredictionMatrix({0}, 2)}}), RankUndefinedError);
    EXPECT_THROW(rank_clusters({{0, PredictionMatrix({0}, 2)}, {1, PredictionMatrix({0, 1}, 2)}}), ShapeError);
}

TEST(Confusion, TableRow) {
    std::set<std::size_t> alive, poisoned, expelled;
    for (std::size_t i = 0; i < 400; ++i) alive.insert(i);
    for (std::size_t i = 0; i < 160; ++i) poisoned.insert(i);
    for (std::size_t i = 0; i < 24; ++i) expelled.insert(i);
    for (std::size_t i = 200; i < 256; ++i) expelled.insert(i);
    ExpulsionLedger ledger;
    const auto row = record_confusion(ledger, 1, expelled, poisoned, alive);
    EXPECT_EQ(row, (ExpulsionRow{1, 24, 56, 184, 136, 400}));
    ASSERT_EQ(ledger.rows.size(), 1u);
    EXPECT_EQ(row.true_positive + row.false_positive + row.true_negative + row.false_negative, row.total_nodes);
}

TEST(Confusion, NoPoisonedClients) {
    ExpulsionLedger ledger;
    const auto row = record_confusion(ledger, 2, {1, 2}, {}, {0, 1, 2, 3});
    EXPECT_EQ(row.true_positive, 0u);
    EXPECT_EQ(row.false_negative, 0u);
    EXPECT_EQ(row.false_positive, 2u);
    EXPECT_THROW(record_confusion(ledger, 3, {9}, {}, {0, 1}), ValidationError);
}
