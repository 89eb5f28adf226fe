#pragma once

// Prediction-agreement scoring: one-hot prediction matrices on the server's
// unlabeled holdout, cosine similarity, client expulsion, cluster ranking and
// the expulsion confusion ledger.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fedexplore/errors.hpp"
#include "fedexplore/nn.hpp"

namespace fedexplore::detect {

/// rows x cols one-hot matrix stored as one predicted class per row.
class PredictionMatrix {
public:
    PredictionMatrix() = default;
    PredictionMatrix(std::vector<int> predicted, std::size_t class_count)
        : predicted_(std::move(predicted)), cols_(class_count) {
        for (int p : predicted_)
            if (p < 0 || std::size_t(p) >= cols_) throw LabelRangeError("prediction outside [0, K)");
    }

    std::size_t rows() const noexcept { return predicted_.size(); }
    std::size_t cols() const noexcept { return cols_; }
    const std::vector<int>& predicted() const noexcept { return predicted_; }

    double at(std::size_t r, std::size_t c) const { return predicted_.at(r) == int(c) ? 1.0 : 0.0; }

    /// Row-major flattening.
    std::vector<double> flattened() const {
        std::vector<double> v(rows() * cols_, 0.0);
        for (std::size_t r = 0; r < rows(); ++r) v[r * cols_ + std::size_t(predicted_[r])] = 1.0;
        return v;
    }

    friend bool operator==(const PredictionMatrix&, const PredictionMatrix&) = default;

private:
    std::vector<int> predicted_;
    std::size_t cols_ = 0;
};

inline PredictionMatrix prediction_matrix(nn::Network& net, std::span<const double> params,
                                          std::span<const nn::Image> unlabeled) {
    return PredictionMatrix(nn::predict_labels(net, params, unlabeled), net.class_count());
}

inline PredictionMatrix prediction_matrix(const nn::ModelDescriptor& desc, const nn::ParameterVector& params,
                                          std::span<const nn::Image> unlabeled) {
    nn::Network net(desc);
    return prediction_matrix(net, params.values, unlabeled);
}

/// a.b / (|a| |b|).
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw ShapeError("cosine_similarity: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw UndefinedSimilarityError("cosine_similarity: zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double cosine_similarity(const PredictionMatrix& a, const PredictionMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("cosine_similarity: matrix shapes differ");
    const auto fa = a.flattened(), fb = b.flattened();
    return cosine_similarity(fa, fb);
}

/// Each client's predictions against the cluster global model's predictions.
inline std::map<std::size_t, double> score_clients(const PredictionMatrix& global,
                                                   const std::map<std::size_t, PredictionMatrix>& clients) {
    std::map<std::size_t, double> scores;
    for (const auto& [id, m] : clients) {
        if (m.rows() != global.rows() || m.cols() != global.cols())
            throw ShapeError("client " + std::to_string(id) + " prediction matrix shape differs from the global one");
        scores[id] = cosine_similarity(global, m);
    }
    return scores;
}

struct ExpulsionOutcome {
    std::vector<std::size_t> surviving;  // ascending
    std::vector<std::size_t> expelled;   // ascending
};

/// Number of clients removed from a cluster of `members` at X percent:
/// floor(members * X / 100), capped so that one member always remains.
inline std::size_t expel_count(std::size_t members, double percent) {
    if (members == 0) return 0;
    const auto raw = std::size_t(std::floor(double(members) * percent / 100.0 + 1e-9));
    return std::min(raw, members - 1);
}

/// Removes the expel_count lowest-scoring members; among equal scores the
/// higher client id goes first.
inline ExpulsionOutcome expel_lowest(const std::vector<std::size_t>& members, const std::map<std::size_t, double>& scores,
                                     double percent) {
    if (!(percent >= 0.0 && percent <= 100.0)) throw ValidationError("expel percent must lie in [0, 100]");
    std::vector<std::size_t> ranked = members;
    for (std::size_t id : ranked)
        if (!scores.count(id)) throw ShapeError("expel_lowest: no score for client " + std::to_string(id));
    std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
        const double sa = scores.at(a), sb = scores.at(b);
        return sa != sb ? sa < sb : a > b;
    });
    const std::size_t n = expel_count(members.size(), percent);
    ExpulsionOutcome out;
    out.expelled.assign(ranked.begin(), ranked.begin() + std::ptrdiff_t(n));
    out.surviving.assign(ranked.begin() + std::ptrdiff_t(n), ranked.end());
    std::sort(out.expelled.begin(), out.expelled.end());
    std::sort(out.surviving.begin(), out.surviving.end());
    return out;
}

struct ClusterRanking {
    std::size_t best = 0;
    std::size_t worst = 0;
    std::map<std::size_t, double> scores;
};

/// Scores each cluster's prediction matrix against the entrywise mean of all
/// of them. Ties: best -> lowest id, worst -> highest id.
inline ClusterRanking rank_clusters(const std::map<std::size_t, PredictionMatrix>& clusters) {
    if (clusters.size() < 2) throw RankUndefinedError("rank_clusters needs at least two clusters");
    const auto& first = clusters.begin()->second;
    std::vector<double> mean(first.rows() * first.cols(), 0.0);
    for (const auto& [id, m] : clusters) {
        if (m.rows() != first.rows() || m.cols() != first.cols())
            throw ShapeError("cluster " + std::to_string(id) + " prediction matrix shape differs");
        for (std::size_t r = 0; r < m.rows(); ++r) mean[r * m.cols() + std::size_t(m.predicted()[r])] += 1.0;
    }
    for (double& v : mean) v /= double(clusters.size());

    ClusterRanking out;
    for (const auto& [id, m] : clusters) out.scores[id] = cosine_similarity(m.flattened(), mean);
    out.best = clusters.begin()->first;
    out.worst = clusters.begin()->first;
    for (const auto& [id, s] : out.scores) {
        if (s > out.scores[out.best]) out.best = id;
        if (s <= out.scores[out.worst]) out.worst = id;
    }
    return out;
}

struct ExpulsionRow {
    std::size_t iteration = 0;
    std::size_t true_positive = 0;
    std::size_t false_positive = 0;
    std::size_t true_negative = 0;
    std::size_t false_negative = 0;
    std::size_t total_nodes = 0;

    friend bool operator==(const ExpulsionRow&, const ExpulsionRow&) = default;
};

struct ExpulsionLedger {
    std::vector<ExpulsionRow> rows;
};

/// Positive = expelled, true = poisoned. Totals refer to the clients alive
/// when the iteration started.
inline ExpulsionRow record_confusion(ExpulsionLedger& ledger, std::size_t iteration,
                                     const std::set<std::size_t>& expelled, const std::set<std::size_t>& poisoned,
                                     const std::set<std::size_t>& alive_before) {
    ExpulsionRow row;
    row.iteration = iteration;
    row.total_nodes = alive_before.size();
    for (std::size_t id : expelled)
        if (!alive_before.count(id)) throw ValidationError("record_confusion: expelled client " + std::to_string(id) + " was not alive");
    for (std::size_t id : alive_before) {
        const bool out = expelled.count(id) > 0;
        const bool bad = poisoned.count(id) > 0;
        if (out && bad) ++row.true_positive;
        else if (out) ++row.false_positive;
        else if (bad) ++row.false_negative;
        else ++row.true_negative;
    }
    ledger.rows.push_back(row);
    return row;
}

}  // namespace fedexplore::detect
