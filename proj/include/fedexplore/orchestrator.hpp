#pragma once

// Exploration / exploitation federated training:
//   stage 1  random clusters, one random architecture each
//   stage 2  C-1 iterations of: train every cluster, expel the clients whose
//            holdout predictions disagree most with their cluster model,
//            delete the cluster farthest from the all-cluster consensus and
//            move its clients into the closest one
//   stage 3  train the surviving cluster for R/2 rounds
// plus the single-model FedAvg baseline over all clients.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedexplore/data.hpp"
#include "fedexplore/detection.hpp"
#include "fedexplore/errors.hpp"
#include "fedexplore/fed_round.hpp"
#include "fedexplore/model_pool.hpp"
#include "fedexplore/nn.hpp"
#include "fedexplore/parallel.hpp"
#include "fedexplore/rng.hpp"
#include "fedexplore/training.hpp"

namespace fedexplore::orch {

struct ExperimentConfig {
    std::size_t clients = 40;            // N
    std::size_t clusters = 4;            // C
    std::size_t rounds = 32;             // R
    std::size_t epochs = 8;              // E
    std::size_t batch_size = 32;         // B
    std::size_t rounds_per_cluster = 4;  // R_c
    double poison_percent = 0.0;         // P
    double expel_percent = 0.0;          // X
    fed::Aggregation aggregation = fed::Aggregation::PlainMean;
    double learning_rate = 0.01;
    data::Attack attack = data::Attack::Fgsm;
    double epsilon = 0.25;
    std::uint64_t seed = 1;

    std::size_t class_count = 10;
    std::size_t samples_per_client = 40;
    std::size_t image_side = 14;
    double noise_sigma = 0.1;
    double prototype_contrast = 1.0;
    std::size_t holdout_size = 200;
    std::size_t test_size = 500;
    std::size_t reference_epochs = 30;
    std::string idx_images;
    std::string idx_labels;

    pool::Rational scale_factor{1, 8};
    std::size_t dense_width = 128;

    std::size_t workers = 1;

    void validate() const {
        if (clusters < 1) throw ValidationError("C >= 1");
        if (clients < clusters) throw ValidationError("N >= C (N = " + std::to_string(clients) + ", C = " + std::to_string(clusters) + ")");
        if (rounds < 2 || rounds % 2 != 0) throw ValidationError("R must be even and >= 2");
        if (epochs < 1) throw ValidationError("E >= 1");
        if (batch_size < 1) throw ValidationError("B >= 1");
        if (rounds_per_cluster < 1) throw ValidationError("R_c >= 1");
        if (!(poison_percent >= 0 && poison_percent <= 100)) throw ValidationError("0 <= P <= 100");
        if (!(expel_percent >= 0 && expel_percent <= 100)) throw ValidationError("0 <= X <= 100");
        if (!(learning_rate >= 0)) throw ValidationError("lr >= 0");
        if (!(epsilon >= 0)) throw ValidationError("epsilon >= 0");
        if (scale_factor.num == 0 || scale_factor.den == 0) throw ValidationError("scale_factor > 0");
        if (idx_images.empty() != idx_labels.empty()) throw ValidationError("idx_images and idx_labels go together");
        dataset_spec().validate();
    }

    data::DatasetSpec dataset_spec() const {
        data::DatasetSpec s;
        s.class_count = class_count;
        s.clients = clients;
        s.samples_per_client = samples_per_client;
        s.image_side = image_side;
        s.noise_sigma = noise_sigma;
        s.prototype_contrast = prototype_contrast;
        s.holdout_size = holdout_size;
        s.test_size = test_size;
        s.reference_epochs = reference_epochs;
        s.seed = derive_seed(seed, {stream::dataset});
        return s;
    }

    data::PoisonSpec poison_spec() const { return {poison_percent, attack, epsilon}; }

    pool::PoolConfig pool_config(const nn::TensorShape& input, std::size_t k) const {
        pool::PoolConfig p;
        p.scale_factor = scale_factor;
        p.dense_width = dense_width;
        p.input_shape = input;
        p.class_count = k;
        return p;
    }

    fed::TrainingSettings training(std::size_t local_epochs, std::size_t client_workers) const {
        return {local_epochs, batch_size, learning_rate, aggregation, client_workers};
    }
};

/// Built once per (seed, N, P, dataset settings); shared by baseline and proposed runs.
inline data::FederatedDataset build_dataset(const ExperimentConfig& cfg) {
    cfg.validate();
    std::optional<SamplePool> loaded;
    if (!cfg.idx_images.empty()) loaded = data::load_idx(cfg.idx_images, cfg.idx_labels);
    auto spec = cfg.dataset_spec();
    if (loaded) spec.class_count = loaded->class_count;
    return data::build_federated_dataset(spec, cfg.poison_spec(), std::move(loaded));
}

struct EpochBudget {
    std::size_t stage2_epochs = 0;        // (R/2) * E
    std::size_t epochs_per_round = 0;     // E_c
    friend bool operator==(const EpochBudget&, const EpochBudget&) = default;
};

/// E_stage2 = (R/2) E; E_c = max(1, floor(E_stage2 / ((C-1) R_c))).
inline EpochBudget epoch_budget(std::size_t rounds, std::size_t epochs, std::size_t clusters, std::size_t rounds_per_cluster) {
    if (clusters < 2) throw BudgetUndefinedError("epoch budget needs C >= 2");
    if (rounds_per_cluster < 1) throw BudgetUndefinedError("epoch budget needs R_c >= 1");
    EpochBudget b;
    b.stage2_epochs = (rounds / 2) * epochs;
    const std::size_t ec = b.stage2_epochs / ((clusters - 1) * rounds_per_cluster);
    if (ec == 0)
        std::clog << "warning: stage-2 budget " << b.stage2_epochs << " is below (C-1)*R_c = "
                  << (clusters - 1) * rounds_per_cluster << "; using 1 epoch per round\n";
    b.epochs_per_round = std::max<std::size_t>(1, ec);
    return b;
}

struct TracePoint {
    std::string stage;  // "stage2", "stage3" or "baseline"
    std::size_t step = 0;  // iteration (stage2) or round (stage3, baseline), 1-based
    std::size_t cluster_id = 0;
    double accuracy = 0.0;
    friend bool operator==(const TracePoint&, const TracePoint&) = default;
};

struct MembershipSnapshot {
    std::size_t iteration = 0;
    std::size_t alive = 0;
    std::size_t expelled = 0;
    bool disjoint = true;
};

struct RunResult {
    nn::ModelDescriptor final_descriptor;
    nn::ParameterVector final_params;
    std::size_t final_cluster_id = 0;
    std::vector<std::map<std::size_t, double>> cluster_scores;  // per stage-2 iteration
    std::vector<TracePoint> trace;
    fed::CommLedger comm;
    detect::ExpulsionLedger expulsions;
    std::size_t survivors = 0;  // M
    double final_accuracy = 0.0;
    std::vector<std::size_t> client_epochs;  // local epochs consumed, by client id
    std::vector<MembershipSnapshot> membership;
    std::set<std::size_t> poisoned_clients;
    std::set<std::size_t> expelled_clients;
    std::vector<std::size_t> survivor_ids;
    std::uint64_t stage3_parameter_volume = 0;
    std::uint64_t stage3_message_count = 0;
    std::size_t stage3_rounds = 0;
    std::size_t merges = 0;
};

/// Client ids shuffled and dealt in blocks of ceil(N/C); the last cluster takes
/// the remainder. When that would leave trailing clusters empty, block sizes
/// drop to floor/ceil so every cluster keeps at least one client.
inline std::vector<std::size_t> cluster_sizes(std::size_t clients, std::size_t clusters) {
    std::vector<std::size_t> sizes(clusters, 0);
    const std::size_t block = (clients + clusters - 1) / clusters;
    if (block * (clusters - 1) < clients) {
        for (std::size_t c = 0; c + 1 < clusters; ++c) sizes[c] = block;
        sizes[clusters - 1] = clients - block * (clusters - 1);
    } else {
        for (std::size_t c = 0; c < clusters; ++c) sizes[c] = clients / clusters + (c < clients % clusters ? 1 : 0);
    }
    return sizes;
}

inline std::vector<fed::ClusterState> init_clusters(const ExperimentConfig& cfg, const data::FederatedDataset& ds,
                                                    std::uint64_t seed) {
    std::vector<std::size_t> ids(cfg.clients);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    Rng assign(derive_seed(seed, {stream::cluster_assign}));
    std::shuffle(ids.begin(), ids.end(), assign);
    const auto sizes = cluster_sizes(cfg.clients, cfg.clusters);
    const auto pool_cfg = cfg.pool_config(ds.input_shape, ds.class_count);
    std::vector<fed::ClusterState> clusters(cfg.clusters);
    std::size_t cursor = 0;
    for (std::size_t c = 0; c < cfg.clusters; ++c) {
        auto& cl = clusters[c];
        cl.cluster_id = c;
        cl.members.assign(ids.begin() + std::ptrdiff_t(cursor), ids.begin() + std::ptrdiff_t(cursor + sizes[c]));
        std::sort(cl.members.begin(), cl.members.end());
        cursor += sizes[c];
        Rng model_rng(derive_seed(seed, {stream::model_sample, c}));
        cl.descriptor = pool::sample_descriptor(pool_cfg, model_rng);
        Rng init_rng(derive_seed(seed, {stream::model_init, c}));
        cl.global_params = nn::init_parameters(cl.descriptor, init_rng);
    }
    return clusters;
}

/// Mutable bookkeeping threaded through the stages of one run.
struct RunState {
    std::uint64_t seed = 0;
    fed::CommLedger comm;
    detect::ExpulsionLedger expulsions;
    std::vector<TracePoint> trace;
    std::vector<std::size_t> client_epochs;
    std::vector<std::map<std::size_t, double>> cluster_scores;
    std::vector<MembershipSnapshot> membership;
    std::set<std::size_t> expelled;
    std::size_t merges = 0;
};

namespace detail {
inline double holdout_accuracy(const detect::PredictionMatrix& pred, const data::FederatedDataset& ds) {
    const auto& truth = ds.holdout_truth_for_metrics();
    if (truth.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hit += pred.predicted()[i] == truth[i];
    return double(hit) / double(truth.size());
}

inline double test_accuracy(const nn::ModelDescriptor& desc, const nn::ParameterVector& params,
                            const data::FederatedDataset& ds) {
    nn::Network net(desc);
    return sample_accuracy(net, params, ds.test_set);
}

inline void check_conservation(RunState& st, std::size_t iteration, const std::vector<fed::ClusterState>& clusters,
                               std::size_t clients) {
    std::set<std::size_t> alive;
    std::size_t count = 0;
    for (const auto& c : clusters) {
        if (!c.alive) continue;
        count += c.members.size();
        alive.insert(c.members.begin(), c.members.end());
    }
    bool disjoint = alive.size() == count;
    for (std::size_t id : st.expelled) disjoint = disjoint && !alive.count(id);
    st.membership.push_back({iteration, count, st.expelled.size(), disjoint});
    if (!disjoint || count + st.expelled.size() != clients)
        throw Error("client conservation violated at iteration " + std::to_string(iteration));
}
}  // namespace detail

/// Runs the C-1 explore/expel/merge iterations and returns the last cluster.
inline fed::ClusterState stage2_explore(std::vector<fed::ClusterState> clusters, const data::FederatedDataset& ds,
                                        const ExperimentConfig& cfg, RunState& st) {
    if (clusters.size() < 2) throw RankUndefinedError("stage 2 needs at least two clusters");
    const EpochBudget budget = epoch_budget(cfg.rounds, cfg.epochs, clusters.size(), cfg.rounds_per_cluster);
    const std::size_t iterations = clusters.size() - 1;
    const std::size_t cluster_workers = std::max<std::size_t>(1, cfg.workers);
    detail::check_conservation(st, 0, clusters, cfg.clients);

    for (std::size_t it = 1; it <= iterations; ++it) {
        std::vector<std::size_t> live;
        std::set<std::size_t> alive_before;
        for (std::size_t i = 0; i < clusters.size(); ++i)
            if (clusters[i].alive) {
                live.push_back(i);
                alive_before.insert(clusters[i].members.begin(), clusters[i].members.end());
            }

        struct ClusterOutcome {
            fed::CommLedger comm;
            detect::PredictionMatrix global_pred;
            std::map<std::size_t, double> scores;
            detect::ExpulsionOutcome expulsion;
        };
        std::vector<ClusterOutcome> outcomes(live.size());

        parallel_for(live.size(), cluster_workers, [&](std::size_t k) {
            fed::ClusterState& cl = clusters[live[k]];
            ClusterOutcome& out = outcomes[k];
            const auto settings = cfg.training(budget.epochs_per_round, 1);
            fed::RoundOutcome last;
            for (std::size_t r = 1; r <= cfg.rounds_per_cluster; ++r)
                last = fed::run_round(cl, ds, settings, out.comm, derive_seed(st.seed, {2, it, cl.cluster_id, r}));
            nn::Network net(cl.descriptor);
            out.global_pred = detect::prediction_matrix(net, cl.global_params.values, ds.server_unlabeled);
            std::map<std::size_t, detect::PredictionMatrix> client_preds;
            for (const auto& up : last.updates)
                client_preds.emplace(up.client_id,
                                     detect::prediction_matrix(net, up.updated_params.values, ds.server_unlabeled));
            out.scores = detect::score_clients(out.global_pred, client_preds);
            out.expulsion = detect::expel_lowest(cl.members, out.scores, cfg.expel_percent);
        });

        // Barrier: bookkeeping in cluster-id order.
        std::set<std::size_t> expelled_now;
        std::map<std::size_t, detect::PredictionMatrix> cluster_preds;
        for (std::size_t k = 0; k < live.size(); ++k) {
            fed::ClusterState& cl = clusters[live[k]];
            const ClusterOutcome& out = outcomes[k];
            st.comm.message_count += out.comm.message_count;
            st.comm.parameter_volume += out.comm.parameter_volume;
            for (std::size_t id : cl.members) st.client_epochs[id] += cfg.rounds_per_cluster * budget.epochs_per_round;
            st.trace.push_back({"stage2", it, cl.cluster_id, detail::holdout_accuracy(out.global_pred, ds)});
            expelled_now.insert(out.expulsion.expelled.begin(), out.expulsion.expelled.end());
            cl.members = out.expulsion.surviving;
            cluster_preds.emplace(cl.cluster_id, out.global_pred);
        }
        detect::record_confusion(st.expulsions, it, expelled_now, ds.poisoned_clients, alive_before);
        st.expelled.insert(expelled_now.begin(), expelled_now.end());

        const detect::ClusterRanking rank = detect::rank_clusters(cluster_preds);
        st.cluster_scores.push_back(rank.scores);
        fed::ClusterState& best = clusters[rank.best];
        fed::ClusterState& worst = clusters[rank.worst];
        best.members.insert(best.members.end(), worst.members.begin(), worst.members.end());
        std::sort(best.members.begin(), best.members.end());
        worst.members.clear();
        worst.alive = false;
        ++st.merges;
        detail::check_conservation(st, it, clusters, cfg.clients);
    }
    for (auto& c : clusters)
        if (c.alive) return std::move(c);
    throw Error("stage 2 left no cluster alive");
}

/// R/2 rounds of E local epochs on the surviving cluster; test accuracy per round.
inline RunResult stage3_train(fed::ClusterState survivor, const data::FederatedDataset& ds, const ExperimentConfig& cfg,
                              RunState st) {
    if (survivor.members.empty()) throw ConfigError("stage 3: surviving cluster is empty");
    const auto settings = cfg.training(cfg.epochs, cfg.workers);
    RunResult res;
    const std::uint64_t msg_before = st.comm.message_count, vol_before = st.comm.parameter_volume;
    res.stage3_rounds = cfg.rounds / 2;
    for (std::size_t r = 1; r <= res.stage3_rounds; ++r) {
        fed::run_round(survivor, ds, settings, st.comm, derive_seed(st.seed, {3, r}));
        for (std::size_t id : survivor.members) st.client_epochs[id] += cfg.epochs;
        st.trace.push_back({"stage3", r, survivor.cluster_id, detail::test_accuracy(survivor.descriptor, survivor.global_params, ds)});
    }
    res.stage3_message_count = st.comm.message_count - msg_before;
    res.stage3_parameter_volume = st.comm.parameter_volume - vol_before;
    res.final_descriptor = survivor.descriptor;
    res.final_params = std::move(survivor.global_params);
    res.final_cluster_id = survivor.cluster_id;
    res.survivors = survivor.members.size();
    res.survivor_ids = survivor.members;
    res.final_accuracy = st.trace.empty() ? 0.0 : st.trace.back().accuracy;
    res.cluster_scores = std::move(st.cluster_scores);
    res.trace = std::move(st.trace);
    res.comm = st.comm;
    res.expulsions = std::move(st.expulsions);
    res.client_epochs = std::move(st.client_epochs);
    res.membership = std::move(st.membership);
    res.poisoned_clients = ds.poisoned_clients;
    res.expelled_clients = std::move(st.expelled);
    res.merges = st.merges;
    return res;
}

inline RunResult run_proposed(const ExperimentConfig& cfg, const data::FederatedDataset& ds) {
    cfg.validate();
    if (ds.shards.size() != cfg.clients) throw ConfigError("dataset has " + std::to_string(ds.shards.size()) + " shards, config N = " + std::to_string(cfg.clients));
    RunState st;
    st.seed = derive_seed(cfg.seed, {stream::proposed});
    st.client_epochs.assign(cfg.clients, 0);
    auto clusters = init_clusters(cfg, ds, st.seed);
    fed::ClusterState survivor =
        clusters.size() >= 2 ? stage2_explore(std::move(clusters), ds, cfg, st) : std::move(clusters.front());
    return stage3_train(std::move(survivor), ds, cfg, std::move(st));
}

inline RunResult run_proposed(const ExperimentConfig& cfg) { return run_proposed(cfg, build_dataset(cfg)); }

/// One random architecture trained by every client for R rounds of E epochs.
inline RunResult run_baseline(const ExperimentConfig& cfg, const data::FederatedDataset& ds) {
    cfg.validate();
    if (ds.shards.size() != cfg.clients) throw ConfigError("dataset has " + std::to_string(ds.shards.size()) + " shards, config N = " + std::to_string(cfg.clients));
    const std::uint64_t seed = derive_seed(cfg.seed, {stream::baseline});
    fed::ClusterState cl;
    cl.cluster_id = 0;
    cl.members.resize(cfg.clients);
    std::iota(cl.members.begin(), cl.members.end(), std::size_t{0});
    Rng model_rng(derive_seed(seed, {stream::model_sample, 0}));
    cl.descriptor = pool::sample_descriptor(cfg.pool_config(ds.input_shape, ds.class_count), model_rng);
    Rng init_rng(derive_seed(seed, {stream::model_init, 0}));
    cl.global_params = nn::init_parameters(cl.descriptor, init_rng);

    RunResult res;
    res.client_epochs.assign(cfg.clients, 0);
    const auto settings = cfg.training(cfg.epochs, cfg.workers);
    for (std::size_t r = 1; r <= cfg.rounds; ++r) {
        fed::run_round(cl, ds, settings, res.comm, derive_seed(seed, {1, r}));
        for (std::size_t id : cl.members) res.client_epochs[id] += cfg.epochs;
        res.trace.push_back({"baseline", r, 0, detail::test_accuracy(cl.descriptor, cl.global_params, ds)});
    }
    res.final_descriptor = cl.descriptor;
    res.final_params = std::move(cl.global_params);
    res.survivors = cl.members.size();
    res.survivor_ids = cl.members;
    res.final_accuracy = res.trace.back().accuracy;
    res.poisoned_clients = ds.poisoned_clients;
    return res;
}

inline RunResult run_baseline(const ExperimentConfig& cfg) { return run_baseline(cfg, build_dataset(cfg)); }

}  // namespace fedexplore::orch
