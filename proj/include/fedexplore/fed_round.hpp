#pragma once

// One federated communication round: broadcast, local training, aggregation,
// and communication accounting.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "fedexplore/data.hpp"
#include "fedexplore/errors.hpp"
#include "fedexplore/nn.hpp"
#include "fedexplore/parallel.hpp"
#include "fedexplore/rng.hpp"
#include "fedexplore/training.hpp"

namespace fedexplore::fed {

struct ClientUpdate {
    std::size_t client_id = 0;
    nn::ParameterVector updated_params;
    std::size_t sample_count = 0;
};

enum class Aggregation { PlainMean, SampleWeighted };

struct CommLedger {
    std::uint64_t message_count = 0;     // one per model transfer, either direction
    std::uint64_t parameter_volume = 0;  // sum over transfers of the model's parameter count

    void record(std::uint64_t transfers, std::uint64_t parameters_per_transfer) {
        message_count += transfers;
        parameter_volume += transfers * parameters_per_transfer;
    }
    friend bool operator==(const CommLedger&, const CommLedger&) = default;
};

struct ClusterState {
    std::size_t cluster_id = 0;
    nn::ModelDescriptor descriptor;
    nn::ParameterVector global_params;
    std::vector<std::size_t> members;  // ascending client ids
    bool alive = true;
};

struct TrainingSettings {
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    double learning_rate = 0.01;
    Aggregation aggregation = Aggregation::PlainMean;
    std::size_t workers = 1;
};

/// E full passes of mini-batch SGD over the shard, starting from a copy of
/// the global parameters. The shuffle stream comes from `seed` only.
inline ClientUpdate local_train(const data::ClientShard& shard, nn::Network& net, const nn::ParameterVector& global_params,
                                std::size_t epochs, std::size_t batch_size, double lr, std::uint64_t seed) {
    if (shard.samples.empty()) throw ClientEmptyError("client " + std::to_string(shard.client_id) + " has no samples");
    if (epochs < 1) throw ValidationError("local_train: epochs must be >= 1");
    net.check_params(global_params.values);
    ClientUpdate up{shard.client_id, global_params, shard.samples.size()};
    Rng rng(seed);
    train_sgd(net, up.updated_params, shard.samples, epochs, batch_size, lr, rng);
    return up;
}

inline ClientUpdate local_train(const data::ClientShard& shard, const nn::ModelDescriptor& desc,
                                const nn::ParameterVector& global_params, std::size_t epochs, std::size_t batch_size,
                                double lr, std::uint64_t seed) {
    nn::Network net(desc);
    return local_train(shard, net, global_params, epochs, batch_size, lr, seed);
}

/// Shifted weighted mean in ascending client-id order:
///   result = ref + sum_i w_i * (theta_i - ref),
/// ref = the lowest-id update, w_i = 1/n (plain) or n_i / sum n (weighted).
/// Identical inputs therefore come back bit-exact, and plain and weighted
/// agree bitwise when all sample counts are equal.
inline nn::ParameterVector aggregate(const std::vector<ClientUpdate>& updates, Aggregation mode) {
    if (updates.empty()) throw NoUpdatesError("aggregate: no client updates");
    std::vector<std::size_t> order(updates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return updates[a].client_id < updates[b].client_id; });
    const std::size_t len = updates[order[0]].updated_params.size();
    for (const auto& u : updates)
        if (u.updated_params.size() != len)
            throw LayoutError("aggregate: client " + std::to_string(u.client_id) + " sent " +
                              std::to_string(u.updated_params.size()) + " parameters, expected " + std::to_string(len));

    double total_samples = 0.0;
    for (const auto& u : updates) total_samples += double(u.sample_count);
    const nn::ParameterVector& ref = updates[order[0]].updated_params;
    std::vector<double> acc(len, 0.0);
    for (std::size_t k : order) {
        const ClientUpdate& u = updates[k];
        const double w = mode == Aggregation::PlainMean ? 1.0 / double(updates.size())
                                                        : double(u.sample_count) / total_samples;
        const auto& v = u.updated_params.values;
        for (std::size_t i = 0; i < len; ++i) acc[i] += w * (v[i] - ref.values[i]);
    }
    nn::ParameterVector out;
    out.layout = ref.layout;
    out.values.resize(len);
    for (std::size_t i = 0; i < len; ++i) out.values[i] = ref.values[i] + acc[i];
    return out;
}

struct RoundOutcome {
    std::vector<ClientUpdate> updates;  // ascending client id
};

/// Broadcast, local training on every member, aggregation. Clients may train
/// concurrently; the ledger and global parameters change only after all
/// updates are in. Client i trains with seed derive(shard.rng_stream, round_seed).
inline RoundOutcome run_round(ClusterState& cluster, const data::FederatedDataset& dataset,
                              const TrainingSettings& settings, CommLedger& ledger, std::uint64_t round_seed) {
    if (cluster.members.empty()) throw ClientEmptyError("cluster " + std::to_string(cluster.cluster_id) + " has no members");
    std::vector<std::size_t> members = cluster.members;
    std::sort(members.begin(), members.end());
    RoundOutcome out;
    out.updates.resize(members.size());
    const std::size_t workers = std::max<std::size_t>(1, settings.workers);
    if (workers <= 1) {
        nn::Network net(cluster.descriptor);
        for (std::size_t i = 0; i < members.size(); ++i) {
            const auto& shard = dataset.shards.at(members[i]);
            out.updates[i] = local_train(shard, net, cluster.global_params, settings.epochs, settings.batch_size,
                                         settings.learning_rate, derive_seed(shard.rng_stream, {round_seed}));
        }
    } else {
        parallel_for(members.size(), workers, [&](std::size_t i) {
            const auto& shard = dataset.shards.at(members[i]);
            out.updates[i] = local_train(shard, cluster.descriptor, cluster.global_params, settings.epochs,
                                         settings.batch_size, settings.learning_rate,
                                         derive_seed(shard.rng_stream, {round_seed}));
        });
    }
    cluster.global_params = aggregate(out.updates, settings.aggregation);
    ledger.record(2 * members.size(), cluster.global_params.size());
    return out;
}

}  // namespace fedexplore::fed
