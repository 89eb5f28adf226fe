#pragma once

// Federated dataset construction: synthetic prototype images, IDX loading,
// two-class non-IID partitioning, poisoned-client selection, FGSM and
// label-flip poisoning, and the server's unlabeled holdout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedexplore/errors.hpp"
#include "fedexplore/nn.hpp"
#include "fedexplore/rng.hpp"
#include "fedexplore/sample.hpp"
#include "fedexplore/training.hpp"

namespace fedexplore::data {

struct DatasetSpec {
    std::size_t class_count = 10;
    std::size_t clients = 20;
    std::size_t samples_per_client = 40;
    std::size_t image_side = 14;
    double noise_sigma = 0.1;
    double prototype_contrast = 1.0;
    std::size_t holdout_size = 200;
    std::size_t test_size = 500;
    std::size_t reference_epochs = 30;
    std::uint64_t seed = 1;

    std::size_t training_size() const noexcept { return clients * samples_per_client; }
    std::size_t pool_size() const noexcept { return training_size() + holdout_size + test_size; }

    void validate() const {
        if (class_count < 1 || clients < 1 || samples_per_client < 1 || image_side < 1 || holdout_size < 1)
            throw ValidationError("dataset spec: class_count, clients, samples_per_client, image_side and holdout_size must be positive");
        if (!(noise_sigma >= 0.0)) throw ValidationError("dataset spec: noise_sigma must be >= 0");
        if (!(prototype_contrast > 0.0 && prototype_contrast <= 1.0))
            throw ValidationError("dataset spec: prototype_contrast must lie in (0, 1]");
    }
};

struct ClientShard {
    std::size_t client_id = 0;
    std::vector<LabeledSample> samples;
    std::set<int> classes_present;
    bool poisoned = false;
    std::uint64_t rng_stream = 0;
};

enum class Attack { Fgsm, LabelFlip };

struct PoisonSpec {
    double percent = 0.0;
    Attack attack = Attack::Fgsm;
    double epsilon = 0.25;
};

struct ReferenceModel {
    nn::ModelDescriptor descriptor;
    nn::ParameterVector params;
    std::vector<std::size_t> training_ids;
};

/// The federated view of one experiment's data. Holdout labels exist only for
/// reporting; the algorithm sees `server_unlabeled` alone.
class FederatedDataset {
public:
    std::vector<ClientShard> shards;
    std::vector<nn::Image> server_unlabeled;
    std::vector<LabeledSample> test_set;
    std::set<std::size_t> poisoned_clients;
    std::size_t class_count = 0;
    nn::TensorShape input_shape;

    /// Hidden ground truth of the server holdout. Metrics code only.
    const std::vector<int>& holdout_truth_for_metrics() const noexcept { return holdout_truth_; }
    void set_holdout_truth(std::vector<int> truth) { holdout_truth_ = std::move(truth); }

private:
    std::vector<int> holdout_truth_;
};

// ---------------------------------------------------------------------------
// Synthetic generator

/// Deterministic prototype image for class k: two bars and one Gaussian blob
/// on a dark background, redrawn until it is at least 3.0 (L2) away from
/// every lower-numbered prototype.
inline std::vector<nn::Image> make_prototypes(std::size_t class_count, std::size_t side, std::uint64_t seed,
                                              double contrast = 1.0) {
    std::vector<nn::Image> protos;
    const double min_distance = 3.0;
    for (std::size_t k = 0; k < class_count; ++k) {
        Rng rng(derive_seed(seed, {stream::prototypes, k}));
        nn::Image best;
        double best_gap = -1.0;
        for (int attempt = 0; attempt < 64; ++attempt) {
            nn::Image img(side * side, 0.0);
            std::uniform_int_distribution<std::size_t> pos(0, side - 1);
            std::uniform_int_distribution<std::size_t> len(side / 2, side);
            for (int bar = 0; bar < 2; ++bar) {
                const bool horizontal = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
                const std::size_t across = pos(rng), start = pos(rng), length = len(rng);
                for (std::size_t t = 0; t < 2; ++t)
                    for (std::size_t a = 0; a < length; ++a) {
                        const std::size_t r = horizontal ? across + t : (start + a) % side;
                        const std::size_t c = horizontal ? (start + a) % side : across + t;
                        if (r < side && c < side) img[r * side + c] = 1.0;
                    }
            }
            const double cy = double(pos(rng)), cx = double(pos(rng));
            const double sigma = std::uniform_real_distribution<double>(1.0, 2.5)(rng);
            for (std::size_t r = 0; r < side; ++r)
                for (std::size_t c = 0; c < side; ++c) {
                    const double d2 = (double(r) - cy) * (double(r) - cy) + (double(c) - cx) * (double(c) - cx);
                    img[r * side + c] = std::max(img[r * side + c], std::exp(-d2 / (2 * sigma * sigma)));
                }
            double gap = std::numeric_limits<double>::infinity();
            for (const auto& p : protos) {
                double d2 = 0.0;
                for (std::size_t i = 0; i < img.size(); ++i) d2 += (img[i] - p[i]) * (img[i] - p[i]);
                gap = std::min(gap, std::sqrt(d2));
            }
            if (gap > best_gap) {
                best_gap = gap;
                best = std::move(img);
            }
            if (best_gap >= min_distance) break;
        }
        protos.push_back(std::move(best));
    }
    for (auto& p : protos)
        for (double& v : p) v = 0.5 + contrast * (v - 0.5);
    return protos;
}

/// Generates `count` samples, sample i having label i mod K, pixels
/// clamp(prototype + N(0, noise_sigma)).
inline SamplePool generate_synthetic(const DatasetSpec& spec, std::size_t count) {
    spec.validate();
    const auto protos = make_prototypes(spec.class_count, spec.image_side, spec.seed, spec.prototype_contrast);
    SamplePool pool;
    pool.class_count = spec.class_count;
    pool.shape = nn::TensorShape{1, spec.image_side, spec.image_side};
    pool.samples.reserve(count);
    Rng rng(derive_seed(spec.seed, {stream::noise}));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < count; ++i) {
        LabeledSample s;
        s.id = i;
        s.label = int(i % spec.class_count);
        s.pixels = protos[std::size_t(s.label)];
        if (spec.noise_sigma > 0.0)
            for (double& v : s.pixels) v = std::clamp(v + spec.noise_sigma * noise(rng), 0.0, 1.0);
        pool.samples.push_back(std::move(s));
    }
    return pool;
}

inline SamplePool generate_synthetic(const DatasetSpec& spec) { return generate_synthetic(spec, spec.pool_size()); }

// ---------------------------------------------------------------------------
// IDX loader (big-endian; images magic 0x00000803, labels magic 0x00000801)

namespace detail {
inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& what) {
    if (off + 4 > b.size()) throw FormatError(what + ": truncated header");
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8) |
           std::uint32_t(b[off + 3]);
}
}  // namespace detail

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

inline SamplePool parse_idx(const std::vector<unsigned char>& images, const std::vector<unsigned char>& labels) {
    const std::uint32_t im_magic = detail::read_be32(images, 0, "images");
    if (im_magic != idx_images_magic) throw FormatError("images: bad magic " + std::to_string(im_magic));
    const std::uint32_t lb_magic = detail::read_be32(labels, 0, "labels");
    if (lb_magic != idx_labels_magic) throw FormatError("labels: bad magic " + std::to_string(lb_magic));
    const std::size_t count = detail::read_be32(images, 4, "images");
    const std::size_t rows = detail::read_be32(images, 8, "images");
    const std::size_t cols = detail::read_be32(images, 12, "images");
    const std::size_t label_count = detail::read_be32(labels, 4, "labels");
    if (count != label_count)
        throw ConsistencyError("images file holds " + std::to_string(count) + " items, labels file " +
                               std::to_string(label_count));
    if (rows == 0 || cols == 0) throw FormatError("images: zero-sized image dims");
    if (images.size() < 16 + count * rows * cols) throw FormatError("images: truncated pixel data");
    if (labels.size() < 8 + count) throw FormatError("labels: truncated label data");
    SamplePool pool;
    pool.shape = nn::TensorShape{1, rows, cols};
    pool.samples.reserve(count);
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < count; ++i) {
        LabeledSample s;
        s.id = i;
        s.label = labels[8 + i];
        max_label = std::max<std::size_t>(max_label, std::size_t(s.label));
        s.pixels.resize(rows * cols);
        const unsigned char* px = images.data() + 16 + i * rows * cols;
        for (std::size_t k = 0; k < rows * cols; ++k) s.pixels[k] = double(px[k]) / 255.0;
        pool.samples.push_back(std::move(s));
    }
    pool.class_count = count ? max_label + 1 : 0;
    return pool;
}

inline SamplePool load_idx(const std::string& images_path, const std::string& labels_path) {
    return parse_idx(detail::read_file(images_path), detail::read_file(labels_path));
}

// ---------------------------------------------------------------------------
// Partitioning and poisoning

/// Splits the pool across `clients` shards, each holding exactly two classes.
///
/// Construction: 2N class slots are laid out in runs (one run per class, run
/// lengths balanced to within one) and a class's samples are divided evenly
/// over its slots. The slots are then paired at random; a repair pass swaps
/// partners until no pair repeats a class. If repair fails, slot i is paired
/// with slot i + N, which always spans two classes because no run is longer
/// than N. A client ends up with a single class only when a class has fewer
/// samples than slots.
inline std::vector<ClientShard> partition_non_iid(const SamplePool& pool, std::size_t clients, std::uint64_t seed) {
    if (clients == 0) throw InsufficientDataError("partition: zero clients");
    if (pool.class_count < 2) throw ValidationError("partition: needs at least two classes");
    if (pool.size() < clients)
        throw InsufficientDataError("partition: " + std::to_string(pool.size()) + " samples for " +
                                    std::to_string(clients) + " clients");
    Rng rng(derive_seed(seed, {stream::partition}));

    std::vector<std::vector<std::size_t>> by_class(std::max<std::size_t>(pool.class_count, 1));
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const int label = pool.samples[i].label;
        if (label < 0 || std::size_t(label) >= by_class.size()) throw LabelRangeError("partition: label out of range");
        by_class[std::size_t(label)].push_back(i);
    }
    std::vector<std::size_t> classes;
    for (std::size_t k = 0; k < by_class.size(); ++k)
        if (!by_class[k].empty()) classes.push_back(k);
    if (classes.empty()) throw InsufficientDataError("partition: empty pool");
    for (auto& ids : by_class) std::shuffle(ids.begin(), ids.end(), rng);

    const std::size_t slots = 2 * clients;
    std::vector<std::size_t> slot_class;
    slot_class.reserve(slots);
    std::vector<std::size_t> slot_rank;  // index of the slot within its class run
    for (std::size_t c = 0; c < classes.size(); ++c) {
        const std::size_t run = slots / classes.size() + (c < slots % classes.size() ? 1 : 0);
        for (std::size_t r = 0; r < run; ++r) {
            slot_class.push_back(classes[c]);
            slot_rank.push_back(r);
        }
    }
    std::vector<std::size_t> run_length(by_class.size(), 0);
    for (std::size_t k : slot_class) ++run_length[k];

    // Random pairing of the 2N slots, then repair so both slots of a pair hold
    // different classes.
    std::vector<std::size_t> perm(slots);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> pair_a(perm.begin(), perm.begin() + std::ptrdiff_t(clients));
    std::vector<std::size_t> pair_b(perm.begin() + std::ptrdiff_t(clients), perm.end());
    auto clash = [&](std::size_t i) { return slot_class[pair_a[i]] == slot_class[pair_b[i]]; };
    bool repaired = true;
    for (std::size_t i = 0; i < clients && repaired; ++i) {
        if (!clash(i)) continue;
        repaired = false;
        for (std::size_t j = 0; j < clients && !repaired; ++j) {
            if (j == i) continue;
            std::swap(pair_b[i], pair_b[j]);
            repaired = !clash(i) && !clash(j);
            if (!repaired) std::swap(pair_b[i], pair_b[j]);
        }
    }
    if (!repaired)
        for (std::size_t i = 0; i < clients; ++i) {
            pair_a[i] = i;
            pair_b[i] = i + clients;
        }

    std::vector<ClientShard> shards(clients);
    for (std::size_t c = 0; c < clients; ++c) {
        shards[c].client_id = c;
        shards[c].rng_stream = derive_seed(seed, {stream::local_train, c});
    }
    for (std::size_t c = 0; c < clients; ++c)
        for (std::size_t s : {pair_a[c], pair_b[c]}) {
            const std::size_t k = slot_class[s];
            const std::size_t m = run_length[k];
            const auto& ids = by_class[k];
            const std::size_t lo = slot_rank[s] * ids.size() / m, hi = (slot_rank[s] + 1) * ids.size() / m;
            for (std::size_t j = lo; j < hi; ++j) shards[c].samples.push_back(pool.samples[ids[j]]);
            if (hi > lo) shards[c].classes_present.insert(int(k));
        }
    for (auto& shard : shards) {
        if (shard.samples.empty())
            throw InsufficientDataError("partition: client " + std::to_string(shard.client_id) + " received no samples");
        std::sort(shard.samples.begin(), shard.samples.end(),
                  [](const LabeledSample& a, const LabeledSample& b) { return a.id < b.id; });
    }
    return shards;
}

/// Exactly round(N * percent / 100) distinct client ids, uniform without replacement.
inline std::set<std::size_t> select_poisoned_clients(std::size_t clients, double percent, std::uint64_t seed) {
    if (!(percent >= 0.0 && percent <= 100.0)) throw ValidationError("poison percent must lie in [0, 100]");
    const auto count = std::size_t(std::llround(double(clients) * percent / 100.0));
    std::vector<std::size_t> ids(clients);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {stream::poison_select}));
    std::shuffle(ids.begin(), ids.end(), rng);
    return {ids.begin(), ids.begin() + std::ptrdiff_t(std::min(count, clients))};
}

/// x <- clamp(x + epsilon * sign(d loss / d x), 0, 1) against the reference model; labels kept.
inline ClientShard poison_fgsm(ClientShard shard, const nn::ModelDescriptor& descriptor,
                               const nn::ParameterVector& params, double epsilon) {
    if (!(epsilon >= 0.0)) throw ValidationError("fgsm: epsilon must be >= 0");
    nn::Network net(descriptor);
    net.check_params(params.values);
    nn::Image grad;
    for (LabeledSample& s : shard.samples) {
        net.check_input(s.pixels);
        net.check_label(s.label);
        grad.assign(s.pixels.size(), 0.0);
        net.backward(params.values, s.pixels, s.label, 0.0, {}, grad);
        for (std::size_t i = 0; i < s.pixels.size(); ++i) {
            const double sign = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
            s.pixels[i] = std::clamp(s.pixels[i] + epsilon * sign, 0.0, 1.0);
        }
    }
    shard.poisoned = true;
    return shard;
}

/// Every label l becomes (l + 1) mod K.
inline ClientShard poison_label_flip(ClientShard shard, std::size_t class_count) {
    if (class_count < 2) throw ValidationError("label flip needs at least two classes");
    std::set<int> present;
    for (LabeledSample& s : shard.samples) {
        s.label = int((std::size_t(s.label) + 1) % class_count);
        present.insert(s.label);
    }
    shard.classes_present = std::move(present);
    shard.poisoned = true;
    return shard;
}

/// Small fixed CNN standing in for the attacker's gradient source.
inline nn::ModelDescriptor reference_descriptor(const nn::TensorShape& input, std::size_t class_count) {
    nn::ModelDescriptor d;
    d.input_shape = input;
    d.class_count = class_count;
    d.layers = {nn::LayerSpec::conv(8, 3, 3), nn::LayerSpec::max_pool(), nn::LayerSpec::flatten(),
                nn::LayerSpec::dense(32), nn::LayerSpec::dense(class_count), nn::LayerSpec::softmax()};
    return d;
}

/// Trains the reference model on a clean 10% random split of `pool`
/// (SGD, lr 0.05, batch 16).
inline ReferenceModel build_reference_model(const SamplePool& pool, const DatasetSpec& spec) {
    if (pool.samples.empty()) throw InsufficientDataError("reference model: empty pool");
    Rng rng(derive_seed(spec.seed, {stream::reference}));
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::max<std::size_t>(1, pool.size() / 10));
    std::sort(idx.begin(), idx.end());
    std::vector<LabeledSample> split;
    ReferenceModel ref;
    for (std::size_t i : idx) {
        split.push_back(pool.samples[i]);
        ref.training_ids.push_back(pool.samples[i].id);
    }
    ref.descriptor = reference_descriptor(pool.shape, pool.class_count);
    ref.params = nn::init_parameters(ref.descriptor, rng);
    nn::Network net(ref.descriptor);
    train_sgd(net, ref.params, split, spec.reference_epochs, 16, 0.05, rng);
    return ref;
}

// ---------------------------------------------------------------------------
// Assembly

/// Splits a labeled pool into test set, server holdout and client training
/// data, partitions, selects and poisons clients. When `pool` is not given the
/// synthetic generator supplies it.
inline FederatedDataset build_federated_dataset(const DatasetSpec& spec, const PoisonSpec& poison,
                                                std::optional<SamplePool> loaded = std::nullopt) {
    spec.validate();
    SamplePool pool = loaded ? std::move(*loaded) : generate_synthetic(spec);
    const std::size_t needed = spec.pool_size();
    if (pool.size() < needed)
        throw InsufficientDataError("dataset: pool holds " + std::to_string(pool.size()) + " samples, need " +
                                    std::to_string(needed));

    Rng rng(derive_seed(spec.seed, {stream::split}));
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    FederatedDataset ds;
    ds.class_count = pool.class_count;
    ds.input_shape = pool.shape;
    std::size_t cursor = 0;
    for (; cursor < spec.test_size; ++cursor) ds.test_set.push_back(pool.samples[order[cursor]]);
    std::vector<int> truth;
    for (std::size_t k = 0; k < spec.holdout_size; ++k, ++cursor) {
        ds.server_unlabeled.push_back(pool.samples[order[cursor]].pixels);
        truth.push_back(pool.samples[order[cursor]].label);
    }
    ds.set_holdout_truth(std::move(truth));

    SamplePool training;
    training.class_count = pool.class_count;
    training.shape = pool.shape;
    for (std::size_t k = 0; k < spec.training_size(); ++k, ++cursor) training.samples.push_back(pool.samples[order[cursor]]);
    std::sort(training.samples.begin(), training.samples.end(),
              [](const LabeledSample& a, const LabeledSample& b) { return a.id < b.id; });

    ds.shards = partition_non_iid(training, spec.clients, spec.seed);
    ds.poisoned_clients = select_poisoned_clients(spec.clients, poison.percent, spec.seed);
    if (!ds.poisoned_clients.empty()) {
        if (poison.attack == Attack::Fgsm) {
            const ReferenceModel ref = build_reference_model(training, spec);
            for (std::size_t id : ds.poisoned_clients)
                ds.shards[id] = poison_fgsm(std::move(ds.shards[id]), ref.descriptor, ref.params, poison.epsilon);
        } else {
            for (std::size_t id : ds.poisoned_clients)
                ds.shards[id] = poison_label_flip(std::move(ds.shards[id]), ds.class_count);
        }
    }
    return ds;
}

}  // namespace fedexplore::data
