#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "fedexplore/nn.hpp"
#include "fedexplore/rng.hpp"
#include "fedexplore/sample.hpp"

namespace fedexplore {

/// Mini-batch SGD over `samples` for `epochs` full passes. Each epoch visits
/// the samples in a fresh permutation drawn from `rng`; the last batch of an
/// epoch may be short. Loss per batch is the mean cross-entropy.
inline void train_sgd(nn::Network& net, nn::ParameterVector& params, std::span<const LabeledSample> samples,
                      std::size_t epochs, std::size_t batch_size, double lr, Rng& rng) {
    if (samples.empty() || epochs == 0) return;
    batch_size = std::max<std::size_t>(1, batch_size);
    std::vector<std::size_t> order(samples.size());
    std::vector<double> grad(params.size());
    for (std::size_t e = 0; e < epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(order.size(), start + batch_size);
            const double scale = 1.0 / double(end - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t k = start; k < end; ++k) {
                const LabeledSample& s = samples[order[k]];
                net.backward(params.values, s.pixels, s.label, scale, grad, {});
            }
            if (lr != 0.0)
                for (std::size_t i = 0; i < grad.size(); ++i) params.values[i] -= lr * grad[i];
        }
    }
}

inline double mean_loss(nn::Network& net, const nn::ParameterVector& params, std::span<const LabeledSample> samples) {
    if (samples.empty()) return 0.0;
    double total = 0.0;
    for (const LabeledSample& s : samples) total += net.backward(params.values, s.pixels, s.label, 0.0, {}, {});
    return total / double(samples.size());
}

inline double sample_accuracy(nn::Network& net, const nn::ParameterVector& params,
                              std::span<const LabeledSample> samples) {
    if (samples.empty()) return 0.0;
    std::size_t hit = 0;
    for (const LabeledSample& s : samples) hit += nn::argmax(net.forward(params.values, s.pixels)) == s.label;
    return double(hit) / double(samples.size());
}

}  // namespace fedexplore
