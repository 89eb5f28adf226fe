#pragma once

// Shared helpers for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "fedexplore/fed_round.hpp"
#include "fedexplore/nn.hpp"
#include "fedexplore/rng.hpp"

namespace fedexplore::testing {

/// Random small classifier: optional conv blocks, a hidden Dense, Dense(K).
/// Parameter counts stay well under 500.
inline nn::ModelDescriptor tiny_model(Rng& rng, std::size_t class_count = 3) {
    std::uniform_int_distribution<std::size_t> channels(1, 2), side(6, 9), filters(1, 3), kernel(2, 3), hidden(2, 5),
        shape_kind(0, 2);
    nn::ModelDescriptor d;
    d.class_count = class_count;
    const std::size_t kind = shape_kind(rng);
    if (kind == 0) {
        d.input_shape = nn::TensorShape{side(rng)};
        d.layers = {nn::LayerSpec::dense(hidden(rng))};
    } else {
        const std::size_t s = side(rng);
        d.input_shape = nn::TensorShape{channels(rng), s, s};
        d.layers.push_back(nn::LayerSpec::conv(filters(rng), kernel(rng), kernel(rng)));
        d.layers.push_back(nn::LayerSpec::max_pool());
        if (kind == 2 && s >= 9) {
            d.layers.push_back(nn::LayerSpec::conv(filters(rng), 2, 2));
            d.layers.push_back(nn::LayerSpec::max_pool());
        }
        d.layers.push_back(nn::LayerSpec::flatten());
        d.layers.push_back(nn::LayerSpec::dense(hidden(rng)));
    }
    d.layers.push_back(nn::LayerSpec::dense(class_count));
    d.layers.push_back(nn::LayerSpec::softmax());
    return d;
}

/// Parameters with random non-zero biases so every path is exercised.
inline nn::ParameterVector random_params(const nn::ModelDescriptor& d, Rng& rng) {
    nn::ParameterVector p = nn::init_parameters(d, rng);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (double& v : p.values) v += 0.1 * u(rng);
    return p;
}

inline nn::Image random_image(std::size_t size, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    nn::Image x(size);
    for (double& v : x) v = u(rng);
    return x;
}

/// Cross-entropy computed from the forward pass alone.
inline double forward_loss(const nn::ModelDescriptor& d, const nn::ParameterVector& p, const nn::Image& x, int label) {
    const std::vector<nn::Image> batch{x};
    const auto probs = nn::forward(d, p, batch);
    return -std::log(probs.values[std::size_t(label)]);
}

struct FiniteDifference {
    double central = 0.0;
    bool smooth = true;  // false when the two one-sided slopes disagree (a ReLU or max-pool kink)
};

template <class F>
FiniteDifference finite_difference(F&& f, double h) {
    const double f0 = f(0.0), fp = f(h), fm = f(-h);
    FiniteDifference out;
    out.central = (fp - fm) / (2 * h);
    const double right = (fp - f0) / h, left = (f0 - fm) / h;
    out.smooth = std::abs(right - left) <= 0.05 * (std::abs(right) + std::abs(left)) + 1e-6;
    return out;
}

inline double relative_error(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-4});
    return std::abs(a - b) / scale;
}

struct GradientCheck {
    double worst = 0.0;        // largest relative error over smooth coordinates
    std::size_t checked = 0;
    std::size_t kinks = 0;     // coordinates skipped because the loss is not differentiable there
};

/// Every parameter-gradient coordinate of a 3-sample batch against central differences.
inline GradientCheck check_param_gradients(const nn::ModelDescriptor& d, nn::ParameterVector p, Rng& rng,
                                           double h = 1e-4) {
    std::vector<nn::Image> batch;
    std::vector<int> labels;
    for (int i = 0; i < 3; ++i) {
        batch.push_back(random_image(d.input_shape.element_count(), rng));
        labels.push_back(i % int(d.class_count));
    }
    const auto analytic = nn::loss_and_param_gradients(d, p, batch, labels);
    GradientCheck out;
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double saved = p.values[k];
        const auto fd = finite_difference(
            [&](double delta) {
                p.values[k] = saved + delta;
                double total = 0;
                for (std::size_t s = 0; s < batch.size(); ++s) total += forward_loss(d, p, batch[s], labels[s]);
                p.values[k] = saved;
                return total / double(batch.size());
            },
            h);
        if (!fd.smooth) {
            ++out.kinks;
            continue;
        }
        ++out.checked;
        out.worst = std::max(out.worst, relative_error(analytic.gradient.values[k], fd.central));
    }
    return out;
}

inline GradientCheck check_input_gradients(const nn::ModelDescriptor& d, const nn::ParameterVector& p, Rng& rng,
                                           double h = 1e-4) {
    nn::Image x = random_image(d.input_shape.element_count(), rng);
    const int label = int(std::uniform_int_distribution<std::size_t>(0, d.class_count - 1)(rng));
    const auto g = nn::input_gradient(d, p, x, label);
    GradientCheck out;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double saved = x[k];
        const auto fd = finite_difference(
            [&](double delta) {
                x[k] = saved + delta;
                const double l = forward_loss(d, p, x, label);
                x[k] = saved;
                return l;
            },
            h);
        if (!fd.smooth) {
            ++out.kinks;
            continue;
        }
        ++out.checked;
        out.worst = std::max(out.worst, relative_error(g[k], fd.central));
    }
    return out;
}

/// Reference FedAvg written straight from the aggregation contract, one
/// coordinate at a time: clients sorted by id, the lowest-id vector is the
/// shift point, weights are 1/n or n_i / sum(n).
inline std::vector<double> fedavg_oracle(std::vector<fed::ClientUpdate> updates, bool weighted) {
    std::sort(updates.begin(), updates.end(), [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
    double total = 0.0;
    for (const auto& u : updates) total += double(u.sample_count);
    const std::vector<double>& ref = updates.front().updated_params.values;
    std::vector<double> out(ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
        double sum = 0.0;
        for (const auto& u : updates) {
            const double w = weighted ? double(u.sample_count) / total : 1.0 / double(updates.size());
            sum += w * (u.updated_params.values[i] - ref[i]);
        }
        out[i] = ref[i] + sum;
    }
    return out;
}

/// Random update set: 1..8 clients with distinct shuffled ids, shared length.
inline std::vector<fed::ClientUpdate> random_updates(Rng& rng) {
    std::uniform_int_distribution<std::size_t> count(1, 8), len(1, 40), samples(1, 200);
    std::normal_distribution<double> value(0.0, 3.0);
    const std::size_t n = count(rng), l = len(rng);
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = 10 * i + 3;
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<fed::ClientUpdate> ups(n);
    for (std::size_t i = 0; i < n; ++i) {
        ups[i].client_id = ids[i];
        ups[i].sample_count = samples(rng);
        ups[i].updated_params.values.resize(l);
        for (double& v : ups[i].updated_params.values) v = value(rng);
    }
    return ups;
}

}  // namespace fedexplore::testing
