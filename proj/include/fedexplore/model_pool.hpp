#pragma once

#include <cstddef>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fedexplore/errors.hpp"
#include "fedexplore/nn.hpp"
#include "fedexplore/rng.hpp"

namespace fedexplore::pool {

struct Rational {
    std::size_t num = 1;
    std::size_t den = 1;

    /// ceil(value * num / den), never below 1.
    std::size_t scale_up(std::size_t value) const {
        const std::size_t v = (value * num + den - 1) / den;
        return v < 1 ? 1 : v;
    }
    friend bool operator==(const Rational&, const Rational&) = default;
    std::string to_string() const { return std::to_string(num) + "/" + std::to_string(den); }
};

struct Kernel {
    std::size_t h = 3;
    std::size_t w = 3;
    friend bool operator==(const Kernel&, const Kernel&) = default;
};

struct PoolConfig {
    std::vector<std::size_t> conv_layer_choices{1, 2};
    std::vector<std::size_t> filter_choices{64, 128, 196, 256};
    std::vector<Kernel> kernel_choices{{3, 3}, {3, 5}, {5, 3}, {5, 5}};
    Rational scale_factor{1, 8};
    std::size_t dense_width = 128;
    nn::TensorShape input_shape{1, 28, 28};
    std::size_t class_count = 10;

    void validate() const {
        if (conv_layer_choices.empty() || filter_choices.empty() || kernel_choices.empty())
            throw ValidationError("model pool: every choice list must be non-empty");
        if (scale_factor.num == 0 || scale_factor.den == 0) throw ValidationError("model pool: scale_factor must be positive");
        if (class_count < 1) throw ValidationError("model pool: class_count must be >= 1");
    }
};

/// One architecture draw before scaling: unscaled filter counts and kernels per conv layer.
struct ArchitectureDraw {
    struct ConvDraw {
        std::size_t filters;
        Kernel kernel;
    };
    std::vector<ConvDraw> convs;
};

/// Conv/MaxPool blocks, then Flatten, Dense(ceil(dense_width * scale)), Dense(K), Softmax.
inline nn::ModelDescriptor descriptor_from_draw(const PoolConfig& pool, const ArchitectureDraw& draw) {
    nn::ModelDescriptor d;
    d.input_shape = pool.input_shape;
    d.class_count = pool.class_count;
    for (const auto& c : draw.convs) {
        d.layers.push_back(nn::LayerSpec::conv(pool.scale_factor.scale_up(c.filters), c.kernel.h, c.kernel.w));
        d.layers.push_back(nn::LayerSpec::max_pool());
    }
    d.layers.push_back(nn::LayerSpec::flatten());
    d.layers.push_back(nn::LayerSpec::dense(pool.scale_factor.scale_up(pool.dense_width)));
    d.layers.push_back(nn::LayerSpec::dense(pool.class_count));
    d.layers.push_back(nn::LayerSpec::softmax());
    return d;
}

inline ArchitectureDraw draw_architecture(const PoolConfig& pool, Rng& rng) {
    auto pick = [&rng](const auto& choices) -> const auto& {
        return choices[std::uniform_int_distribution<std::size_t>(0, choices.size() - 1)(rng)];
    };
    ArchitectureDraw draw;
    const std::size_t layers = pick(pool.conv_layer_choices);
    for (std::size_t i = 0; i < layers; ++i) {
        const std::size_t filters = pick(pool.filter_choices);
        const Kernel kernel = pick(pool.kernel_choices);
        draw.convs.push_back({filters, kernel});
    }
    return draw;
}

inline constexpr int max_sample_attempts = 100;

/// Uniform random architecture from the pool. Draws that do not fit the input
/// geometry are discarded and redrawn.
inline nn::ModelDescriptor sample_descriptor(const PoolConfig& pool, Rng& rng) {
    pool.validate();
    std::string last_error;
    for (int attempt = 0; attempt < max_sample_attempts; ++attempt) {
        auto d = descriptor_from_draw(pool, draw_architecture(pool, rng));
        try {
            nn::validate_classifier(d);
            return d;
        } catch (const DescriptorError& e) {
            last_error = e.what();
        }
    }
    throw PoolExhaustedError("no valid architecture for input " + pool.input_shape.to_string() + " after " +
                             std::to_string(max_sample_attempts) + " draws (last: " + last_error + ")");
}

}  // namespace fedexplore::pool
