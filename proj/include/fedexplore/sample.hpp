#pragma once

#include <cstddef>
#include <vector>

#include "fedexplore/nn.hpp"

namespace fedexplore {

struct LabeledSample {
    std::size_t id = 0;  // position in the generated (or loaded) pool
    nn::Image pixels;    // row-major, values in [0, 1]
    int label = 0;
};

struct SamplePool {
    std::vector<LabeledSample> samples;
    std::size_t class_count = 0;
    nn::TensorShape shape;  // [1, rows, cols]

    std::size_t size() const noexcept { return samples.size(); }
};

}  // namespace fedexplore
