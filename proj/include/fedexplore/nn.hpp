#pragma once

// Minimal feed-forward CNN engine: Conv / MaxPool / Flatten / Dense / Softmax,
// exact backprop for parameters and inputs, plain SGD. All math in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedexplore/errors.hpp"
#include "fedexplore/rng.hpp"

namespace fedexplore::nn {

using Image = std::vector<double>;

struct TensorShape {
    std::vector<std::size_t> dims;

    TensorShape() = default;
    TensorShape(std::initializer_list<std::size_t> d) : dims(d) {}
    explicit TensorShape(std::vector<std::size_t> d) : dims(std::move(d)) {}

    std::size_t rank() const noexcept { return dims.size(); }
    std::size_t operator[](std::size_t i) const { return dims.at(i); }

    std::size_t element_count() const noexcept {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
    }

    bool valid() const noexcept {
        return !dims.empty() && std::all_of(dims.begin(), dims.end(), [](std::size_t d) { return d >= 1; });
    }

    friend bool operator==(const TensorShape&, const TensorShape&) = default;

    std::string to_string() const {
        std::string s = "[";
        for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
        return s + "]";
    }
};

enum class LayerKind { Conv, MaxPool, Flatten, Dense, SoftmaxOutput };

struct LayerSpec {
    LayerKind kind = LayerKind::Flatten;
    std::size_t filters = 0;   // Conv
    std::size_t kernel_h = 0;  // Conv
    std::size_t kernel_w = 0;  // Conv
    std::size_t units = 0;     // Dense

    static LayerSpec conv(std::size_t filters, std::size_t kh, std::size_t kw) {
        return {LayerKind::Conv, filters, kh, kw, 0};
    }
    static LayerSpec max_pool() { return {LayerKind::MaxPool, 0, 0, 0, 0}; }
    static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0, 0, 0}; }
    static LayerSpec dense(std::size_t units) { return {LayerKind::Dense, 0, 0, 0, units}; }
    static LayerSpec softmax() { return {LayerKind::SoftmaxOutput, 0, 0, 0, 0}; }

    bool trainable() const noexcept { return kind == LayerKind::Conv || kind == LayerKind::Dense; }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;

    std::string to_string() const {
        switch (kind) {
            case LayerKind::Conv:
                return "Conv" + std::to_string(filters) + "/" + std::to_string(kernel_h) + "x" + std::to_string(kernel_w);
            case LayerKind::MaxPool: return "MaxPool";
            case LayerKind::Flatten: return "Flatten";
            case LayerKind::Dense: return "Dense" + std::to_string(units);
            case LayerKind::SoftmaxOutput: return "Softmax";
        }
        return "?";
    }
};

struct ModelDescriptor {
    TensorShape input_shape;
    std::vector<LayerSpec> layers;
    std::size_t class_count = 0;

    friend bool operator==(const ModelDescriptor&, const ModelDescriptor&) = default;

    std::string to_string() const {
        std::string s = input_shape.to_string();
        for (const auto& l : layers) s += " " + l.to_string();
        return s;
    }
};

/// Output shape of every layer, in order. Throws DescriptorError when a layer
/// cannot consume its predecessor's output.
inline std::vector<TensorShape> infer_shapes(const ModelDescriptor& desc) {
    if (!desc.input_shape.valid()) throw DescriptorError("input shape " + desc.input_shape.to_string() + " has a zero dim");
    std::vector<TensorShape> shapes;
    shapes.reserve(desc.layers.size());
    TensorShape cur = desc.input_shape;
    for (std::size_t i = 0; i < desc.layers.size(); ++i) {
        const LayerSpec& l = desc.layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" + l.to_string() + ")";
        switch (l.kind) {
            case LayerKind::Conv: {
                if (cur.rank() != 3) throw DescriptorError(where + ": expects [C,H,W] input, got " + cur.to_string());
                if (l.filters < 1 || l.kernel_h < 1 || l.kernel_w < 1) throw DescriptorError(where + ": zero-sized filter bank");
                if (l.kernel_h > cur[1] || l.kernel_w > cur[2])
                    throw DescriptorError(where + ": kernel larger than input " + cur.to_string());
                cur = TensorShape{l.filters, cur[1] - l.kernel_h + 1, cur[2] - l.kernel_w + 1};
                break;
            }
            case LayerKind::MaxPool: {
                if (cur.rank() != 3) throw DescriptorError(where + ": expects [C,H,W] input, got " + cur.to_string());
                if (cur[1] < 2 || cur[2] < 2) throw DescriptorError(where + ": input " + cur.to_string() + " too small to pool");
                cur = TensorShape{cur[0], cur[1] / 2, cur[2] / 2};
                break;
            }
            case LayerKind::Flatten: cur = TensorShape{cur.element_count()}; break;
            case LayerKind::Dense: {
                if (l.units < 1) throw DescriptorError(where + ": output width must be >= 1");
                cur = TensorShape{l.units};
                break;
            }
            case LayerKind::SoftmaxOutput: {
                if (cur.rank() != 1) throw DescriptorError(where + ": expects a flat input, got " + cur.to_string());
                break;
            }
        }
        shapes.push_back(cur);
    }
    return shapes;
}

/// Full classifier check on top of shape chaining: a MaxPool after every Conv,
/// and the model ends with Dense(K) + SoftmaxOutput.
inline void validate_classifier(const ModelDescriptor& desc) {
    auto shapes = infer_shapes(desc);
    const auto& ls = desc.layers;
    if (desc.class_count < 1) throw DescriptorError("class_count must be >= 1");
    if (ls.size() < 2 || ls.back().kind != LayerKind::SoftmaxOutput || ls[ls.size() - 2].kind != LayerKind::Dense)
        throw DescriptorError("classifier must end with Dense(K) + SoftmaxOutput");
    if (ls[ls.size() - 2].units != desc.class_count)
        throw DescriptorError("final Dense width " + std::to_string(ls[ls.size() - 2].units) + " != class_count " +
                              std::to_string(desc.class_count));
    for (std::size_t i = 0; i + 1 < ls.size(); ++i) {
        if (ls[i].kind == LayerKind::SoftmaxOutput) throw DescriptorError("SoftmaxOutput must be the last layer");
        if (ls[i].kind == LayerKind::Conv && ls[i + 1].kind != LayerKind::MaxPool)
            throw DescriptorError("layer " + std::to_string(i) + ": Conv must be followed by MaxPool");
    }
}

/// ReLU follows every Conv and every Dense that does not feed the softmax.
inline bool applies_relu(const ModelDescriptor& desc, std::size_t i) {
    const auto& ls = desc.layers;
    if (ls[i].kind == LayerKind::Conv) return true;
    if (ls[i].kind == LayerKind::Dense) return i + 1 < ls.size() && ls[i + 1].kind != LayerKind::SoftmaxOutput;
    return false;
}

/// (layer-index, offset, length) window into a flat parameter vector.
/// Layout inside a window: weights first, then biases.
///   Conv:  weights [filters][in_channels][kh][kw], biases [filters]
///   Dense: weights [units][in_width],              biases [units]
struct ParamView {
    std::size_t layer_index = 0;
    std::size_t offset = 0;
    std::size_t length = 0;
    std::size_t weight_count = 0;

    friend bool operator==(const ParamView&, const ParamView&) = default;
};

inline std::vector<ParamView> parameter_layout(const ModelDescriptor& desc) {
    auto shapes = infer_shapes(desc);
    std::vector<ParamView> views;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < desc.layers.size(); ++i) {
        const LayerSpec& l = desc.layers[i];
        const TensorShape& in = i == 0 ? desc.input_shape : shapes[i - 1];
        std::size_t weights = 0, biases = 0;
        if (l.kind == LayerKind::Conv) {
            weights = l.filters * in[0] * l.kernel_h * l.kernel_w;
            biases = l.filters;
        } else if (l.kind == LayerKind::Dense) {
            weights = in.element_count() * l.units;
            biases = l.units;
        } else {
            continue;
        }
        views.push_back({i, offset, weights + biases, weights});
        offset += weights + biases;
    }
    return views;
}

inline std::size_t parameter_count(const ModelDescriptor& desc) {
    std::size_t n = 0;
    for (const auto& v : parameter_layout(desc)) n += v.length;
    return n;
}

template <class Tag>
struct FlatVector {
    std::vector<double> values;
    std::vector<ParamView> layout;

    std::size_t size() const noexcept { return values.size(); }
    std::span<double> view(const ParamView& v) { return std::span<double>(values).subspan(v.offset, v.length); }
    std::span<const double> view(const ParamView& v) const {
        return std::span<const double>(values).subspan(v.offset, v.length);
    }

    friend bool operator==(const FlatVector&, const FlatVector&) = default;
};

struct ParamTag {};
struct GradTag {};
using ParameterVector = FlatVector<ParamTag>;
using GradientVector = FlatVector<GradTag>;

/// Glorot-uniform weights, U(-s, s) with s = sqrt(6 / (fan_in + fan_out)); zero biases.
inline ParameterVector init_parameters(const ModelDescriptor& desc, Rng& rng) {
    auto shapes = infer_shapes(desc);
    ParameterVector p;
    p.layout = parameter_layout(desc);
    p.values.assign(std::accumulate(p.layout.begin(), p.layout.end(), std::size_t{0},
                                    [](std::size_t a, const ParamView& v) { return a + v.length; }),
                    0.0);
    for (const auto& v : p.layout) {
        const LayerSpec& l = desc.layers[v.layer_index];
        const TensorShape& in = v.layer_index == 0 ? desc.input_shape : shapes[v.layer_index - 1];
        double fan_in = 0, fan_out = 0;
        if (l.kind == LayerKind::Conv) {
            fan_in = double(in[0] * l.kernel_h * l.kernel_w);
            fan_out = double(l.filters * l.kernel_h * l.kernel_w);
        } else {
            fan_in = double(in.element_count());
            fan_out = double(l.units);
        }
        const double s = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-s, s);
        auto w = p.view(v);
        for (std::size_t k = 0; k < v.weight_count; ++k) w[k] = dist(rng);
    }
    return p;
}

/// Row-major rows x cols matrix of class probabilities.
struct ProbabilityMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(values).subspan(r * cols, cols);
    }
};

struct LossAndGradient {
    double loss = 0.0;
    GradientVector gradient;
};

/// Bound, reusable evaluator for one descriptor. Holds per-layer scratch
/// buffers, so one instance must not be shared between threads.
class Network {
public:
    explicit Network(ModelDescriptor desc) : desc_(std::move(desc)) {
        validate_classifier(desc_);
        shapes_ = infer_shapes(desc_);
        layout_ = parameter_layout(desc_);
        view_of_layer_.assign(desc_.layers.size(), npos);
        for (std::size_t k = 0; k < layout_.size(); ++k) view_of_layer_[layout_[k].layer_index] = k;
        param_count_ = layout_.empty() ? 0 : layout_.back().offset + layout_.back().length;
        acts_.resize(desc_.layers.size());
        grads_.resize(desc_.layers.size());
        pool_index_.resize(desc_.layers.size());
        for (std::size_t i = 0; i < shapes_.size(); ++i) {
            acts_[i].assign(shapes_[i].element_count(), 0.0);
            grads_[i].assign(shapes_[i].element_count(), 0.0);
            if (desc_.layers[i].kind == LayerKind::MaxPool) pool_index_[i].assign(shapes_[i].element_count(), 0);
        }
        input_grad_.assign(input_size(), 0.0);
    }

    const ModelDescriptor& descriptor() const noexcept { return desc_; }
    const std::vector<ParamView>& layout() const noexcept { return layout_; }
    std::size_t parameter_count() const noexcept { return param_count_; }
    std::size_t input_size() const noexcept { return desc_.input_shape.element_count(); }
    std::size_t class_count() const noexcept { return desc_.class_count; }

    void check_params(std::span<const double> params) const {
        if (params.size() != param_count_)
            throw LayoutError("parameter vector has " + std::to_string(params.size()) + " values, descriptor needs " +
                              std::to_string(param_count_));
    }
    void check_input(std::span<const double> x) const {
        if (x.size() != input_size())
            throw InputShapeError("sample has " + std::to_string(x.size()) + " values, model expects " +
                                  desc_.input_shape.to_string());
    }
    void check_label(int label) const {
        if (label < 0 || std::size_t(label) >= desc_.class_count)
            throw LabelRangeError("label " + std::to_string(label) + " outside [0, " + std::to_string(desc_.class_count) + ")");
    }

    /// Forward pass for one sample; returns the class-probability row.
    std::span<const double> forward(std::span<const double> params, std::span<const double> x) {
        const double* in = x.data();
        TensorShape in_shape = desc_.input_shape;
        for (std::size_t i = 0; i < desc_.layers.size(); ++i) {
            const LayerSpec& l = desc_.layers[i];
            double* out = acts_[i].data();
            switch (l.kind) {
                case LayerKind::Conv: conv_forward(l, in_shape, shapes_[i], layer_params(params, i), in, out); break;
                case LayerKind::MaxPool: pool_forward(in_shape, shapes_[i], in, out, pool_index_[i].data()); break;
                case LayerKind::Flatten: std::copy(in, in + acts_[i].size(), out); break;
                case LayerKind::Dense: dense_forward(l, in_shape.element_count(), layer_params(params, i), in, out); break;
                case LayerKind::SoftmaxOutput: softmax(in, out, acts_[i].size()); break;
            }
            if (applies_relu(desc_, i))
                for (double& v : acts_[i]) v = v > 0.0 ? v : 0.0;
            in = out;
            in_shape = shapes_[i];
        }
        return acts_.back();
    }

    /// Cross-entropy of one sample. Accumulates d(loss)/d(params) * scale into
    /// grad (when non-empty) and writes d(loss)/d(input) into input_grad (when
    /// non-empty). Returns the loss.
    double backward(std::span<const double> params, std::span<const double> x, int label, double scale,
                    std::span<double> grad, std::span<double> input_grad) {
        forward(params, x);
        const std::size_t n = desc_.layers.size();
        // Softmax + cross-entropy: dL/dlogits = p - onehot(label), loss = logsumexp(z) - z_label.
        const std::vector<double>& logits = acts_[n - 2];
        const double zmax = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (double z : logits) sum += std::exp(z - zmax);
        const double loss = zmax + std::log(sum) - logits[std::size_t(label)];
        {
            std::vector<double>& g = grads_[n - 2];
            const std::vector<double>& p = acts_[n - 1];
            for (std::size_t k = 0; k < g.size(); ++k) g[k] = p[k] - (k == std::size_t(label) ? 1.0 : 0.0);
        }
        const bool want_input = !input_grad.empty();
        for (std::size_t ii = n - 1; ii-- > 0;) {
            const LayerSpec& l = desc_.layers[ii];
            std::vector<double>& gout = grads_[ii];
            if (applies_relu(desc_, ii)) {
                const std::vector<double>& a = acts_[ii];
                for (std::size_t k = 0; k < gout.size(); ++k)
                    if (a[k] <= 0.0) gout[k] = 0.0;
            }
            const double* in = ii == 0 ? x.data() : acts_[ii - 1].data();
            const TensorShape& in_shape = ii == 0 ? desc_.input_shape : shapes_[ii - 1];
            const bool need_gin = ii > 0 || want_input;
            double* gin = ii == 0 ? input_grad_.data() : grads_[ii - 1].data();
            const std::size_t in_size = in_shape.element_count();
            switch (l.kind) {
                case LayerKind::Conv: {
                    std::span<double> gp = grad.empty() ? std::span<double>{} : layer_grad(grad, ii);
                    conv_backward(l, in_shape, shapes_[ii], layer_params(params, ii), in, gout.data(), gp, scale,
                                  need_gin ? gin : nullptr);
                    break;
                }
                case LayerKind::Dense: {
                    std::span<double> gp = grad.empty() ? std::span<double>{} : layer_grad(grad, ii);
                    dense_backward(l, in_size, layer_params(params, ii), in, gout.data(), gp, scale,
                                   need_gin ? gin : nullptr);
                    break;
                }
                case LayerKind::MaxPool: {
                    if (need_gin) {
                        std::fill(gin, gin + in_size, 0.0);
                        const std::size_t* idx = pool_index_[ii].data();
                        for (std::size_t k = 0; k < gout.size(); ++k) gin[idx[k]] += gout[k];
                    }
                    break;
                }
                case LayerKind::Flatten:
                    if (need_gin) std::copy(gout.begin(), gout.end(), gin);
                    break;
                case LayerKind::SoftmaxOutput:
                    throw DescriptorError("SoftmaxOutput must be the last layer");
            }
        }
        if (want_input) std::copy(input_grad_.begin(), input_grad_.end(), input_grad.begin());
        return loss;
    }

private:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    std::span<const double> layer_params(std::span<const double> params, std::size_t layer) const {
        const ParamView& v = layout_[view_of_layer_[layer]];
        return params.subspan(v.offset, v.length);
    }
    std::span<double> layer_grad(std::span<double> grad, std::size_t layer) const {
        const ParamView& v = layout_[view_of_layer_[layer]];
        return grad.subspan(v.offset, v.length);
    }

    static void conv_forward(const LayerSpec& l, const TensorShape& in_s, const TensorShape& out_s,
                             std::span<const double> p, const double* in, double* out) {
        const std::size_t C = in_s[0], H = in_s[1], W = in_s[2];
        const std::size_t F = l.filters, KH = l.kernel_h, KW = l.kernel_w;
        const std::size_t OH = out_s[1], OW = out_s[2];
        const double* w = p.data();
        const double* b = p.data() + F * C * KH * KW;
        for (std::size_t f = 0; f < F; ++f) {
            double* o = out + f * OH * OW;
            std::fill(o, o + OH * OW, b[f]);
            for (std::size_t c = 0; c < C; ++c) {
                const double* ic = in + c * H * W;
                for (std::size_t ky = 0; ky < KH; ++ky) {
                    for (std::size_t kx = 0; kx < KW; ++kx) {
                        const double wv = w[((f * C + c) * KH + ky) * KW + kx];
                        for (std::size_t y = 0; y < OH; ++y) {
                            const double* irow = ic + (y + ky) * W + kx;
                            double* orow = o + y * OW;
                            for (std::size_t xx = 0; xx < OW; ++xx) orow[xx] += wv * irow[xx];
                        }
                    }
                }
            }
        }
    }

    static void conv_backward(const LayerSpec& l, const TensorShape& in_s, const TensorShape& out_s,
                              std::span<const double> p, const double* in, const double* gout, std::span<double> gp,
                              double scale, double* gin) {
        const std::size_t C = in_s[0], H = in_s[1], W = in_s[2];
        const std::size_t F = l.filters, KH = l.kernel_h, KW = l.kernel_w;
        const std::size_t OH = out_s[1], OW = out_s[2];
        const double* w = p.data();
        if (gin) std::fill(gin, gin + C * H * W, 0.0);
        for (std::size_t f = 0; f < F; ++f) {
            const double* go = gout + f * OH * OW;
            if (!gp.empty()) {
                double bsum = 0.0;
                for (std::size_t k = 0; k < OH * OW; ++k) bsum += go[k];
                gp[F * C * KH * KW + f] += scale * bsum;
            }
            for (std::size_t c = 0; c < C; ++c) {
                const double* ic = in + c * H * W;
                double* gc = gin ? gin + c * H * W : nullptr;
                for (std::size_t ky = 0; ky < KH; ++ky) {
                    for (std::size_t kx = 0; kx < KW; ++kx) {
                        const std::size_t widx = ((f * C + c) * KH + ky) * KW + kx;
                        double acc = 0.0;
                        const double wv = w[widx];
                        for (std::size_t y = 0; y < OH; ++y) {
                            const double* irow = ic + (y + ky) * W + kx;
                            const double* grow = go + y * OW;
                            for (std::size_t xx = 0; xx < OW; ++xx) acc += grow[xx] * irow[xx];
                            if (gc) {
                                double* girow = gc + (y + ky) * W + kx;
                                for (std::size_t xx = 0; xx < OW; ++xx) girow[xx] += wv * grow[xx];
                            }
                        }
                        if (!gp.empty()) gp[widx] += scale * acc;
                    }
                }
            }
        }
    }

    static void pool_forward(const TensorShape& in_s, const TensorShape& out_s, const double* in, double* out,
                             std::size_t* index) {
        const std::size_t C = in_s[0], H = in_s[1], W = in_s[2];
        const std::size_t OH = out_s[1], OW = out_s[2];
        (void)H;
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t y = 0; y < OH; ++y) {
                for (std::size_t xx = 0; xx < OW; ++xx) {
                    // Ties resolve to the first element in row-major window order.
                    std::size_t best = (c * in_s[1] + 2 * y) * W + 2 * xx;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t k = (c * in_s[1] + 2 * y + dy) * W + 2 * xx + dx;
                            if (in[k] > in[best]) best = k;
                        }
                    const std::size_t o = (c * OH + y) * OW + xx;
                    out[o] = in[best];
                    index[o] = best;
                }
            }
        }
    }

    static void dense_forward(const LayerSpec& l, std::size_t in_n, std::span<const double> p, const double* in,
                              double* out) {
        const double* w = p.data();
        const double* b = p.data() + l.units * in_n;
        for (std::size_t o = 0; o < l.units; ++o) {
            const double* wr = w + o * in_n;
            double acc = 0.0;
            for (std::size_t i = 0; i < in_n; ++i) acc += wr[i] * in[i];
            out[o] = acc + b[o];
        }
    }

    static void dense_backward(const LayerSpec& l, std::size_t in_n, std::span<const double> p, const double* in,
                               const double* gout, std::span<double> gp, double scale, double* gin) {
        const double* w = p.data();
        if (gin) std::fill(gin, gin + in_n, 0.0);
        for (std::size_t o = 0; o < l.units; ++o) {
            const double g = gout[o];
            if (g == 0.0) continue;
            if (!gp.empty()) {
                double* gw = gp.data() + o * in_n;
                const double sg = scale * g;
                for (std::size_t i = 0; i < in_n; ++i) gw[i] += sg * in[i];
                gp[l.units * in_n + o] += sg;
            }
            if (gin) {
                const double* wr = w + o * in_n;
                for (std::size_t i = 0; i < in_n; ++i) gin[i] += g * wr[i];
            }
        }
    }

    static void softmax(const double* in, double* out, std::size_t n) {
        const double zmax = *std::max_element(in, in + n);
        double sum = 0.0;
        for (std::size_t k = 0; k < n; ++k) sum += (out[k] = std::exp(in[k] - zmax));
        for (std::size_t k = 0; k < n; ++k) out[k] /= sum;
    }

    ModelDescriptor desc_;
    std::vector<TensorShape> shapes_;
    std::vector<ParamView> layout_;
    std::vector<std::size_t> view_of_layer_;
    std::size_t param_count_ = 0;
    std::vector<std::vector<double>> acts_;
    std::vector<std::vector<double>> grads_;
    std::vector<std::vector<std::size_t>> pool_index_;
    std::vector<double> input_grad_;
};

inline ProbabilityMatrix forward(const ModelDescriptor& desc, const ParameterVector& params,
                                 std::span<const Image> batch) {
    Network net(desc);
    net.check_params(params.values);
    ProbabilityMatrix m{batch.size(), desc.class_count, {}};
    m.values.reserve(batch.size() * desc.class_count);
    for (const Image& x : batch) {
        net.check_input(x);
        auto p = net.forward(params.values, x);
        m.values.insert(m.values.end(), p.begin(), p.end());
    }
    return m;
}

/// Mean cross-entropy over the batch and its exact gradient.
inline LossAndGradient loss_and_param_gradients(const ModelDescriptor& desc, const ParameterVector& params,
                                                std::span<const Image> batch, std::span<const int> labels) {
    Network net(desc);
    net.check_params(params.values);
    if (batch.size() != labels.size())
        throw InputShapeError(std::to_string(batch.size()) + " samples but " + std::to_string(labels.size()) + " labels");
    if (batch.empty()) throw InputShapeError("empty batch");
    LossAndGradient out;
    out.gradient.layout = params.layout;
    out.gradient.values.assign(params.size(), 0.0);
    const double scale = 1.0 / double(batch.size());
    double total = 0.0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        net.check_input(batch[s]);
        net.check_label(labels[s]);
        total += net.backward(params.values, batch[s], labels[s], scale, out.gradient.values, {});
    }
    out.loss = total * scale;
    return out;
}

inline void sgd_step_inplace(ParameterVector& params, const GradientVector& grads, double learning_rate) {
    if (params.size() != grads.size())
        throw LayoutError("sgd_step: " + std::to_string(params.size()) + " params vs " + std::to_string(grads.size()) +
                          " gradients");
    if (!(learning_rate >= 0.0)) throw LayoutError("sgd_step: learning rate must be >= 0");
    for (std::size_t i = 0; i < params.size(); ++i) params.values[i] -= learning_rate * grads.values[i];
}

inline ParameterVector sgd_step(ParameterVector params, const GradientVector& grads, double learning_rate) {
    sgd_step_inplace(params, grads, learning_rate);
    return params;
}

inline Image input_gradient(const ModelDescriptor& desc, const ParameterVector& params, const Image& sample,
                            int label) {
    Network net(desc);
    net.check_params(params.values);
    net.check_input(sample);
    net.check_label(label);
    Image g(sample.size(), 0.0);
    net.backward(params.values, sample, label, 0.0, {}, g);
    return g;
}

/// Index of the largest entry; ties go to the lowest index.
inline int argmax(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
        if (row[k] > row[best]) best = k;
    return int(best);
}

inline std::vector<int> predict_labels(Network& net, std::span<const double> params, std::span<const Image> inputs) {
    net.check_params(params);
    std::vector<int> out;
    out.reserve(inputs.size());
    for (const Image& x : inputs) {
        net.check_input(x);
        out.push_back(argmax(net.forward(params, x)));
    }
    return out;
}

inline std::vector<int> predict_labels(const ModelDescriptor& desc, const ParameterVector& params,
                                       std::span<const Image> inputs) {
    Network net(desc);
    return predict_labels(net, params.values, inputs);
}

/// Fraction of inputs whose predicted label equals the given label.
inline double accuracy(const ModelDescriptor& desc, const ParameterVector& params, std::span<const Image> inputs,
                       std::span<const int> labels) {
    if (inputs.empty()) return 0.0;
    auto pred = predict_labels(desc, params, inputs);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
    return double(hit) / double(pred.size());
}

}  // namespace fedexplore::nn
