// Copyright 2026 The texsort Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Minimal CPU network engine for the transfer-learning protocol: a sequential
// base of 3x3 "same" convolutions (optionally with fused ReLU) and 2x2 max
// pools, followed by a global-average-pool + dense + softmax head.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "texsort/error.hpp"
#include "texsort/image.hpp"
#include "texsort/io.hpp"

namespace texsort::nn {

static_assert(std::endian::native == std::endian::little, "weight files are little-endian float32");

/// Channel-major activation volume.
struct Tensor {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int channels, int height, int width)
        : c(channels), h(height), w(width), v(static_cast<std::size_t>(channels) * height * width, 0.0f) {}

    float* plane(int ch) { return v.data() + static_cast<std::size_t>(ch) * h * w; }
    const float* plane(int ch) const { return v.data() + static_cast<std::size_t>(ch) * h * w; }
};

inline Tensor from_image(const ImageF& img) {
    Tensor t(3, img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int ch = 0; ch < 3; ++ch) t.plane(ch)[y * img.width + x] = img.at(y, x, ch);
    return t;
}

struct Conv2D {
    std::string name;
    int in_ch = 0;
    int out_ch = 0;
    bool relu = true;
    std::vector<float> weight;  // [out][in][3][3]
    std::vector<float> bias;    // [out]

    std::size_t param_count() const { return weight.size() + bias.size(); }
};

struct MaxPool2D {
    std::string name;
    std::size_t param_count() const { return 0; }
};

using Layer = std::variant<Conv2D, MaxPool2D>;

inline const std::string& layer_name(const Layer& l) {
    return std::visit([](const auto& x) -> const std::string& { return x.name; }, l);
}
inline std::size_t layer_params(const Layer& l) {
    return std::visit([](const auto& x) { return x.param_count(); }, l);
}

struct Dense {
    std::string name = "head_dense";
    int in = 0;
    int out = 0;
    std::vector<float> weight;  // [out][in]
    std::vector<float> bias;

    std::size_t param_count() const { return weight.size() + bias.size(); }
};

struct Network {
    std::string backbone;
    int input_h = 0;
    int input_w = 0;
    std::vector<Layer> base;
    Dense head;
    std::vector<std::string> classes;

    int feature_width() const {
        int ch = 3;
        for (const auto& l : base)
            if (const auto* c = std::get_if<Conv2D>(&l)) ch = c->out_ch;
        return ch;
    }
};

// ---------------------------------------------------------------------------
// Initialization

inline Conv2D make_conv(std::string name, int in_ch, int out_ch, bool relu = true) {
    Conv2D c{std::move(name), in_ch, out_ch, relu, {}, {}};
    c.weight.assign(static_cast<std::size_t>(out_ch) * in_ch * 9, 0.0f);
    c.bias.assign(out_ch, 0.0f);
    return c;
}

/// He-uniform conv weights, zero biases.
template <typename Rng>
void init_conv(Conv2D& c, Rng& rng) {
    const float limit = std::sqrt(6.0f / static_cast<float>(c.in_ch * 9));
    std::uniform_real_distribution<float> dist(-limit, limit);
    for (auto& w : c.weight) w = dist(rng);
    std::fill(c.bias.begin(), c.bias.end(), 0.0f);
}

/// Glorot-uniform dense weights, zero biases.
template <typename Rng>
void init_dense(Dense& d, int in, int out, Rng& rng) {
    d.in = in;
    d.out = out;
    d.weight.resize(static_cast<std::size_t>(in) * out);
    d.bias.assign(out, 0.0f);
    const float limit = std::sqrt(6.0f / static_cast<float>(in + out));
    std::uniform_real_distribution<float> dist(-limit, limit);
    for (auto& w : d.weight) w = dist(rng);
}

// ---------------------------------------------------------------------------
// Forward

namespace detail {

inline void conv_forward(const Conv2D& L, const Tensor& in, Tensor& out) {
    const int h = in.h, w = in.w;
    out = Tensor(L.out_ch, h, w);
    for (int oc = 0; oc < L.out_ch; ++oc) {
        float* o = out.plane(oc);
        std::fill(o, o + h * w, L.bias[oc]);
        for (int ic = 0; ic < L.in_ch; ++ic) {
            const float* ip = in.plane(ic);
            const float* k = &L.weight[(static_cast<std::size_t>(oc) * L.in_ch + ic) * 9];
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    const float kw = k[ky * 3 + kx];
                    for (int y = y0; y < y1; ++y) {
                        float* orow = o + y * w;
                        const float* irow = ip + (y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) orow[x] += kw * irow[x];
                    }
                }
            }
        }
        if (L.relu)
            for (int i = 0; i < h * w; ++i) o[i] = o[i] > 0.0f ? o[i] : 0.0f;
    }
}

inline void pool_forward(const Tensor& in, Tensor& out) {
    const int oh = in.h / 2, ow = in.w / 2;
    out = Tensor(in.c, oh, ow);
    for (int ch = 0; ch < in.c; ++ch) {
        const float* ip = in.plane(ch);
        float* o = out.plane(ch);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const float* p = ip + 2 * y * in.w + 2 * x;
                o[y * ow + x] = std::max(std::max(p[0], p[1]), std::max(p[in.w], p[in.w + 1]));
            }
    }
}

}  // namespace detail

/// Activations retained for backpropagation.
struct ForwardTrace {
    std::vector<Tensor> acts;     // acts[0] = input, acts[i + 1] = output of base[i]
    std::vector<float> pooled;    // global average pool of the last activation
    std::vector<float> probs;     // softmax output
};

inline void softmax_inplace(std::vector<float>& z) {
    const float m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - m);
        sum += v;
    }
    for (auto& v : z) v = static_cast<float>(v / sum);
}

inline void forward(const Network& net, const Tensor& input, ForwardTrace& trace) {
    if (input.c != 3 || input.h != net.input_h || input.w != net.input_w)
        throw ValidationError("input is " + std::to_string(input.h) + "x" + std::to_string(input.w) + ", " + net.backbone +
                              " expects " + std::to_string(net.input_h) + "x" + std::to_string(net.input_w));
    trace.acts.resize(net.base.size() + 1);
    trace.acts[0] = input;
    for (std::size_t i = 0; i < net.base.size(); ++i) {
        if (const auto* c = std::get_if<Conv2D>(&net.base[i])) detail::conv_forward(*c, trace.acts[i], trace.acts[i + 1]);
        else detail::pool_forward(trace.acts[i], trace.acts[i + 1]);
    }
    const Tensor& last = trace.acts.back();
    trace.pooled.assign(last.c, 0.0f);
    const int hw = last.h * last.w;
    for (int ch = 0; ch < last.c; ++ch) {
        double s = 0.0;
        const float* p = last.plane(ch);
        for (int i = 0; i < hw; ++i) s += p[i];
        trace.pooled[ch] = static_cast<float>(s / hw);
    }
    const Dense& d = net.head;
    trace.probs.assign(d.out, 0.0f);
    for (int o = 0; o < d.out; ++o) {
        float z = d.bias[o];
        const float* wr = &d.weight[static_cast<std::size_t>(o) * d.in];
        for (int i = 0; i < d.in; ++i) z += wr[i] * trace.pooled[i];
        trace.probs[o] = z;
    }
    softmax_inplace(trace.probs);
}

inline std::vector<float> predict_probs(const Network& net, const Tensor& input) {
    ForwardTrace t;
    forward(net, input, t);
    return t.probs;
}

/// Categorical cross-entropy with probabilities clipped to [1e-7, 1 - 1e-7].
inline double cross_entropy(std::span<const float> probs, int label) {
    const double p = std::clamp(static_cast<double>(probs[label]), 1e-7, 1.0 - 1e-7);
    return -std::log(p);
}

/// Index of the largest entry; ties go to the lowest index.
inline int argmax(std::span<const float> v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

// ---------------------------------------------------------------------------
// Backward

/// Gradient buffers shaped like the trainable parameters.
struct Gradients {
    std::vector<std::vector<float>> conv_w;  // per base layer; empty for pools and frozen layers
    std::vector<std::vector<float>> conv_b;
    std::vector<float> head_w;
    std::vector<float> head_b;

    static Gradients zeros_like(const Network& net, std::size_t first_trainable) {
        Gradients g;
        g.conv_w.resize(net.base.size());
        g.conv_b.resize(net.base.size());
        for (std::size_t i = first_trainable; i < net.base.size(); ++i)
            if (const auto* c = std::get_if<Conv2D>(&net.base[i])) {
                g.conv_w[i].assign(c->weight.size(), 0.0f);
                g.conv_b[i].assign(c->bias.size(), 0.0f);
            }
        g.head_w.assign(net.head.weight.size(), 0.0f);
        g.head_b.assign(net.head.bias.size(), 0.0f);
        return g;
    }

    void scale(float s) {
        auto mul = [s](std::vector<float>& v) {
            for (auto& x : v) x *= s;
        };
        for (auto& v : conv_w) mul(v);
        for (auto& v : conv_b) mul(v);
        mul(head_w);
        mul(head_b);
    }
};

namespace detail {

// grad_out arrives already multiplied by the ReLU derivative.
inline void conv_backward(const Conv2D& L, const Tensor& in, const Tensor& grad_out, std::vector<float>& gw,
                          std::vector<float>& gb, Tensor* grad_in) {
    const int h = in.h, w = in.w;
    if (grad_in) *grad_in = Tensor(L.in_ch, h, w);
    std::vector<float> acc(w);
    for (int oc = 0; oc < L.out_ch; ++oc) {
        const float* g = grad_out.plane(oc);
        double bsum = 0.0;
        for (int i = 0; i < h * w; ++i) bsum += g[i];
        gb[oc] += static_cast<float>(bsum);
        for (int ic = 0; ic < L.in_ch; ++ic) {
            const float* ip = in.plane(ic);
            const std::size_t kbase = (static_cast<std::size_t>(oc) * L.in_ch + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    std::fill(acc.begin(), acc.end(), 0.0f);
                    for (int y = y0; y < y1; ++y) {
                        const float* grow = g + y * w;
                        const float* irow = ip + (y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) acc[x] += grow[x] * irow[x];
                    }
                    float s = 0.0f;
                    for (int x = x0; x < x1; ++x) s += acc[x];
                    gw[kbase + ky * 3 + kx] += s;
                    if (grad_in) {
                        const float kw = L.weight[kbase + ky * 3 + kx];
                        float* gi = grad_in->plane(ic);
                        for (int y = y0; y < y1; ++y) {
                            const float* grow = g + y * w;
                            float* girow = gi + (y + dy) * w + dx;
                            for (int x = x0; x < x1; ++x) girow[x] += kw * grow[x];
                        }
                    }
                }
            }
        }
    }
}

inline void pool_backward(const Tensor& in, const Tensor& grad_out, Tensor& grad_in) {
    grad_in = Tensor(in.c, in.h, in.w);
    const int oh = grad_out.h, ow = grad_out.w;
    for (int ch = 0; ch < in.c; ++ch) {
        const float* ip = in.plane(ch);
        const float* g = grad_out.plane(ch);
        float* gi = grad_in.plane(ch);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const int base = 2 * y * in.w + 2 * x;
                const int cand[4] = {base, base + 1, base + in.w, base + in.w + 1};
                int best = cand[0];
                for (int k = 1; k < 4; ++k)
                    if (ip[cand[k]] > ip[best]) best = cand[k];
                gi[best] += g[y * ow + x];
            }
    }
}

}  // namespace detail

/// Accumulates d(loss)/d(params) for one sample into `grads`. Base layers
/// before `first_trainable` are frozen and receive no gradient.
inline void backward(const Network& net, const ForwardTrace& trace, int label, std::size_t first_trainable,
                     Gradients& grads) {
    const Dense& d = net.head;
    std::vector<float> dz(trace.probs);
    dz[label] -= 1.0f;
    for (int o = 0; o < d.out; ++o) {
        grads.head_b[o] += dz[o];
        float* gw = &grads.head_w[static_cast<std::size_t>(o) * d.in];
        for (int i = 0; i < d.in; ++i) gw[i] += dz[o] * trace.pooled[i];
    }
    if (first_trainable >= net.base.size()) return;

    const Tensor& last = trace.acts.back();
    Tensor grad(last.c, last.h, last.w);
    const float inv_hw = 1.0f / static_cast<float>(last.h * last.w);
    for (int ch = 0; ch < last.c; ++ch) {
        float gp = 0.0f;
        for (int o = 0; o < d.out; ++o) gp += d.weight[static_cast<std::size_t>(o) * d.in + ch] * dz[o];
        std::fill(grad.plane(ch), grad.plane(ch) + last.h * last.w, gp * inv_hw);
    }
    for (std::size_t i = net.base.size(); i-- > first_trainable;) {
        const Tensor& in = trace.acts[i];
        const Tensor& out = trace.acts[i + 1];
        const bool need_input_grad = i > first_trainable;
        Tensor grad_in;
        if (const auto* c = std::get_if<Conv2D>(&net.base[i])) {
            if (c->relu)
                for (std::size_t k = 0; k < grad.v.size(); ++k)
                    if (out.v[k] <= 0.0f) grad.v[k] = 0.0f;
            detail::conv_backward(*c, in, grad, grads.conv_w[i], grads.conv_b[i], need_input_grad ? &grad_in : nullptr);
        } else if (need_input_grad) {
            detail::pool_backward(in, grad, grad_in);
        }
        if (!need_input_grad) break;
        grad = std::move(grad_in);
    }
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
};

/// Adam with bias correction folded into the step size.
class Adam {
public:
    Adam(const Network& net, std::size_t first_trainable) : first_(first_trainable) {
        m_ = Gradients::zeros_like(net, first_trainable);
        v_ = Gradients::zeros_like(net, first_trainable);
    }

    void step(Network& net, const Gradients& g, double lr, const AdamConfig& cfg = {}) {
        ++t_;
        const double alpha = lr * std::sqrt(1.0 - std::pow(cfg.beta2, t_)) / (1.0 - std::pow(cfg.beta1, t_));
        auto update = [&](std::vector<float>& p, const std::vector<float>& grad, std::vector<float>& m,
                          std::vector<float>& v) {
            const float b1 = static_cast<float>(1.0 - cfg.beta1), b2 = static_cast<float>(1.0 - cfg.beta2);
            const float a = static_cast<float>(alpha), eps = static_cast<float>(cfg.epsilon);
            for (std::size_t k = 0; k < p.size(); ++k) {
                m[k] += (grad[k] - m[k]) * b1;
                v[k] += (grad[k] * grad[k] - v[k]) * b2;
                p[k] -= a * m[k] / (std::sqrt(v[k]) + eps);
            }
        };
        for (std::size_t i = first_; i < net.base.size(); ++i)
            if (auto* c = std::get_if<Conv2D>(&net.base[i])) {
                update(c->weight, g.conv_w[i], m_.conv_w[i], v_.conv_w[i]);
                update(c->bias, g.conv_b[i], m_.conv_b[i], v_.conv_b[i]);
            }
        update(net.head.weight, g.head_w, m_.head_w, v_.head_w);
        update(net.head.bias, g.head_b, m_.head_b, v_.head_b);
    }

private:
    std::size_t first_;
    long long t_ = 0;
    Gradients m_;
    Gradients v_;
};

// ---------------------------------------------------------------------------
// Parameter checksums

/// FNV-1a over the raw float bytes.
inline std::uint64_t checksum(std::span<const float> values) {
    std::uint64_t h = 1469598103934665603ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
    for (std::size_t i = 0; i < values.size_bytes(); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t checksum(const Layer& l) {
    if (const auto* c = std::get_if<Conv2D>(&l)) {
        const std::uint64_t a = checksum(c->weight), b = checksum(c->bias);
        return a ^ (b * 0x9E3779B97F4A7C15ULL);
    }
    return 0;
}

inline std::uint64_t checksum(const Dense& d) { return checksum(d.weight) ^ (checksum(d.bias) * 0x9E3779B97F4A7C15ULL); }

// ---------------------------------------------------------------------------
// Weight files: "TSW1" magic, u64 header length, JSON header, float32 payload.

inline nlohmann::json describe(const Network& net) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net.base) {
        if (const auto* c = std::get_if<Conv2D>(&l))
            layers.push_back({{"name", c->name}, {"type", "conv3x3"}, {"in", c->in_ch}, {"out", c->out_ch}, {"relu", c->relu}});
        else
            layers.push_back({{"name", layer_name(l)}, {"type", "maxpool2"}});
    }
    nlohmann::json head = nullptr;
    if (net.head.out > 0) head = {{"name", net.head.name}, {"in", net.head.in}, {"out", net.head.out}};
    return {{"backbone", net.backbone}, {"input", {net.input_h, net.input_w}}, {"classes", net.classes},
            {"layers", layers}, {"head", head}};
}

inline void save_weights(const std::filesystem::path& path, const Network& net) {
    const std::string header = describe(net).dump();
    std::string buf = "TSW1";
    const std::uint64_t len = header.size();
    buf.append(reinterpret_cast<const char*>(&len), sizeof len);
    buf += header;
    auto put = [&buf](const std::vector<float>& v) {
        buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
    };
    for (const auto& l : net.base)
        if (const auto* c = std::get_if<Conv2D>(&l)) {
            put(c->weight);
            put(c->bias);
        }
    if (net.head.out > 0) {
        put(net.head.weight);
        put(net.head.bias);
    }
    io::write_atomic(path, buf);
}

inline Network load_weights(const std::filesystem::path& path) {
    const std::string buf = io::read_file(path);
    auto bad = [&](const std::string& why) { return RuntimeFailure("weight file " + path.string() + ": " + why); };
    if (buf.size() < 12 || buf.compare(0, 4, "TSW1") != 0) throw bad("bad magic");
    std::uint64_t len = 0;
    std::memcpy(&len, buf.data() + 4, sizeof len);
    if (12 + len > buf.size()) throw bad("truncated header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(buf.substr(12, len));
    } catch (const nlohmann::json::exception& e) {
        throw bad(e.what());
    }
    std::size_t pos = 12 + len;
    auto take = [&](std::vector<float>& v, std::size_t n) {
        if (pos + n * sizeof(float) > buf.size()) throw bad("truncated payload");
        v.resize(n);
        std::memcpy(v.data(), buf.data() + pos, n * sizeof(float));
        pos += n * sizeof(float);
    };
    Network net;
    try {
        net.backbone = h.at("backbone").get<std::string>();
        net.input_h = h.at("input").at(0).get<int>();
        net.input_w = h.at("input").at(1).get<int>();
        net.classes = h.at("classes").get<std::vector<std::string>>();
        for (const auto& jl : h.at("layers")) {
            const auto type = jl.at("type").get<std::string>();
            if (type == "conv3x3") {
                auto c = make_conv(jl.at("name").get<std::string>(), jl.at("in").get<int>(), jl.at("out").get<int>(),
                                   jl.at("relu").get<bool>());
                take(c.weight, c.weight.size());
                take(c.bias, c.bias.size());
                net.base.emplace_back(std::move(c));
            } else if (type == "maxpool2") {
                net.base.emplace_back(MaxPool2D{jl.at("name").get<std::string>()});
            } else {
                throw bad("unsupported layer type '" + type + "'");
            }
        }
        if (!h.at("head").is_null()) {
            net.head.name = h["head"].at("name").get<std::string>();
            net.head.in = h["head"].at("in").get<int>();
            net.head.out = h["head"].at("out").get<int>();
            take(net.head.weight, static_cast<std::size_t>(net.head.in) * net.head.out);
            take(net.head.bias, net.head.out);
        }
    } catch (const nlohmann::json::exception& e) {
        throw bad(e.what());
    }
    if (pos != buf.size()) throw bad("trailing bytes after payload");
    return net;
}

}  // namespace texsort::nn
