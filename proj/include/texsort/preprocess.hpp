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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "texsort/error.hpp"
#include "texsort/image.hpp"

namespace texsort {

enum class CropMode {
    Literal,  // crop min(dim, target) per axis, centered
    Square,   // largest centered square, then resize
};

/// Spatial normalization for one backbone. Interpolation is always bicubic and
/// the model value range is always [-1, 1].
struct PreprocessSpec {
    int target_h = 224;
    int target_w = 224;
    CropMode crop_mode = CropMode::Literal;
};

namespace detail {

// Keys cubic convolution kernel, a = -0.5.
inline double cubic_kernel(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
    return 0.0;
}

struct AxisTaps {
    int first = 0;
    std::vector<double> weights;
};

// Resampling taps for each output index along one axis. The kernel is widened
// by the scale factor when shrinking so downsampling is antialiased.
inline std::vector<AxisTaps> bicubic_taps(int in_size, int out_size) {
    const double scale = static_cast<double>(in_size) / out_size;
    const double filter_scale = std::max(scale, 1.0);
    const double support = 2.0 * filter_scale;
    std::vector<AxisTaps> taps(out_size);
    for (int i = 0; i < out_size; ++i) {
        const double center = (i + 0.5) * scale;
        const int lo = std::max(static_cast<int>(center - support + 0.5), 0);
        const int hi = std::min(static_cast<int>(center + support + 0.5), in_size);
        auto& t = taps[i];
        t.first = lo;
        double sum = 0.0;
        for (int j = lo; j < hi; ++j) {
            const double w = cubic_kernel((j - center + 0.5) / filter_scale);
            t.weights.push_back(w);
            sum += w;
        }
        if (sum != 0.0)
            for (auto& w : t.weights) w /= sum;
    }
    return taps;
}

inline std::uint8_t clamp_round(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace detail

/// Separable bicubic resize returning unrounded values.
inline Image<double> resize_bicubic_exact(const Image8& src, int out_h, int out_w) {
    if (src.empty()) throw ValidationError("cannot resize an empty image");
    const auto xt = detail::bicubic_taps(src.width, out_w);
    const auto yt = detail::bicubic_taps(src.height, out_h);
    Image<double> horiz(src.height, out_w);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                const auto& t = xt[x];
                for (std::size_t k = 0; k < t.weights.size(); ++k) acc += t.weights[k] * src.at(y, t.first + static_cast<int>(k), c);
                horiz.at(y, x, c) = acc;
            }
    Image<double> out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const auto& t = yt[y];
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < t.weights.size(); ++k) acc += t.weights[k] * horiz.at(t.first + static_cast<int>(k), x, c);
                out.at(y, x, c) = acc;
            }
    }
    return out;
}

inline Image8 resize_bicubic(const Image8& src, int out_h, int out_w) {
    if (src.height == out_h && src.width == out_w) return src;
    const auto exact = resize_bicubic_exact(src, out_h, out_w);
    Image8 out(out_h, out_w);
    std::transform(exact.data.begin(), exact.data.end(), out.data.begin(), detail::clamp_round);
    return out;
}

inline Image8 crop(const Image8& src, int top, int left, int h, int w) {
    Image8 out(h, w);
    for (int y = 0; y < h; ++y) {
        const auto* row = &src.at(top + y, left, 0);
        std::copy(row, row + static_cast<std::ptrdiff_t>(w) * 3, &out.at(y, 0, 0));
    }
    return out;
}

struct CropWindow {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;
};

/// Centered crop window; offsets use floor division.
inline CropWindow center_crop_window(int h, int w, const PreprocessSpec& spec) {
    int ch = 0, cw = 0;
    if (spec.crop_mode == CropMode::Literal) {
        ch = std::min(h, spec.target_h);
        cw = std::min(w, spec.target_w);
    } else {
        ch = cw = std::min(h, w);
    }
    return {(h - ch) / 2, (w - cw) / 2, ch, cw};
}

/// Center crop then bicubic resize; output dims always equal the spec target.
inline Image8 center_crop_resize(const Image8& image, const PreprocessSpec& spec) {
    if (image.height < 1 || image.width < 1) throw ValidationError("image must have at least one pixel per dimension");
    if (spec.target_h < 1 || spec.target_w < 1) throw ValidationError("preprocess target dims must be positive");
    const auto win = center_crop_window(image.height, image.width, spec);
    return resize_bicubic(crop(image, win.top, win.left, win.height, win.width), spec.target_h, spec.target_w);
}

/// v -> v / 127.5 - 1, elementwise.
inline ImageF to_model_input(const Image8& image) {
    ImageF out(image.height, image.width);
    std::transform(image.data.begin(), image.data.end(), out.data.begin(),
                   [](std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; });
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation

enum class FillMode {
    Nearest,   // replicate the closest edge pixel
    Constant,  // black
};

struct AugmentConfig {
    double max_rotation_deg = 90.0;
    double max_width_shift_frac = 0.30;
    double max_height_shift_frac = 0.30;
    double max_zoom_frac = 0.30;
    double hflip_prob = 0.5;
    FillMode fill_mode = FillMode::Nearest;

    static AugmentConfig identity() { return {0.0, 0.0, 0.0, 0.0, 0.0, FillMode::Nearest}; }
};

inline void validate(const AugmentConfig& cfg) {
    auto frac = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string("augment.") + name + " must be in [0, 1]");
    };
    if (!(cfg.max_rotation_deg >= 0.0 && cfg.max_rotation_deg <= 180.0))
        throw ValidationError("augment.max_rotation_deg must be in [0, 180]");
    frac(cfg.max_width_shift_frac, "max_width_shift_frac");
    frac(cfg.max_height_shift_frac, "max_height_shift_frac");
    frac(cfg.max_zoom_frac, "max_zoom_frac");
    frac(cfg.hflip_prob, "hflip_prob");
}

/// One draw of the random transform.
struct AugmentParams {
    double rotation_deg = 0.0;
    double shift_x = 0.0;  // pixels
    double shift_y = 0.0;
    double zoom = 1.0;     // > 1 magnifies
    bool hflip = false;
};

/// Draws parameters in a fixed order: rotation, width shift, height shift, zoom, flip.
/// Every draw consumes the generator, even for zero-width ranges.
template <typename Rng>
AugmentParams sample_augment_params(const AugmentConfig& cfg, int height, int width, Rng& rng) {
    // Each draw maps u ~ U[0, 1) onto its symmetric range.
    auto symmetric = [&](double half_width) {
        return (2.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng) - 1.0) * half_width;
    };
    AugmentParams p;
    p.rotation_deg = symmetric(cfg.max_rotation_deg);
    p.shift_x = symmetric(cfg.max_width_shift_frac) * width;
    p.shift_y = symmetric(cfg.max_height_shift_frac) * height;
    p.zoom = 1.0 + symmetric(cfg.max_zoom_frac);
    p.hflip = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.hflip_prob;
    return p;
}

/// Applies rotate -> shift -> zoom about the image center, then the horizontal flip.
inline Image8 apply_augment(const Image8& src, const AugmentParams& p, FillMode fill = FillMode::Nearest) {
    const int h = src.height, w = src.width;
    Image8 out(h, w);
    const bool geometric = p.rotation_deg != 0.0 || p.shift_x != 0.0 || p.shift_y != 0.0 || p.zoom != 1.0;
    if (!geometric) {
        out = src;
    } else {
        const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
        const double theta = p.rotation_deg * std::numbers::pi / 180.0;
        const double cs = std::cos(theta), sn = std::sin(theta);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                // Invert zoom, then shift, then rotation.
                const double zx = (x - cx) / p.zoom + cx - p.shift_x;
                const double zy = (y - cy) / p.zoom + cy - p.shift_y;
                const double dx = zx - cx, dy = zy - cy;
                double sx = cs * dx + sn * dy + cx;
                double sy = -sn * dx + cs * dy + cy;
                if (fill == FillMode::Constant && (sx < -0.5 || sy < -0.5 || sx > w - 0.5 || sy > h - 0.5)) continue;
                sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
                sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
                const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
                const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
                const double fx = sx - x0, fy = sy - y0;
                for (int c = 0; c < 3; ++c) {
                    const double top = src.at(y0, x0, c) * (1 - fx) + src.at(y0, x1, c) * fx;
                    const double bot = src.at(y1, x0, c) * (1 - fx) + src.at(y1, x1, c) * fx;
                    out.at(y, x, c) = detail::clamp_round(top * (1 - fy) + bot * fy);
                }
            }
        }
    }
    if (p.hflip) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w / 2; ++x)
                for (int c = 0; c < 3; ++c) std::swap(out.at(y, x, c), out.at(y, w - 1 - x, c));
    }
    return out;
}

template <typename Rng>
Image8 augment(const Image8& image, const AugmentConfig& cfg, Rng& rng) {
    return apply_augment(image, sample_augment_params(cfg, image.height, image.width, rng), cfg.fill_mode);
}

}  // namespace texsort
