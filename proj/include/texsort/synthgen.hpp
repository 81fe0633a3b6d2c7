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

// Deterministic synthetic data: four separable textile-like texture families
// for classification, and fastener scenes (disc buttons, serrated zipper
// strips) with exact instance masks for segmentation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "texsort/dataset.hpp"
#include "texsort/error.hpp"
#include "texsort/image.hpp"
#include "texsort/mask.hpp"

namespace texsort::synth {

struct Rgb {
    double r, g, b;
};

/// Parameter ranges of one texture family. Ranges are disjoint across classes.
struct TextureFamily {
    double orientation_deg;  // stripe direction, jittered by +-orientation_jitter
    double period_min, period_max;
    Rgb ground, stripe;
    double noise_sigma;
};

inline constexpr double kOrientationJitterDeg = 10.0;
inline constexpr double kColorJitter = 12.0;

inline const std::array<TextureFamily, kNumClasses>& texture_families() {
    static const std::array<TextureFamily, kNumClasses> f = {{
        {0.0, 10.0, 14.0, {214, 210, 200}, {168, 164, 154}, 6.0},   // Cotton
        {45.0, 4.0, 6.0, {96, 124, 204}, {40, 66, 150}, 4.0},        // Polyester
        {90.0, 7.0, 9.0, {112, 174, 92}, {62, 124, 52}, 10.0},      // CottonPolyester
        {135.0, 16.0, 22.0, {214, 64, 52}, {150, 30, 26}, 14.0},    // ViscosePolyester
    }};
    return f;
}

inline std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

/// Sinusoidal stripes blended between two colours, plus a faint cross weave and pixel noise.
template <typename Rng>
Image8 render_stripes(int h, int w, double orientation_deg, double period, Rgb ground, Rgb stripe, double noise_sigma,
                      Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    const double phase = u(rng), weave_phase = u(rng);
    const double theta = orientation_deg * std::numbers::pi / 180.0;
    // Stripes run along (cos t, sin t); intensity varies along the normal.
    const double nx = -std::sin(theta), ny = std::cos(theta);
    const double k = 2.0 * std::numbers::pi / period;
    std::normal_distribution<double> noise(0.0, noise_sigma);
    Image8 img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double along = x * std::cos(theta) + y * std::sin(theta);
            const double s = 0.5 + 0.5 * std::sin(k * (x * nx + y * ny) + phase);
            const double weave = 0.04 * std::sin(k * 0.5 * along + weave_phase);
            const double t = std::clamp(s + weave, 0.0, 1.0);
            img.at(y, x, 0) = to_u8(ground.r + (stripe.r - ground.r) * t + noise(rng));
            img.at(y, x, 1) = to_u8(ground.g + (stripe.g - ground.g) * t + noise(rng));
            img.at(y, x, 2) = to_u8(ground.b + (stripe.b - ground.b) * t + noise(rng));
        }
    return img;
}

inline std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(c)};
    return std::mt19937_64(seq);
}

template <typename Rng>
Image8 render_texture(Material m, int h, int w, Rng& rng) {
    const auto& f = texture_families()[class_index(m)];
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    const double orientation = f.orientation_deg + kOrientationJitterDeg * jitter(rng);
    const double period = std::uniform_real_distribution<double>(f.period_min, f.period_max)(rng);
    const Rgb shift{kColorJitter * jitter(rng), kColorJitter * jitter(rng), kColorJitter * jitter(rng)};
    const Rgb g{f.ground.r + shift.r, f.ground.g + shift.g, f.ground.b + shift.b};
    const Rgb s{f.stripe.r + shift.r, f.stripe.g + shift.g, f.stripe.b + shift.b};
    return render_stripes(h, w, orientation, period, g, s, f.noise_sigma, rng);
}

// ---------------------------------------------------------------------------
// Texture dataset

struct SynthSpec {
    int n_per_class = 20;
    int height = 128;
    int width = 128;
    std::uint64_t seed = 1;
    // Held-out test counts per class; all zero for no test split.
    std::array<int, kNumClasses> test_counts{};
};

inline void validate(const SynthSpec& s) {
    if (s.n_per_class < 1) throw ValidationError("n_per_class must be >= 1");
    if (s.height < 64 || s.width < 64) throw ValidationError("synthetic image dims must be at least 64x64");
    for (int c : s.test_counts)
        if (c < 0) throw ValidationError("test counts must be non-negative");
}

/// Renders the dataset under `out_dir/images` and writes `out_dir/manifest.json`.
inline Manifest gen_texture_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    validate(spec);
    Manifest m;
    for (int role = 0; role < 2; ++role) {
        for (int c = 0; c < kNumClasses; ++c) {
            const int n = role == 0 ? spec.n_per_class : spec.test_counts[c];
            for (int i = 0; i < n; ++i) {
                auto rng = derived_rng(spec.seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(role),
                                       static_cast<std::uint64_t>(i));
                const auto mat = static_cast<Material>(c);
                Sample s;
                s.role = role == 0 ? Role::TrainVal : Role::Test;
                s.id = fmt::format("{}_{}_{:03d}", kClassOrder[c], role_name(s.role), i);
                s.material = mat;
                s.image_path = out_dir / "images" / (s.id + ".png");
                save_png(s.image_path, render_texture(mat, spec.height, spec.width, rng));
                m.samples.push_back(std::move(s));
            }
        }
    }
    validate(m);
    save_manifest(out_dir / "manifest.json", m);
    return m;
}

// ---------------------------------------------------------------------------
// Fastener scenes

struct Scene {
    Image8 image;
    std::vector<GroundTruthInstance> instances;
};

/// Minimum clear gap between any two fasteners' boxes.
inline constexpr int kFastenerGap = 20;

namespace detail {

inline Mask disc_mask(int h, int w, int cx, int cy, int radius) {
    Mask m(h, w);
    for (int y = cy - radius; y <= cy + radius; ++y)
        for (int x = cx - radius; x <= cx + radius; ++x)
            if (y >= 0 && x >= 0 && y < h && x < w && (x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius)
                m.set(y, x);
    return m;
}

// A tape band with teeth alternating on both long edges.
inline Mask zipper_mask(int h, int w, const Box& b, bool horizontal) {
    Mask m(h, w);
    const int thick = horizontal ? b.height() : b.width();
    const int tooth = std::max(3, thick / 6);
    const int pitch = 6;
    for (int y = b.y1; y < b.y2; ++y)
        for (int x = b.x1; x < b.x2; ++x) {
            const int along = horizontal ? x - b.x1 : y - b.y1;
            const int across = horizontal ? y - b.y1 : x - b.x1;
            const bool core = across >= tooth && across < thick - tooth;
            const int slot = (along / pitch) % 2;
            const bool tooth_lo = across < tooth && slot == 0;
            const bool tooth_hi = across >= thick - tooth && slot == 1;
            if (core || tooth_lo || tooth_hi) m.set(y, x);
        }
    return m;
}

inline bool boxes_clear(const Box& a, const Box& b, int gap) {
    return a.x2 + gap <= b.x1 || b.x2 + gap <= a.x1 || a.y2 + gap <= b.y1 || b.y2 + gap <= a.y1;
}

template <typename Rng>
void paint(Image8& img, const Mask& m, Rgb base, double shade_amp, Rng& rng) {
    std::normal_distribution<double> noise(0.0, 3.0);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            if (!m(y, x)) continue;
            const double shade = shade_amp * std::sin(0.35 * x + 0.21 * y);
            img.at(y, x, 0) = to_u8(base.r + shade + noise(rng));
            img.at(y, x, 1) = to_u8(base.g + shade + noise(rng));
            img.at(y, x, 2) = to_u8(base.b + shade + noise(rng));
        }
}

}  // namespace detail

/// Renders a scene with exactly `buttons` discs and `zippers` strips on a
/// textile background. Instances never overlap; boxes are tight.
inline Scene gen_fastener_scene(std::uint64_t seed, int height, int width, int buttons, int zippers) {
    if (height < 64 || width < 64) throw ValidationError("scene dims must be at least 64x64");
    if (buttons < 0 || zippers < 0) throw ValidationError("fastener counts must be non-negative");
    auto rng = derived_rng(seed, 0x5CE7E);
    const auto background = static_cast<Material>(std::uniform_int_distribution<int>(0, kNumClasses - 1)(rng));
    Scene scene{render_texture(background, height, width, rng), {}};

    std::vector<Box> placed;
    auto place = [&](int bw, int bh) -> std::optional<Box> {
        if (bw > width || bh > height) return std::nullopt;
        for (int attempt = 0; attempt < 500; ++attempt) {
            const int x = std::uniform_int_distribution<int>(0, width - bw)(rng);
            const int y = std::uniform_int_distribution<int>(0, height - bh)(rng);
            const Box b{x, y, x + bw, y + bh};
            if (std::all_of(placed.begin(), placed.end(),
                            [&](const Box& o) { return detail::boxes_clear(b, o, kFastenerGap); })) {
                placed.push_back(b);
                return b;
            }
        }
        return std::nullopt;
    };
    auto too_small = [&] {
        return ValidationError(fmt::format("a {}x{} scene cannot fit {} buttons and {} zippers", height, width, buttons,
                                           zippers));
    };

    for (int i = 0; i < zippers; ++i) {
        const bool horizontal = std::bernoulli_distribution(0.5)(rng);
        const int thick = std::uniform_int_distribution<int>(30, 36)(rng);
        const int length = std::uniform_int_distribution<int>(std::min(120, std::max(height, width) - 8),
                                                              std::min(200, std::max(height, width) - 8))(rng);
        const auto box = horizontal ? place(length, thick) : place(thick, length);
        if (!box) throw too_small();
        GroundTruthInstance inst{"zipper", detail::zipper_mask(height, width, *box, horizontal), {}};
        const double metal = std::uniform_real_distribution<double>(150, 200)(rng);
        detail::paint(scene.image, inst.mask, {metal, metal * 0.95, metal * 0.8}, 25.0, rng);
        inst.box = *tight_box(inst.mask);
        scene.instances.push_back(std::move(inst));
    }
    for (int i = 0; i < buttons; ++i) {
        const int radius = std::uniform_int_distribution<int>(26, 34)(rng);
        const auto box = place(2 * radius + 1, 2 * radius + 1);
        if (!box) throw too_small();
        const int cx = box->x1 + radius, cy = box->y1 + radius;
        GroundTruthInstance inst{"button", detail::disc_mask(height, width, cx, cy, radius), {}};
        std::uniform_real_distribution<double> col(20, 235);
        detail::paint(scene.image, inst.mask, {col(rng), col(rng), col(rng)}, 12.0, rng);
        // Four thread holes, drawn darker but still part of the button.
        const int hr = std::max(2, radius / 8), off = radius / 3;
        for (int hy : {-off, off})
            for (int hx : {-off, off}) {
                const auto hole = detail::disc_mask(height, width, cx + hx, cy + hy, hr);
                detail::paint(scene.image, hole, {30, 30, 30}, 0.0, rng);
            }
        inst.box = *tight_box(inst.mask);
        scene.instances.push_back(std::move(inst));
    }
    return scene;
}

struct SceneSetSpec {
    int count = 20;
    int height = 320;
    int width = 320;
    std::uint64_t seed = 1;
    int max_buttons = 2;
    int max_zippers = 1;
};

/// Scenes with at least one fastener each, written under `out_dir/images`
/// with a manifest at `out_dir/manifest.json` (role test, no material).
inline Manifest gen_scene_dataset(const SceneSetSpec& spec, const std::filesystem::path& out_dir) {
    if (spec.count < 0) throw ValidationError("scene count must be non-negative");
    Manifest m;
    for (int i = 0; i < spec.count; ++i) {
        auto rng = derived_rng(spec.seed, 0xC0DE, static_cast<std::uint64_t>(i));
        int buttons = 0, zippers = 0;
        while (buttons + zippers == 0) {
            buttons = std::uniform_int_distribution<int>(0, spec.max_buttons)(rng);
            zippers = std::uniform_int_distribution<int>(0, spec.max_zippers)(rng);
            if (spec.max_buttons + spec.max_zippers == 0) break;
        }
        auto scene = gen_fastener_scene(rng(), spec.height, spec.width, buttons, zippers);
        Sample s;
        s.id = fmt::format("scene_{:03d}", i);
        s.role = Role::Test;
        s.image_path = out_dir / "images" / (s.id + ".png");
        s.gt_instances = std::move(scene.instances);
        save_png(s.image_path, scene.image);
        m.samples.push_back(std::move(s));
    }
    validate(m);
    save_manifest(out_dir / "manifest.json", m);
    return m;
}

// ---------------------------------------------------------------------------
// Pretext gratings for pretraining the tiny backbone

// 3 period bins x 3 dominant colour channels; orientation is random.
inline constexpr int kPretextClasses = 9;

struct PretextSample {
    Image8 image;
    int label = 0;
};

/// Grating at a random orientation, labelled by coarse period and by which
/// colour channel dominates it.
template <typename Rng>
PretextSample make_pretext_sample(int size, Rng& rng) {
    static constexpr double kPeriodBins[3][2] = {{3.5, 6.5}, {7.0, 11.0}, {12.0, 24.0}};
    const int pbin = std::uniform_int_distribution<int>(0, 2)(rng);
    const int hue = std::uniform_int_distribution<int>(0, 2)(rng);
    const double orientation = std::uniform_real_distribution<double>(0.0, 180.0)(rng);
    const double period = std::uniform_real_distribution<double>(kPeriodBins[pbin][0], kPeriodBins[pbin][1])(rng);
    std::uniform_real_distribution<double> low(0, 110), high(150, 255);
    auto colour = [&] {
        double ch[3] = {low(rng), low(rng), low(rng)};
        ch[hue] = high(rng);
        return Rgb{ch[0], ch[1], ch[2]};
    };
    const Rgb a = colour(), b = colour();
    const double sigma = std::uniform_real_distribution<double>(0.0, 12.0)(rng);
    return {render_stripes(size, size, orientation, period, a, b, sigma, rng), pbin * 3 + hue};
}

}  // namespace texsort::synth
