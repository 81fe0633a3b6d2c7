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

// Shared fixtures and independent reference implementations for the tests.
// Oracles here deliberately avoid calling the library code they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "texsort/image.hpp"
#include "texsort/mask.hpp"

namespace texsort::testing {

namespace fs = std::filesystem;

/// Fresh directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        std::random_device rd;
        path_ = fs::temp_directory_path() /
                ("texsort_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const noexcept { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

/// Pretrained Tiny weights shared by every test binary in the build tree.
inline fs::path shared_weights_dir() {
#ifdef TEXSORT_TEST_WEIGHTS_DIR
    return TEXSORT_TEST_WEIGHTS_DIR;
#else
    return fs::temp_directory_path() / "texsort_test_weights";
#endif
}

// ---------------------------------------------------------------------------
// Oracles

/// Tight box by scanning every pixel for min/max coordinates.
inline std::optional<Box> brute_tight_box(const Mask& m) {
    int min_x = std::numeric_limits<int>::max(), min_y = min_x, max_x = -1, max_y = -1;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
            if (m(y, x)) {
                min_x = std::min(min_x, x);
                min_y = std::min(min_y, y);
                max_x = std::max(max_x, x);
                max_y = std::max(max_y, y);
            }
    if (max_x < 0) return std::nullopt;
    return Box{min_x, min_y, max_x + 1, max_y + 1};
}

/// IoU by per-pixel counting, 0 when both are empty.
inline double brute_mask_iou(const Mask& a, const Mask& b) {
    long long inter = 0, uni = 0;
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) {
            const bool p = a(y, x) != 0, q = b(y, x) != 0;
            inter += p && q;
            uni += p || q;
        }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Box IoU by rasterizing both boxes onto a grid.
inline double brute_box_iou(const Box& a, const Box& b) {
    const int w = std::max(a.x2, b.x2) + 1, h = std::max(a.y2, b.y2) + 1;
    Mask ma(h, w), mb(h, w);
    for (int y = a.y1; y < a.y2; ++y)
        for (int x = a.x1; x < a.x2; ++x) ma.set(y, x);
    for (int y = b.y1; y < b.y2; ++y)
        for (int x = b.x1; x < b.x2; ++x) mb.set(y, x);
    return brute_mask_iou(ma, mb);
}

template <typename Rng>
Mask random_mask(int h, int w, double density, Rng& rng) {
    Mask m(h, w);
    std::bernoulli_distribution on(density);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (on(rng)) m.set(y, x);
    return m;
}

/// Early stopping by re-scanning the whole prefix at every step: stop iff the
/// last `patience` losses are all >= the minimum of everything before them.
inline std::pair<bool, int> brute_early_stop(const std::vector<double>& losses, int patience) {
    const int n = static_cast<int>(losses.size());
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (losses[i] < losses[best]) best = i;
    // Epochs since the last strict improvement over the running best.
    int last_improve = -1;
    double running = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
        if (losses[i] < running) running = losses[i], last_improve = i;
    const int stale = n - 1 - last_improve;
    return {stale >= patience, best};
}

/// Plateau reduction simulated epoch by epoch from the definition: count
/// consecutive non-improving epochs since the last improvement or reduction.
inline std::vector<double> brute_lr_trace(const std::vector<double>& losses, double lr0, int patience, double factor,
                                          double min_lr) {
    std::vector<double> lrs{lr0};
    double lr = lr0;
    int since = 0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        const double prior_best = i == 0 ? std::numeric_limits<double>::infinity()
                                         : *std::min_element(losses.begin(), losses.begin() + static_cast<long>(i));
        if (losses[i] < prior_best) {
            since = 0;
        } else {
            ++since;
            if (since >= patience && lr > min_lr) {
                lr = std::max(lr * factor, min_lr);
                since = 0;
            }
        }
        lrs.push_back(lr);
    }
    return lrs;
}

/// Gradient image: channel values vary linearly with position.
inline Image8 gradient_image(int h, int w) {
    Image8 img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(y, x, 0) = static_cast<std::uint8_t>((x * 255) / std::max(1, w - 1));
            img.at(y, x, 1) = static_cast<std::uint8_t>((y * 255) / std::max(1, h - 1));
            img.at(y, x, 2) = static_cast<std::uint8_t>(((x + y) * 7) % 256);
        }
    return img;
}

template <typename Rng>
Image8 noise_image(int h, int w, Rng& rng) {
    Image8 img(h, w);
    std::uniform_int_distribution<int> d(0, 255);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(d(rng));
    return img;
}

}  // namespace texsort::testing
