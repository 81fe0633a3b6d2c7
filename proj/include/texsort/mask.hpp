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
#include <charconv>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "texsort/error.hpp"

namespace texsort {

/// Pixel-space rectangle, inclusive-exclusive: covers x1 <= x < x2, y1 <= y < y2.
struct Box {
    int x1 = 0;
    int y1 = 0;
    int x2 = 0;
    int y2 = 0;

    int width() const noexcept { return x2 - x1; }
    int height() const noexcept { return y2 - y1; }
    long long area() const noexcept {
        return valid() ? static_cast<long long>(width()) * height() : 0;
    }
    bool valid() const noexcept { return x1 < x2 && y1 < y2; }
    bool within(int image_w, int image_h) const noexcept {
        return x1 >= 0 && y1 >= 0 && x2 <= image_w && y2 <= image_h;
    }

    friend bool operator==(const Box&, const Box&) = default;
};

/// Grows a box by `pixels` on every side and clamps it to the image.
inline Box dilate(const Box& b, int pixels, int image_w, int image_h) {
    return Box{std::max(0, b.x1 - pixels), std::max(0, b.y1 - pixels),
               std::min(image_w, b.x2 + pixels), std::min(image_h, b.y2 + pixels)};
}

/// Binary pixel grid, row-major, one byte per pixel (0 or 1).
class Mask {
public:
    Mask() = default;
    Mask(int height, int width) : height_(height), width_(width), bits_(checked_size(height, width), 0) {}

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    bool empty_dims() const noexcept { return bits_.empty(); }

    std::uint8_t operator()(int y, int x) const { return bits_[index(y, x)]; }
    void set(int y, int x, bool on = true) { bits_[index(y, x)] = on ? 1 : 0; }

    const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }
    std::vector<std::uint8_t>& bits() noexcept { return bits_; }

    long long count() const noexcept {
        return std::count(bits_.begin(), bits_.end(), std::uint8_t{1});
    }
    bool any() const noexcept { return count() > 0; }

    void fill_box(const Box& b) {
        for (int y = std::max(0, b.y1); y < std::min(height_, b.y2); ++y)
            for (int x = std::max(0, b.x1); x < std::min(width_, b.x2); ++x) set(y, x);
    }

    friend bool operator==(const Mask&, const Mask&) = default;

private:
    static std::size_t checked_size(int h, int w) {
        if (h < 0 || w < 0) throw ValidationError("mask dimensions must be non-negative");
        return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    std::size_t index(int y, int x) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> bits_;
};

/// Smallest box containing every set pixel; nullopt for an empty mask.
inline std::optional<Box> tight_box(const Mask& m) {
    int x1 = m.width(), y1 = m.height(), x2 = -1, y2 = -1;
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (!m(y, x)) continue;
            x1 = std::min(x1, x);
            y1 = std::min(y1, y);
            x2 = std::max(x2, x);
            y2 = std::max(y2, y);
        }
    }
    if (x2 < 0) return std::nullopt;
    return Box{x1, y1, x2 + 1, y2 + 1};
}

/// Morphological dilation with a (2r+1)x(2r+1) square element, clipped to the grid.
inline Mask dilate(const Mask& m, int radius) {
    if (radius <= 0) return m;
    const int h = m.height(), w = m.width();
    // Separable: horizontal pass then vertical pass.
    Mask horiz(h, w);
    for (int y = 0; y < h; ++y) {
        int last_on = -1 - radius;
        for (int x = 0; x < w; ++x) {
            if (m(y, x)) last_on = x;
            if (x - last_on <= radius) horiz.set(y, x);
        }
        last_on = w + radius;
        for (int x = w - 1; x >= 0; --x) {
            if (m(y, x)) last_on = x;
            if (last_on - x <= radius) horiz.set(y, x);
        }
    }
    Mask out(h, w);
    for (int x = 0; x < w; ++x) {
        int last_on = -1 - radius;
        for (int y = 0; y < h; ++y) {
            if (horiz(y, x)) last_on = y;
            if (y - last_on <= radius) out.set(y, x);
        }
        last_on = h + radius;
        for (int y = h - 1; y >= 0; --y) {
            if (horiz(y, x)) last_on = y;
            if (last_on - y <= radius) out.set(y, x);
        }
    }
    return out;
}

// Run-length text encoding: "HxW:r0 r1 r2 ..." over row-major pixels. Runs
// alternate background/foreground starting with background, so r0 may be 0.

inline std::string encode_rle(const Mask& m) {
    std::string out = std::to_string(m.height()) + "x" + std::to_string(m.width()) + ":";
    std::uint8_t current = 0;
    long long run = 0;
    bool first = true;
    auto emit = [&](long long r) {
        if (!first) out += ' ';
        out += std::to_string(r);
        first = false;
    };
    for (std::uint8_t v : m.bits()) {
        if (v == current) {
            ++run;
        } else {
            emit(run);
            current = v;
            run = 1;
        }
    }
    emit(run);
    return out;
}

inline Mask decode_rle(std::string_view text) {
    auto fail = [&](const std::string& why) -> ValidationError {
        return ValidationError("bad RLE mask '" + std::string(text.substr(0, 40)) + "': " + why);
    };
    auto parse_int = [&](std::string_view s) -> long long {
        long long v = 0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || ptr != s.data() + s.size() || v < 0) throw fail("not a non-negative integer: '" + std::string(s) + "'");
        return v;
    };
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) throw fail("missing ':'");
    const auto dims = text.substr(0, colon);
    const auto xpos = dims.find('x');
    if (xpos == std::string_view::npos) throw fail("dimensions must be HxW");
    const long long h = parse_int(dims.substr(0, xpos));
    const long long w = parse_int(dims.substr(xpos + 1));
    Mask m(static_cast<int>(h), static_cast<int>(w));
    const long long total = h * w;
    long long pos = 0;
    std::uint8_t value = 0;
    auto body = text.substr(colon + 1);
    while (!body.empty()) {
        const auto sp = body.find(' ');
        const auto token = body.substr(0, sp);
        if (!token.empty()) {
            const long long run = parse_int(token);
            if (pos + run > total) throw fail("runs exceed HxW");
            if (value) std::fill_n(m.bits().begin() + pos, run, std::uint8_t{1});
            pos += run;
            value ^= 1;
        }
        if (sp == std::string_view::npos) break;
        body.remove_prefix(sp + 1);
    }
    if (pos != total) throw fail("runs cover " + std::to_string(pos) + " of " + std::to_string(total) + " pixels");
    return m;
}

}  // namespace texsort
