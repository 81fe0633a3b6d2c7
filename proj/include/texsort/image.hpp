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

#include <cstdint>
#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "texsort/error.hpp"
#include "texsort/io.hpp"

namespace texsort {

/// Interleaved 3-channel image (red, green, blue), row-major.
template <typename T>
struct Image {
    static constexpr int channels = 3;

    int height = 0;
    int width = 0;
    std::vector<T> data;

    Image() = default;
    Image(int h, int w, T fill = T{})
        : height(h), width(w), data(static_cast<std::size_t>(h) * w * channels, fill) {}

    T& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    const T& at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    bool empty() const noexcept { return data.empty(); }

    friend bool operator==(const Image&, const Image&) = default;
};

using Image8 = Image<std::uint8_t>;
using ImageF = Image<float>;

/// Decodes any format OpenCV reads into 3-channel RGB, whatever the source byte order.
inline Image8 load_rgb(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw RuntimeFailure("cannot decode image " + path.string());
    cv::Mat rgb;
    cv::cvtColor(m, rgb, cv::COLOR_BGR2RGB);
    Image8 img(rgb.rows, rgb.cols);
    for (int y = 0; y < rgb.rows; ++y) {
        const auto* row = rgb.ptr<std::uint8_t>(y);
        std::copy(row, row + static_cast<std::size_t>(rgb.cols) * 3, img.data.begin() + static_cast<std::ptrdiff_t>(y) * rgb.cols * 3);
    }
    return img;
}

inline cv::Mat to_bgr_mat(const Image8& img) {
    cv::Mat rgb(img.height, img.width, CV_8UC3, const_cast<std::uint8_t*>(img.data.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    return bgr;
}

inline void save_png(const std::filesystem::path& path, const cv::Mat& bgr) {
    std::vector<std::uint8_t> buf;
    if (!cv::imencode(".png", bgr, buf)) throw RuntimeFailure("PNG encode failed for " + path.string());
    io::write_atomic(path, std::string_view(reinterpret_cast<const char*>(buf.data()), buf.size()));
}

inline void save_png(const std::filesystem::path& path, const Image8& img) { save_png(path, to_bgr_mat(img)); }

}  // namespace texsort
