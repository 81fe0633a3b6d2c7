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
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "texsort/classifier.hpp"
#include "texsort/image.hpp"
#include "texsort/metrics.hpp"
#include "texsort/zeroshot.hpp"

// Figures are drawn with OpenCV primitives only, so output bytes depend on
// nothing but the inputs.
namespace texsort::render {

namespace detail {
inline const cv::Scalar kInk{40, 40, 40};
inline const cv::Scalar kGrid{225, 225, 225};
inline const cv::Scalar kTrain{180, 110, 30};  // BGR blue
inline const cv::Scalar kVal{20, 120, 235};    // BGR orange
constexpr int kFont = cv::FONT_HERSHEY_SIMPLEX;

inline cv::Scalar label_colour(const std::string& label) {
    if (label == "button") return {60, 60, 230};
    if (label == "zipper") return {230, 180, 40};
    return {60, 200, 60};
}

inline void text(cv::Mat& img, const std::string& s, cv::Point at, double scale = 0.45, cv::Scalar c = kInk,
                 int thickness = 1) {
    cv::putText(img, s, at, kFont, scale, c, thickness, cv::LINE_AA);
}

inline int text_width(const std::string& s, double scale = 0.45, int thickness = 1) {
    int base = 0;
    return cv::getTextSize(s, kFont, scale, thickness, &base).width;
}
}  // namespace detail

/// Semi-transparent mask fill, box outline, and "label conf" tag per instance.
inline cv::Mat overlay(const Image8& image, std::span<const zeroshot::InstanceMask> instances, double alpha = 0.45) {
    cv::Mat out = to_bgr_mat(image);
    for (const auto& inst : instances) {
        const auto colour = detail::label_colour(inst.label);
        for (int y = 0; y < inst.mask.height(); ++y) {
            auto* row = out.ptr<cv::Vec3b>(y);
            for (int x = 0; x < inst.mask.width(); ++x) {
                if (!inst.mask(y, x)) continue;
                for (int c = 0; c < 3; ++c)
                    row[x][c] = cv::saturate_cast<uchar>((1.0 - alpha) * row[x][c] + alpha * colour[c]);
            }
        }
        const auto& b = inst.source_box.box;
        cv::rectangle(out, {b.x1, b.y1}, {b.x2 - 1, b.y2 - 1}, colour, 2);
        const auto tag = fmt::format("{} {:.2f}", inst.label, inst.source_box.confidence);
        const int ty = b.y1 > 16 ? b.y1 - 5 : std::min(out.rows - 4, b.y2 + 14);
        detail::text(out, tag, {b.x1, ty}, 0.45, colour, 1);
    }
    return out;
}

enum class CurveMetric { Accuracy, Loss };

inline const char* metric_name(CurveMetric m) { return m == CurveMetric::Accuracy ? "accuracy" : "loss"; }

/// Train and validation curves over the concatenated epochs of both phases,
/// with a dashed marker at the phase boundary.
inline cv::Mat curve_figure(const TrainHistory& h, CurveMetric metric, const std::string& title, int width = 720,
                            int height = 440) {
    cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
    const int left = 64, right = 20, top = 40, bottom = 52;
    const int pw = width - left - right, ph = height - top - bottom;

    std::vector<double> tr, va;
    for (const auto& r : h) {
        tr.push_back(metric == CurveMetric::Accuracy ? r.train_acc : r.train_loss);
        va.push_back(metric == CurveMetric::Accuracy ? r.val_acc : r.val_loss);
    }
    double lo = 0.0, hi = 1.0;
    if (metric == CurveMetric::Loss && !tr.empty()) {
        hi = std::max(*std::max_element(tr.begin(), tr.end()), *std::max_element(va.begin(), va.end()));
        hi = hi > 0 ? hi * 1.05 : 1.0;
    }
    const int n = static_cast<int>(h.size());
    auto px = [&](int i) { return left + (n <= 1 ? 0 : static_cast<int>(std::lround(double(i) * pw / (n - 1)))); };
    auto py = [&](double v) {
        const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
        return top + static_cast<int>(std::lround((1.0 - t) * ph));
    };

    for (int g = 0; g <= 5; ++g) {
        const double v = lo + (hi - lo) * g / 5.0;
        cv::line(img, {left, py(v)}, {left + pw, py(v)}, detail::kGrid, 1);
        detail::text(img, fmt::format("{:.2f}", v), {8, py(v) + 4}, 0.4);
    }
    cv::rectangle(img, {left, top}, {left + pw, top + ph}, detail::kInk, 1);

    for (int i = 1; i < n; ++i) {
        if (h[static_cast<std::size_t>(i)].phase != h[static_cast<std::size_t>(i - 1)].phase) {
            for (int y = top; y < top + ph; y += 8) cv::line(img, {px(i), y}, {px(i), std::min(y + 4, top + ph)}, detail::kInk, 1);
            detail::text(img, "phase 2", {px(i) + 4, top + 14}, 0.4);
        }
    }
    auto polyline = [&](const std::vector<double>& v, cv::Scalar c) {
        for (int i = 1; i < n; ++i) cv::line(img, {px(i - 1), py(v[i - 1])}, {px(i), py(v[i])}, c, 2, cv::LINE_AA);
        if (n == 1) cv::circle(img, {px(0), py(v[0])}, 3, c, cv::FILLED);
    };
    polyline(tr, detail::kTrain);
    polyline(va, detail::kVal);

    detail::text(img, title, {left, 26}, 0.55, detail::kInk, 1);
    detail::text(img, fmt::format("epoch (0..{})", std::max(0, n - 1)), {left + pw / 2 - 40, height - 14}, 0.45);
    const int lx = left + pw - 150, ly = top + ph - 36;
    cv::line(img, {lx, ly}, {lx + 24, ly}, detail::kTrain, 2);
    detail::text(img, fmt::format("train {}", metric_name(metric)), {lx + 30, ly + 4}, 0.4);
    cv::line(img, {lx, ly + 18}, {lx + 24, ly + 18}, detail::kVal, 2);
    detail::text(img, fmt::format("val {}", metric_name(metric)), {lx + 30, ly + 22}, 0.4);
    return img;
}

/// Count grid shaded by row-normalized value; rows true, columns predicted.
inline cv::Mat confusion_figure(const ConfusionMatrix& cm, const std::vector<std::string>& classes,
                                const std::string& title = "Confusion matrix") {
    const int k = cm.k();
    const int cell = 84, left = 150, top = 120, right = 72, bottom = 40;
    cv::Mat img(top + k * cell + bottom, left + k * cell + right, CV_8UC3, cv::Scalar(255, 255, 255));
    detail::text(img, title, {12, 26}, 0.6);
    detail::text(img, "predicted", {left + k * cell / 2 - 36, 50}, 0.5);
    for (int i = 0; i < k; ++i) {
        const long long row = cm.row_sum(i);
        for (int j = 0; j < k; ++j) {
            const double frac = row == 0 ? 0.0 : static_cast<double>(cm.at(i, j)) / static_cast<double>(row);
            const int shade = static_cast<int>(std::lround(255.0 - 200.0 * frac));
            const cv::Point p0{left + j * cell, top + i * cell};
            cv::rectangle(img, p0, p0 + cv::Point(cell, cell), cv::Scalar(255, shade, shade), cv::FILLED);
            cv::rectangle(img, p0, p0 + cv::Point(cell, cell), detail::kInk, 1);
            const auto s = std::to_string(cm.at(i, j));
            const cv::Scalar ink = frac > 0.6 ? cv::Scalar(255, 255, 255) : detail::kInk;
            detail::text(img, s, {p0.x + cell / 2 - detail::text_width(s, 0.7, 2) / 2, p0.y + cell / 2 + 8}, 0.7, ink, 2);
        }
        const auto& name = classes[static_cast<std::size_t>(i)];
        detail::text(img, name, {left - 8 - detail::text_width(name, 0.4), top + i * cell + cell / 2 + 4}, 0.4);
        // Column labels are staggered so long names do not collide.
        detail::text(img, name, {left + i * cell + 4, top - 10 - (i % 2) * 18}, 0.4);
    }
    return img;
}

}  // namespace texsort::render
