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
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <fmt/format.h>

#include "texsort/error.hpp"
#include "texsort/mask.hpp"

namespace texsort {

// ---------------------------------------------------------------------------
// Classification

/// k x k counts; rows are the true class, columns the predicted class.
class ConfusionMatrix {
public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int k) : k_(k), counts_(static_cast<std::size_t>(k) * k, 0) {}

    int k() const noexcept { return k_; }
    long long& at(int truth, int pred) { return counts_[static_cast<std::size_t>(truth) * k_ + pred]; }
    long long at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth) * k_ + pred]; }

    long long total() const { return std::accumulate(counts_.begin(), counts_.end(), 0LL); }
    long long trace() const {
        long long t = 0;
        for (int i = 0; i < k_; ++i) t += at(i, i);
        return t;
    }
    long long row_sum(int i) const {
        long long s = 0;
        for (int j = 0; j < k_; ++j) s += at(i, j);
        return s;
    }
    long long col_sum(int j) const {
        long long s = 0;
        for (int i = 0; i < k_; ++i) s += at(i, j);
        return s;
    }

    static ConfusionMatrix from_rows(const std::vector<std::vector<long long>>& rows) {
        ConfusionMatrix cm(static_cast<int>(rows.size()));
        for (int i = 0; i < cm.k(); ++i) {
            if (static_cast<int>(rows[i].size()) != cm.k()) throw ValidationError("confusion matrix must be square");
            for (int j = 0; j < cm.k(); ++j) {
                if (rows[i][j] < 0) throw ValidationError("confusion counts must be non-negative");
                cm.at(i, j) = rows[i][j];
            }
        }
        return cm;
    }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    int k_ = 0;
    std::vector<long long> counts_;
};

inline ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, int k) {
    if (truth.size() != pred.size())
        throw ValidationError(fmt::format("label sequences differ in length ({} vs {})", truth.size(), pred.size()));
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= k) throw ValidationError(fmt::format("unknown true label index {}", truth[i]));
        if (pred[i] < 0 || pred[i] >= k) throw ValidationError(fmt::format("unknown predicted label index {}", pred[i]));
        ++cm.at(truth[i], pred[i]);
    }
    return cm;
}

/// String-label overload; `class_order` fixes the axes.
inline ConfusionMatrix confusion(const std::vector<std::string>& truth, const std::vector<std::string>& pred,
                                 const std::vector<std::string>& class_order) {
    auto index = [&](const std::string& name) {
        const auto it = std::find(class_order.begin(), class_order.end(), name);
        if (it == class_order.end()) throw ValidationError("unknown label '" + name + "'");
        return static_cast<int>(it - class_order.begin());
    };
    std::vector<int> t, p;
    for (const auto& s : truth) t.push_back(index(s));
    for (const auto& s : pred) p.push_back(index(s));
    return confusion(t, p, static_cast<int>(class_order.size()));
}

inline double accuracy(const ConfusionMatrix& cm) {
    const long long total = cm.total();
    if (total == 0) throw ValidationError("accuracy of an empty confusion matrix is undefined");
    return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

/// a / b with 0/0 (and x/0) defined as 0.
inline double safe_ratio(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

inline double f1_score(double precision, double recall) {
    return safe_ratio(2.0 * precision * recall, precision + recall);
}

struct ClassMetrics {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    long long support = 0;
};

inline std::vector<ClassMetrics> per_class_prf(const ConfusionMatrix& cm) {
    std::vector<ClassMetrics> out(static_cast<std::size_t>(cm.k()));
    for (int i = 0; i < cm.k(); ++i) {
        const double tp = static_cast<double>(cm.at(i, i));
        auto& m = out[static_cast<std::size_t>(i)];
        m.support = cm.row_sum(i);
        m.precision = safe_ratio(tp, static_cast<double>(cm.col_sum(i)));
        m.recall = safe_ratio(tp, static_cast<double>(m.support));
        m.f1 = f1_score(m.precision, m.recall);
    }
    return out;
}

/// Support-weighted mean of per-class F1.
inline double weighted_f1(std::span<const ClassMetrics> per_class) {
    double num = 0.0, den = 0.0;
    for (const auto& m : per_class) {
        num += static_cast<double>(m.support) * m.f1;
        den += static_cast<double>(m.support);
    }
    return safe_ratio(num, den);
}

struct ClassReport {
    std::vector<std::string> classes;
    std::vector<ClassMetrics> per_class;
    double accuracy = 0;
    double weighted_f1 = 0;
    ConfusionMatrix matrix;
};

inline double weighted_f1(const ClassReport& r) { return weighted_f1(r.per_class); }

inline ClassReport classification_report(const ConfusionMatrix& cm, std::vector<std::string> classes) {
    if (static_cast<int>(classes.size()) != cm.k()) throw ValidationError("class list does not match matrix size");
    ClassReport r;
    r.classes = std::move(classes);
    r.per_class = per_class_prf(cm);
    r.accuracy = accuracy(cm);
    r.weighted_f1 = weighted_f1(r.per_class);
    r.matrix = cm;
    return r;
}

// CSV forms. Reals are written with 17 significant digits so they re-parse exactly.

inline std::string confusion_to_csv(const ConfusionMatrix& cm, const std::vector<std::string>& classes) {
    std::string out = "true\\pred";
    for (const auto& c : classes) out += "," + c;
    out += "\n";
    for (int i = 0; i < cm.k(); ++i) {
        out += classes[static_cast<std::size_t>(i)];
        for (int j = 0; j < cm.k(); ++j) out += "," + std::to_string(cm.at(i, j));
        out += "\n";
    }
    return out;
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}
}  // namespace detail

inline std::pair<ConfusionMatrix, std::vector<std::string>> confusion_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("confusion CSV is empty");
    auto header = detail::split_csv_line(line);
    std::vector<std::string> classes(header.begin() + 1, header.end());
    std::vector<std::vector<long long>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != classes.size() + 1) throw ValidationError("confusion CSV: ragged row '" + line + "'");
        std::vector<long long> row;
        for (std::size_t j = 1; j < cells.size(); ++j) row.push_back(std::stoll(cells[j]));
        rows.push_back(std::move(row));
    }
    return {ConfusionMatrix::from_rows(rows), classes};
}

inline std::string class_report_to_csv(const ClassReport& r) {
    std::string out = "class,precision,recall,f1,support\n";
    for (std::size_t i = 0; i < r.per_class.size(); ++i) {
        const auto& m = r.per_class[i];
        out += fmt::format("{},{:.17g},{:.17g},{:.17g},{}\n", r.classes[i], m.precision, m.recall, m.f1, m.support);
    }
    out += fmt::format("accuracy,,,{:.17g},{}\n", r.accuracy, r.matrix.total());
    out += fmt::format("weighted_f1,,,{:.17g},{}\n", r.weighted_f1, r.matrix.total());
    return out;
}

/// Parses per-class rows back; accuracy and weighted F1 come from the summary rows.
inline ClassReport class_report_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    if (line != "class,precision,recall,f1,support") throw ValidationError("class report CSV: bad header");
    ClassReport r;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != 5) throw ValidationError("class report CSV: bad row '" + line + "'");
        if (cells[0] == "accuracy") {
            r.accuracy = std::stod(cells[3]);
        } else if (cells[0] == "weighted_f1") {
            r.weighted_f1 = std::stod(cells[3]);
        } else {
            r.classes.push_back(cells[0]);
            r.per_class.push_back({std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]), std::stoll(cells[4])});
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Segmentation

/// |a AND b| / |a OR b|; 0 when both are empty.
inline double mask_iou(const Mask& a, const Mask& b) {
    if (a.height() != b.height() || a.width() != b.width())
        throw ValidationError(fmt::format("mask dims differ: {}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width()));
    long long inter = 0, uni = 0;
    const auto& x = a.bits();
    const auto& y = b.bits();
    for (std::size_t i = 0; i < x.size(); ++i) {
        inter += x[i] & y[i];
        uni += x[i] | y[i];
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double box_iou(const Box& a, const Box& b) {
    if (!a.valid() || !b.valid()) throw ValidationError("box_iou: invalid box");
    const Box inter{std::max(a.x1, b.x1), std::max(a.y1, b.y1), std::min(a.x2, b.x2), std::min(a.y2, b.y2)};
    const long long i = inter.area();
    return static_cast<double>(i) / static_cast<double>(a.area() + b.area() - i);
}

/// A labelled instance seen by the matcher; does not own the mask.
struct RegionRef {
    std::string_view label;
    const Mask* mask = nullptr;
    Box box;
};

enum class MatchMode { Mask, Box };

struct MatchPair {
    int pred = 0;
    int gt = 0;
    double iou = 0;
};

struct MatchResult {
    std::vector<MatchPair> pairs;
    std::vector<int> unmatched_preds;
    std::vector<int> unmatched_gts;
};

inline double region_iou(const RegionRef& a, const RegionRef& b, MatchMode mode) {
    return mode == MatchMode::Box ? box_iou(a.box, b.box) : mask_iou(*a.mask, *b.mask);
}

/// Greedy label-gated matching: candidate pairs with equal labels are taken in
/// descending IoU (ties: lower pred index, then lower gt index) and accepted
/// while both sides are free and IoU >= threshold.
inline MatchResult match_instances(std::span<const RegionRef> preds, std::span<const RegionRef> gts,
                                   double iou_threshold = 0.5, MatchMode mode = MatchMode::Mask) {
    std::vector<MatchPair> cands;
    for (int p = 0; p < static_cast<int>(preds.size()); ++p)
        for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
            if (preds[p].label != gts[g].label) continue;
            const double iou = region_iou(preds[p], gts[g], mode);
            if (iou >= iou_threshold && iou > 0.0) cands.push_back({p, g, iou});
        }
    std::sort(cands.begin(), cands.end(), [](const MatchPair& a, const MatchPair& b) {
        return std::tie(b.iou, a.pred, a.gt) < std::tie(a.iou, b.pred, b.gt);
    });
    std::vector<char> pred_used(preds.size(), 0), gt_used(gts.size(), 0);
    MatchResult r;
    for (const auto& c : cands) {
        if (pred_used[c.pred] || gt_used[c.gt]) continue;
        pred_used[c.pred] = gt_used[c.gt] = 1;
        r.pairs.push_back(c);
    }
    for (int p = 0; p < static_cast<int>(preds.size()); ++p)
        if (!pred_used[p]) r.unmatched_preds.push_back(p);
    for (int g = 0; g < static_cast<int>(gts.size()); ++g)
        if (!gt_used[g]) r.unmatched_gts.push_back(g);
    return r;
}

struct Prf {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
};

inline Prf prf_from_counts(long long matched, long long unmatched_preds, long long unmatched_gts) {
    Prf r;
    r.precision = safe_ratio(static_cast<double>(matched), static_cast<double>(matched + unmatched_preds));
    r.recall = safe_ratio(static_cast<double>(matched), static_cast<double>(matched + unmatched_gts));
    r.f1 = f1_score(r.precision, r.recall);
    return r;
}

inline Prf detection_prf(const MatchResult& m) {
    return prf_from_counts(static_cast<long long>(m.pairs.size()), static_cast<long long>(m.unmatched_preds.size()),
                           static_cast<long long>(m.unmatched_gts.size()));
}

/// Mean over ground-truth instances of the matched IoU, unmatched counting as 0.
inline double mean_iou(const MatchResult& m, std::size_t num_gts) {
    if (num_gts == 0) return 0.0;
    double s = 0.0;
    for (const auto& p : m.pairs) s += p.iou;
    return s / static_cast<double>(num_gts);
}

/// Accumulates detection counts and IoUs over many images.
class SegmentationTally {
public:
    explicit SegmentationTally(double iou_threshold = 0.5) : threshold_(iou_threshold) {}

    void add_image(std::span<const RegionRef> preds, std::span<const RegionRef> gts) {
        const auto masks = match_instances(preds, gts, threshold_, MatchMode::Mask);
        const auto boxes = match_instances(preds, gts, threshold_, MatchMode::Box);
        matched_ += static_cast<long long>(masks.pairs.size());
        unmatched_preds_ += static_cast<long long>(masks.unmatched_preds.size());
        unmatched_gts_ += static_cast<long long>(masks.unmatched_gts.size());
        box_matched_ += static_cast<long long>(boxes.pairs.size());
        box_unmatched_preds_ += static_cast<long long>(boxes.unmatched_preds.size());
        box_unmatched_gts_ += static_cast<long long>(boxes.unmatched_gts.size());
        for (const auto& p : masks.pairs) mask_iou_sum_ += p.iou;
        for (const auto& p : boxes.pairs) box_iou_sum_ += p.iou;
        gts_ += static_cast<long long>(gts.size());
        if (!gts.empty()) {
            per_image_mask_iou_sum_ += mean_iou(masks, gts.size());
            ++images_with_gt_;
        }
    }

    Prf mask_prf() const { return prf_from_counts(matched_, unmatched_preds_, unmatched_gts_); }
    Prf box_prf() const { return prf_from_counts(box_matched_, box_unmatched_preds_, box_unmatched_gts_); }
    double mean_mask_iou() const { return safe_ratio(mask_iou_sum_, static_cast<double>(gts_)); }
    double mean_box_iou() const { return safe_ratio(box_iou_sum_, static_cast<double>(gts_)); }
    /// Alternative population: mean over images of each image's per-instance mean.
    double per_image_mean_mask_iou() const {
        return safe_ratio(per_image_mask_iou_sum_, static_cast<double>(images_with_gt_));
    }
    long long gt_count() const noexcept { return gts_; }

private:
    double threshold_;
    long long matched_ = 0, unmatched_preds_ = 0, unmatched_gts_ = 0;
    long long box_matched_ = 0, box_unmatched_preds_ = 0, box_unmatched_gts_ = 0;
    double mask_iou_sum_ = 0, box_iou_sum_ = 0, per_image_mask_iou_sum_ = 0;
    long long gts_ = 0, images_with_gt_ = 0;
};

}  // namespace texsort
