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
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "texsort/dataset.hpp"
#include "texsort/error.hpp"
#include "texsort/image.hpp"
#include "texsort/io.hpp"
#include "texsort/mask.hpp"
#include "texsort/metrics.hpp"

namespace texsort::zeroshot {

/// Set mask pixels may lie this far outside their prompt box.
inline constexpr int kBleedBand = 8;

struct TextPromptSet {
    std::vector<std::string> prompts{"button", "zipper"};

    bool contains(const std::string& label) const {
        return std::find(prompts.begin(), prompts.end(), label) != prompts.end();
    }
};

inline void validate(const TextPromptSet& p) {
    if (p.prompts.empty()) throw ValidationError("prompt set must not be empty");
    std::set<std::string> seen;
    for (const auto& s : p.prompts) {
        if (s.empty()) throw ValidationError("prompt labels must be non-empty");
        if (!seen.insert(s).second) throw ValidationError("duplicate prompt label '" + s + "'");
    }
}

struct DetectedBox {
    std::string label;
    double confidence = 0;
    Box box;

    friend bool operator==(const DetectedBox&, const DetectedBox&) = default;
};

struct InstanceMask {
    std::string label;
    Mask mask;
    DetectedBox source_box;
};

/// What a backend sees of an image. `pixels` may be null for backends that
/// do not look at image content (the stubs).
struct SceneImage {
    std::string id;
    int height = 0;
    int width = 0;
    const Image8* pixels = nullptr;

    static SceneImage of(std::string id, const Image8& img) {
        return SceneImage{std::move(id), img.height, img.width, &img};
    }
};

struct DetectConfig {
    double box_threshold = 0.35;
    std::optional<double> text_threshold;  // backend default when absent
};

inline void validate(const DetectConfig& c) {
    if (!(c.box_threshold >= 0.0 && c.box_threshold <= 1.0))
        throw ValidationError("box_threshold must be in [0, 1]");
    if (c.text_threshold && !(*c.text_threshold >= 0.0 && *c.text_threshold <= 1.0))
        throw ValidationError("text_threshold must be in [0, 1]");
}

class DetectorBackend {
public:
    virtual ~DetectorBackend() = default;
    virtual std::vector<DetectedBox> detect(const SceneImage& image, const TextPromptSet& prompts,
                                            double box_threshold, std::optional<double> text_threshold) = 0;
    /// True when detect() may be called concurrently on one instance.
    virtual bool reentrant() const { return false; }
};

class SegmenterBackend {
public:
    virtual ~SegmenterBackend() = default;
    /// One mask per box, in box order.
    virtual std::vector<Mask> segment(const SceneImage& image, std::span<const DetectedBox> boxes) = 0;
    virtual bool reentrant() const { return false; }
};

/// Descending confidence, then label, then x1.
inline void sort_detections(std::vector<DetectedBox>& boxes) {
    std::stable_sort(boxes.begin(), boxes.end(), [](const DetectedBox& a, const DetectedBox& b) {
        return std::tie(b.confidence, a.label, a.box.x1) < std::tie(a.confidence, b.label, b.box.x1);
    });
}

inline std::vector<DetectedBox> detect_features(const SceneImage& image, const TextPromptSet& prompts,
                                                 const DetectConfig& cfg, DetectorBackend& backend) {
    std::vector<DetectedBox> raw;
    try {
        raw = backend.detect(image, prompts, cfg.box_threshold, cfg.text_threshold);
    } catch (const BackendError&) {
        throw;
    } catch (const std::exception& e) {
        throw BackendError("detect", image.id, e.what());
    }
    std::vector<DetectedBox> out;
    for (auto& d : raw) {
        if (!d.box.valid() || !d.box.within(image.width, image.height))
            throw BackendError("detect", image.id,
                               fmt::format("box [{},{},{},{}] invalid for {}x{} image", d.box.x1, d.box.y1, d.box.x2,
                                           d.box.y2, image.height, image.width));
        if (!(d.confidence >= 0.0 && d.confidence <= 1.0))
            throw BackendError("detect", image.id, fmt::format("confidence {} outside [0, 1]", d.confidence));
        if (!prompts.contains(d.label)) throw BackendError("detect", image.id, "label '" + d.label + "' not prompted");
        if (d.confidence >= cfg.box_threshold) out.push_back(std::move(d));
    }
    sort_detections(out);
    return out;
}

/// True when every set pixel lies within `band` pixels of `b`.
inline bool within_band(const Mask& m, const Box& b, int band) {
    const auto tb = tight_box(m);
    if (!tb) return true;
    return tb->x1 >= b.x1 - band && tb->y1 >= b.y1 - band && tb->x2 <= b.x2 + band && tb->y2 <= b.y2 + band;
}

inline std::vector<InstanceMask> segment_from_boxes(const SceneImage& image, std::span<const DetectedBox> boxes,
                                                    SegmenterBackend& backend) {
    if (boxes.empty()) return {};
    std::vector<Mask> masks;
    try {
        masks = backend.segment(image, boxes);
    } catch (const BackendError&) {
        throw;
    } catch (const std::exception& e) {
        throw BackendError("segment", image.id, e.what());
    }
    if (masks.size() != boxes.size())
        throw BackendError("segment", image.id,
                           fmt::format("backend returned {} masks for {} boxes", masks.size(), boxes.size()));
    std::vector<InstanceMask> out;
    out.reserve(masks.size());
    for (std::size_t i = 0; i < masks.size(); ++i) {
        auto& m = masks[i];
        if (m.height() != image.height || m.width() != image.width)
            throw BackendError("segment", image.id, fmt::format("mask {} has dims {}x{}", i, m.height(), m.width()));
        if (!m.any()) throw BackendError("segment", image.id, fmt::format("mask {} is empty", i));
        if (!within_band(m, boxes[i].box, kBleedBand))
            throw BackendError("segment", image.id, fmt::format("mask {} leaves its box's tolerance band", i));
        out.push_back(InstanceMask{boxes[i].label, std::move(m), boxes[i]});
    }
    return out;
}

/// detect_features then segment_from_boxes. Each result carries its source box.
inline std::vector<InstanceMask> run_pipeline(const SceneImage& image, const TextPromptSet& prompts,
                                              const DetectConfig& cfg, DetectorBackend& detector,
                                              SegmenterBackend& segmenter) {
    const auto boxes = detect_features(image, prompts, cfg, detector);
    return segment_from_boxes(image, boxes, segmenter);
}

// ---------------------------------------------------------------------------
// Stub backends. All are read-only after construction and reentrant.

using GroundTruthIndex = std::map<std::string, std::vector<GroundTruthInstance>>;

inline GroundTruthIndex index_ground_truth(const Manifest& m) {
    GroundTruthIndex idx;
    for (const auto& s : m.samples) idx[s.id] = s.gt_instances;
    return idx;
}

namespace detail {
inline const std::vector<GroundTruthInstance>& lookup(const GroundTruthIndex& gts, const std::string& id) {
    static const std::vector<GroundTruthInstance> none;
    const auto it = gts.find(id);
    return it == gts.end() ? none : it->second;
}

/// Same-label ground truth instance with the highest box IoU against `b`; null if none overlaps.
inline const GroundTruthInstance* best_gt_for(const std::vector<GroundTruthInstance>& gts, const DetectedBox& b) {
    const GroundTruthInstance* best = nullptr;
    double best_iou = 0.0;
    for (const auto& g : gts) {
        if (g.label != b.label) continue;
        const double iou = box_iou(g.box, b.box);
        if (iou > best_iou) best_iou = iou, best = &g;
    }
    return best;
}

inline Mask box_fill(const SceneImage& image, const Box& b) {
    Mask m(image.height, image.width);
    m.fill_box(b);
    return m;
}
}  // namespace detail

/// Reports each prompted ground-truth box, grown by `dilation` px and clamped.
class GtReplayDetector : public DetectorBackend {
public:
    explicit GtReplayDetector(GroundTruthIndex gts, double confidence = 0.9, int dilation = 0)
        : gts_(std::move(gts)), confidence_(confidence), dilation_(dilation) {}

    std::vector<DetectedBox> detect(const SceneImage& image, const TextPromptSet& prompts, double,
                                    std::optional<double>) override {
        std::vector<DetectedBox> out;
        for (const auto& g : detail::lookup(gts_, image.id))
            if (prompts.contains(g.label))
                out.push_back({g.label, confidence_, dilate(g.box, dilation_, image.width, image.height)});
        return out;
    }
    bool reentrant() const override { return true; }

private:
    GroundTruthIndex gts_;
    double confidence_;
    int dilation_;
};

/// Returns the same canned boxes for every image.
class FixedDetector : public DetectorBackend {
public:
    explicit FixedDetector(std::vector<DetectedBox> boxes) : boxes_(std::move(boxes)) {}
    std::vector<DetectedBox> detect(const SceneImage&, const TextPromptSet&, double, std::optional<double>) override {
        return boxes_;
    }
    bool reentrant() const override { return true; }

private:
    std::vector<DetectedBox> boxes_;
};

class BoxFillSegmenter : public SegmenterBackend {
public:
    std::vector<Mask> segment(const SceneImage& image, std::span<const DetectedBox> boxes) override {
        std::vector<Mask> out;
        for (const auto& b : boxes) out.push_back(detail::box_fill(image, b.box));
        return out;
    }
    bool reentrant() const override { return true; }
};

/// Returns the best-overlapping same-label ground-truth mask, dilated by
/// `dilation` px with a square element; falls back to filling the box.
class GtReplaySegmenter : public SegmenterBackend {
public:
    explicit GtReplaySegmenter(GroundTruthIndex gts, int dilation = 0) : gts_(std::move(gts)), dilation_(dilation) {}

    std::vector<Mask> segment(const SceneImage& image, std::span<const DetectedBox> boxes) override {
        const auto& gts = detail::lookup(gts_, image.id);
        std::vector<Mask> out;
        for (const auto& b : boxes) {
            const auto* g = detail::best_gt_for(gts, b);
            if (!g) {
                out.push_back(detail::box_fill(image, b.box));
            } else {
                out.push_back(dilation_ > 0 ? dilate(g->mask, dilation_) : g->mask);
            }
        }
        return out;
    }
    bool reentrant() const override { return true; }

private:
    GroundTruthIndex gts_;
    int dilation_;
};

// ---------------------------------------------------------------------------
// Precomputed backends: replay detections and masks exported by an external
// model run. File format:
//   {"<image_id>": [{"label": "...", "confidence": 0.9, "box": [x1,y1,x2,y2], "mask_rle": "HxW:..."}]}
// `mask_rle` is needed only by the segmenter.

using PrecomputedIndex = std::map<std::string, std::vector<std::pair<DetectedBox, std::optional<Mask>>>>;

inline PrecomputedIndex load_precomputed(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
    }
    if (!j.is_object()) throw ValidationError(path.string() + ": expected an object keyed by image id");
    PrecomputedIndex idx;
    for (const auto& [id, list] : j.items()) {
        auto& entries = idx[id];
        for (const auto& e : list) {
            try {
                DetectedBox d;
                d.label = e.at("label").get<std::string>();
                d.confidence = e.value("confidence", 1.0);
                const auto b = e.at("box").get<std::vector<int>>();
                if (b.size() != 4) throw ValidationError("box must have 4 entries");
                d.box = Box{b[0], b[1], b[2], b[3]};
                std::optional<Mask> m;
                if (e.contains("mask_rle")) m = decode_rle(e.at("mask_rle").get<std::string>());
                entries.emplace_back(std::move(d), std::move(m));
            } catch (const nlohmann::json::exception& ex) {
                throw ValidationError(fmt::format("{}: image '{}': {}", path.string(), id, ex.what()));
            }
        }
    }
    return idx;
}

class PrecomputedDetector : public DetectorBackend {
public:
    explicit PrecomputedDetector(PrecomputedIndex idx) : idx_(std::move(idx)) {}

    std::vector<DetectedBox> detect(const SceneImage& image, const TextPromptSet& prompts, double,
                                    std::optional<double>) override {
        std::vector<DetectedBox> out;
        const auto it = idx_.find(image.id);
        if (it == idx_.end()) return out;
        for (const auto& [d, m] : it->second)
            if (prompts.contains(d.label)) out.push_back(d);
        return out;
    }
    bool reentrant() const override { return true; }

private:
    PrecomputedIndex idx_;
};

/// Looks masks up by (label, box); a prompt box with no stored mask is an error.
class PrecomputedSegmenter : public SegmenterBackend {
public:
    explicit PrecomputedSegmenter(PrecomputedIndex idx) : idx_(std::move(idx)) {}

    std::vector<Mask> segment(const SceneImage& image, std::span<const DetectedBox> boxes) override {
        std::vector<Mask> out;
        const auto it = idx_.find(image.id);
        for (const auto& b : boxes) {
            const Mask* found = nullptr;
            if (it != idx_.end())
                for (const auto& [d, m] : it->second)
                    if (m && d.label == b.label && d.box == b.box) found = &*m;
            if (!found)
                throw BackendError("segment", image.id,
                                   fmt::format("no stored mask for {} box [{},{},{},{}]", b.label, b.box.x1, b.box.y1,
                                               b.box.x2, b.box.y2));
            out.push_back(*found);
        }
        return out;
    }
    bool reentrant() const override { return true; }

private:
    PrecomputedIndex idx_;
};

// ---------------------------------------------------------------------------
// Backend selection

struct BackendConfig {
    std::string kind = "gt_replay";  // detector: gt_replay | precomputed; segmenter: gt_replay | box_fill | precomputed
    double confidence = 0.9;
    int dilation = 0;
    std::filesystem::path path;  // precomputed file
};

inline const std::vector<std::string>& detector_kinds() {
    static const std::vector<std::string> k{"gt_replay", "precomputed"};
    return k;
}
inline const std::vector<std::string>& segmenter_kinds() {
    static const std::vector<std::string> k{"gt_replay", "box_fill", "precomputed"};
    return k;
}

inline std::vector<std::string> validation_errors(const BackendConfig& c, bool detector) {
    std::vector<std::string> errs;
    const auto& kinds = detector ? detector_kinds() : segmenter_kinds();
    const char* role = detector ? "detector" : "segmenter";
    if (std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end()) {
        std::string list;
        for (const auto& k : kinds) list += (list.empty() ? "" : ", ") + k;
        errs.push_back(fmt::format("{}.kind '{}' is not one of: {}", role, c.kind, list));
    }
    if (c.dilation < 0) errs.push_back(fmt::format("{}.dilation must be non-negative", role));
    if (!(c.confidence >= 0.0 && c.confidence <= 1.0)) errs.push_back(fmt::format("{}.confidence must be in [0, 1]", role));
    if (c.kind == "precomputed" && c.path.empty()) errs.push_back(fmt::format("{}.path is required for precomputed", role));
    return errs;
}

inline std::unique_ptr<DetectorBackend> make_detector(const BackendConfig& c, const Manifest& manifest) {
    if (c.kind == "gt_replay") return std::make_unique<GtReplayDetector>(index_ground_truth(manifest), c.confidence, c.dilation);
    if (c.kind == "precomputed") return std::make_unique<PrecomputedDetector>(load_precomputed(c.path));
    throw ValidationError("unknown detector kind '" + c.kind + "'");
}

inline std::unique_ptr<SegmenterBackend> make_segmenter(const BackendConfig& c, const Manifest& manifest) {
    if (c.kind == "gt_replay") return std::make_unique<GtReplaySegmenter>(index_ground_truth(manifest), c.dilation);
    if (c.kind == "box_fill") return std::make_unique<BoxFillSegmenter>();
    if (c.kind == "precomputed") return std::make_unique<PrecomputedSegmenter>(load_precomputed(c.path));
    throw ValidationError("unknown segmenter kind '" + c.kind + "'");
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::json to_json(const std::string& image_id, std::span<const InstanceMask> instances) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& inst : instances) {
        const auto& b = inst.source_box.box;
        list.push_back({{"label", inst.label},
                        {"confidence", inst.source_box.confidence},
                        {"box", {b.x1, b.y1, b.x2, b.y2}},
                        {"mask_rle", encode_rle(inst.mask)}});
    }
    return {{"image_id", image_id}, {"instances", list}};
}

inline std::vector<InstanceMask> instances_from_json(const nlohmann::json& j) {
    std::vector<InstanceMask> out;
    for (const auto& e : j.at("instances")) {
        const auto b = e.at("box").get<std::vector<int>>();
        if (b.size() != 4) throw ValidationError("box must have 4 entries");
        DetectedBox d{e.at("label").get<std::string>(), e.at("confidence").get<double>(), Box{b[0], b[1], b[2], b[3]}};
        out.push_back(InstanceMask{d.label, decode_rle(e.at("mask_rle").get<std::string>()), d});
    }
    return out;
}

/// Matcher views of pipeline output and ground truth; both borrow the masks.
inline std::vector<RegionRef> regions(std::span<const InstanceMask> preds) {
    std::vector<RegionRef> r;
    for (const auto& p : preds) r.push_back({p.label, &p.mask, p.source_box.box});
    return r;
}
inline std::vector<RegionRef> regions(std::span<const GroundTruthInstance> gts) {
    std::vector<RegionRef> r;
    for (const auto& g : gts) r.push_back({g.label, &g.mask, g.box});
    return r;
}

}  // namespace texsort::zeroshot
