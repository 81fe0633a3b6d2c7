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
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "texsort/classifier.hpp"
#include "texsort/error.hpp"
#include "texsort/io.hpp"
#include "texsort/preprocess.hpp"
#include "texsort/zeroshot.hpp"

namespace texsort {

/// Everything a command needs, after defaults and overrides are applied.
struct RunConfig {
    std::filesystem::path manifest;
    std::string backbone = "Tiny";
    int folds = 5;
    std::uint64_t seed = 0;
    std::filesystem::path out = "run";
    std::optional<std::filesystem::path> weights_dir;  // overrides TEXSORT_WEIGHTS_DIR
    bool random_init = false;                          // skip pretrained weights
    int jobs = 1;
    TrainConfig train;
    AugmentConfig augment;
    CropMode crop_mode = CropMode::Literal;
    zeroshot::TextPromptSet prompts;
    zeroshot::DetectConfig detect;
    zeroshot::BackendConfig detector;
    zeroshot::BackendConfig segmenter;

    WeightSource weight_source() const {
        if (random_init) return WeightSource::random(seed);
        return weights_dir ? WeightSource::pretrained(*weights_dir) : WeightSource::from_environment();
    }
};

namespace detail {

/// Reads typed fields from one JSON object, recording every problem instead of
/// stopping at the first.
class FieldReader {
public:
    FieldReader(const nlohmann::json& obj, std::string prefix, std::vector<std::string>& errors)
        : obj_(obj), prefix_(std::move(prefix)), errors_(errors) {
        if (!obj_.is_object()) errors_.push_back(where("") + " must be an object");
    }

    ~FieldReader() {
        if (!obj_.is_object()) return;
        for (const auto& [key, v] : obj_.items())
            if (!seen_.count(key)) errors_.push_back("unknown key '" + where(key) + "'");
    }

    FieldReader(const FieldReader&) = delete;
    FieldReader& operator=(const FieldReader&) = delete;

    template <typename T>
    void read(const std::string& key, T& out) {
        const auto* v = find(key);
        if (!v) return;
        try {
            out = v->get<T>();
        } catch (const nlohmann::json::exception&) {
            errors_.push_back(fmt::format("'{}' has the wrong type ({})", where(key), v->type_name()));
        }
    }

    void read_path(const std::string& key, std::filesystem::path& out, const std::filesystem::path& base) {
        std::string s;
        const auto before = errors_.size();
        if (!find(key)) return;
        read(key, s);
        if (errors_.size() == before) out = resolve(s, base);
    }

    void read_choice(const std::string& key, std::string& out, const std::vector<std::string>& allowed) {
        const auto before = errors_.size();
        std::string s = out;
        read(key, s);
        if (errors_.size() != before || !find(key)) return;
        if (std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
            std::string list;
            for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
            errors_.push_back(fmt::format("'{}' must be one of: {} (got '{}')", where(key), list, s));
            return;
        }
        out = s;
    }

    const nlohmann::json* child(const std::string& key) { return find(key); }

    static std::filesystem::path resolve(const std::string& s, const std::filesystem::path& base) {
        const std::filesystem::path p(s);
        return p.is_absolute() || base.empty() ? p : base / p;
    }

private:
    const nlohmann::json* find(const std::string& key) {
        seen_.insert(key);
        if (!obj_.is_object()) return nullptr;
        const auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }
    std::string where(const std::string& key) const {
        if (prefix_.empty()) return key.empty() ? "config" : key;
        return key.empty() ? prefix_ : prefix_ + "." + key;
    }

    const nlohmann::json& obj_;
    std::string prefix_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
};

inline void read_backend(FieldReader& parent, const std::string& key, zeroshot::BackendConfig& out,
                         zeroshot::DetectConfig* detect, const std::filesystem::path& base,
                         std::vector<std::string>& errors) {
    const auto* j = parent.child(key);
    if (!j) return;
    FieldReader r(*j, key, errors);
    r.read("kind", out.kind);
    r.read("confidence", out.confidence);
    r.read("dilation", out.dilation);
    r.read_path("path", out.path, base);
    if (detect) {
        r.read("box_threshold", detect->box_threshold);
        if (const auto* t = r.child("text_threshold"); t && !t->is_null()) {
            double v = 0;
            r.read("text_threshold", v);
            detect->text_threshold = v;
        }
    }
}

}  // namespace detail

/// Every problem with the config's values; empty means valid. Does not touch
/// the filesystem, and does not require a manifest (commands check that).
inline std::vector<std::string> validation_errors(const RunConfig& c) {
    std::vector<std::string> errs;
    try {
        backbone_spec(c.backbone);
    } catch (const ValidationError& e) {
        errs.push_back(e.what());
    }
    if (c.folds < 2) errs.push_back("folds must be >= 2");
    if (c.jobs < 1) errs.push_back("jobs must be >= 1");
    for (auto& e : validation_errors(c.train)) errs.push_back(std::move(e));
    try {
        validate(c.augment);
    } catch (const ValidationError& e) {
        errs.push_back(e.what());
    }
    try {
        zeroshot::validate(c.prompts);
    } catch (const ValidationError& e) {
        errs.push_back(std::string("prompts: ") + e.what());
    }
    try {
        zeroshot::validate(c.detect);
    } catch (const ValidationError& e) {
        errs.push_back(std::string("detector.") + e.what());
    }
    for (auto& e : zeroshot::validation_errors(c.detector, true)) errs.push_back(std::move(e));
    for (auto& e : zeroshot::validation_errors(c.segmenter, false)) errs.push_back(std::move(e));
    return errs;
}

/// Thrown with every collected problem, one per line.
inline void throw_if_errors(const std::vector<std::string>& errs) {
    if (errs.empty()) return;
    std::string msg = fmt::format("{} configuration error{}:", errs.size(), errs.size() == 1 ? "" : "s");
    for (const auto& e : errs) msg += "\n  - " + e;
    throw ValidationError(msg);
}

/// Relative paths resolve against `base_dir` (the config file's directory).
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    RunConfig c;
    std::vector<std::string> errs;
    {
        detail::FieldReader r(j, "", errs);
        r.read_path("manifest", c.manifest, base_dir);
        r.read("backbone", c.backbone);
        r.read("folds", c.folds);
        r.read("seed", c.seed);
        r.read_path("out", c.out, base_dir);
        if (const auto* w = r.child("weights_dir"); w && !w->is_null()) {
            std::filesystem::path p;
            r.read_path("weights_dir", p, base_dir);
            c.weights_dir = p;
        }
        std::string weights = "pretrained";
        r.read_choice("weights", weights, {"pretrained", "random"});
        c.random_init = weights == "random";
        r.read("jobs", c.jobs);

        if (const auto* t = r.child("train")) {
            detail::FieldReader tr(*t, "train", errs);
            tr.read("lr_phase1", c.train.lr_phase1);
            tr.read("lr_phase2", c.train.lr_phase2);
            tr.read("batch_size", c.train.batch_size);
            tr.read("max_epochs_phase1", c.train.max_epochs_phase1);
            tr.read("max_epochs_phase2", c.train.max_epochs_phase2);
            tr.read("early_stop_patience", c.train.early_stop_patience);
            tr.read("reduce_lr_patience", c.train.reduce_lr_patience);
            tr.read("reduce_lr_factor", c.train.reduce_lr_factor);
            tr.read("min_lr", c.train.min_lr);
        }
        if (const auto* a = r.child("augment")) {
            detail::FieldReader ar(*a, "augment", errs);
            ar.read("max_rotation_deg", c.augment.max_rotation_deg);
            ar.read("max_width_shift_frac", c.augment.max_width_shift_frac);
            ar.read("max_height_shift_frac", c.augment.max_height_shift_frac);
            ar.read("max_zoom_frac", c.augment.max_zoom_frac);
            ar.read("hflip_prob", c.augment.hflip_prob);
            std::string fill = "nearest";
            ar.read_choice("fill_mode", fill, {"nearest", "constant"});
            c.augment.fill_mode = fill == "constant" ? FillMode::Constant : FillMode::Nearest;
        }
        if (const auto* p = r.child("preprocess")) {
            detail::FieldReader pr(*p, "preprocess", errs);
            std::string mode = "literal";
            pr.read_choice("crop_mode", mode, {"literal", "square"});
            c.crop_mode = mode == "square" ? CropMode::Square : CropMode::Literal;
        }
        r.read("prompts", c.prompts.prompts);
        detail::read_backend(r, "detector", c.detector, &c.detect, base_dir, errs);
        detail::read_backend(r, "segmenter", c.segmenter, nullptr, base_dir, errs);
    }
    for (auto& e : validation_errors(c)) errs.push_back(std::move(e));
    throw_if_errors(errs);
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
    }
    return run_config_from_json(j, path.parent_path());
}

}  // namespace texsort
