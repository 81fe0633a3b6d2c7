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
#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "texsort/error.hpp"
#include "texsort/io.hpp"
#include "texsort/mask.hpp"

namespace texsort {

enum class Material { Cotton = 0, Polyester = 1, CottonPolyester = 2, ViscosePolyester = 3 };

inline constexpr int kNumClasses = 4;

/// Fixed axis order for every confusion matrix and probability vector.
inline const std::array<std::string, kNumClasses> kClassOrder = {"Cotton", "Polyester", "CottonPolyester",
                                                                 "ViscosePolyester"};

/// Held-out test profile: 6/6/6/14, 32 images.
inline constexpr std::array<int, kNumClasses> kStandardTestProfile = {6, 6, 6, 14};

inline const std::string& class_name(Material m) { return kClassOrder[static_cast<int>(m)]; }
inline int class_index(Material m) { return static_cast<int>(m); }

inline std::optional<Material> parse_material(const std::string& name) {
    for (int i = 0; i < kNumClasses; ++i)
        if (kClassOrder[i] == name) return static_cast<Material>(i);
    return std::nullopt;
}

enum class Role { TrainVal, Test };

inline const char* role_name(Role r) { return r == Role::TrainVal ? "trainval" : "test"; }

struct GroundTruthInstance {
    std::string label;  // "button" or "zipper"
    Mask mask;
    Box box;
};

struct Sample {
    std::string id;
    std::filesystem::path image_path;  // absolute, or relative to the manifest directory
    std::optional<Material> material;
    std::vector<GroundTruthInstance> gt_instances;
    Role role = Role::TrainVal;
};

struct Manifest {
    std::vector<Sample> samples;
    std::vector<std::string> classes{kClassOrder.begin(), kClassOrder.end()};

    const Sample* find(const std::string& id) const {
        for (const auto& s : samples)
            if (s.id == id) return &s;
        return nullptr;
    }
};

inline const std::set<std::string>& instance_labels() {
    static const std::set<std::string> labels{"button", "zipper"};
    return labels;
}

// ---------------------------------------------------------------------------
// Validation and (de)serialization

/// Checks every manifest invariant; throws ValidationError naming the offending sample or class.
inline void validate(const Manifest& m) {
    if (m.classes.size() != kClassOrder.size()) {
        for (const auto& c : m.classes)
            if (!parse_material(c)) throw ValidationError("unknown class name '" + c + "' in class list");
        throw ValidationError("class list must have exactly 4 entries, got " + std::to_string(m.classes.size()));
    }
    for (std::size_t i = 0; i < m.classes.size(); ++i) {
        if (!parse_material(m.classes[i])) throw ValidationError("unknown class name '" + m.classes[i] + "' in class list");
        if (m.classes[i] != kClassOrder[i])
            throw ValidationError("class list out of order at position " + std::to_string(i) + ": expected '" +
                                  kClassOrder[i] + "', got '" + m.classes[i] + "'");
    }

    std::set<std::string> seen;
    std::array<int, kNumClasses> trainval_counts{};
    for (const auto& s : m.samples) {
        if (s.id.empty()) throw ValidationError("sample with empty id");
        if (!seen.insert(s.id).second) throw ValidationError("duplicate sample id '" + s.id + "'");
        if (s.role == Role::TrainVal) {
            if (!s.material) throw ValidationError("sample '" + s.id + "': trainval sample has no material");
            ++trainval_counts[class_index(*s.material)];
        }
        for (std::size_t k = 0; k < s.gt_instances.size(); ++k) {
            const auto& inst = s.gt_instances[k];
            const std::string where = "sample '" + s.id + "' instance " + std::to_string(k);
            if (!instance_labels().count(inst.label))
                throw ValidationError(where + ": unknown instance label '" + inst.label + "'");
            const auto tight = tight_box(inst.mask);
            if (!tight) throw ValidationError(where + ": empty mask");
            if (!(*tight == inst.box))
                throw ValidationError(where + ": box [" + std::to_string(inst.box.x1) + "," + std::to_string(inst.box.y1) +
                                      "," + std::to_string(inst.box.x2) + "," + std::to_string(inst.box.y2) +
                                      "] is not the tight box of its mask [" + std::to_string(tight->x1) + "," +
                                      std::to_string(tight->y1) + "," + std::to_string(tight->x2) + "," +
                                      std::to_string(tight->y2) + "]");
        }
    }
    const int first = trainval_counts[0];
    for (int c = 1; c < kNumClasses; ++c) {
        if (trainval_counts[c] != first)
            throw ValidationError("trainval partition is not class-balanced: " + kClassOrder[0] + "=" +
                                  std::to_string(first) + ", " + kClassOrder[c] + "=" +
                                  std::to_string(trainval_counts[c]));
    }
}

inline nlohmann::json to_json(const Manifest& m) {
    nlohmann::json j;
    j["classes"] = m.classes;
    auto& samples = j["samples"] = nlohmann::json::array();
    for (const auto& s : m.samples) {
        nlohmann::json js{{"id", s.id}, {"image", s.image_path.generic_string()}, {"role", role_name(s.role)}};
        if (s.material) js["material"] = class_name(*s.material);
        if (!s.gt_instances.empty()) {
            auto& insts = js["instances"] = nlohmann::json::array();
            for (const auto& inst : s.gt_instances)
                insts.push_back({{"label", inst.label},
                                 {"mask", encode_rle(inst.mask)},
                                 {"box", {inst.box.x1, inst.box.y1, inst.box.x2, inst.box.y2}}});
        }
        samples.push_back(std::move(js));
    }
    return j;
}

/// Parses manifest JSON. Relative image paths are resolved against `base_dir`.
inline Manifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    auto require = [](const nlohmann::json& obj, const char* key, const std::string& where) -> const nlohmann::json& {
        if (!obj.is_object() || !obj.contains(key)) throw ValidationError(where + ": missing '" + key + "'");
        return obj.at(key);
    };
    Manifest m;
    try {
        m.classes = require(j, "classes", "manifest").get<std::vector<std::string>>();
        for (const auto& js : require(j, "samples", "manifest")) {
            Sample s;
            s.id = require(js, "id", "sample").get<std::string>();
            const std::string where = "sample '" + s.id + "'";
            std::filesystem::path img = require(js, "image", where).get<std::string>();
            s.image_path = img.is_relative() && !base_dir.empty() ? base_dir / img : img;
            const auto role = require(js, "role", where).get<std::string>();
            if (role == "trainval") s.role = Role::TrainVal;
            else if (role == "test") s.role = Role::Test;
            else throw ValidationError(where + ": unknown role '" + role + "'");
            if (js.contains("material") && !js.at("material").is_null()) {
                const auto name = js.at("material").get<std::string>();
                s.material = parse_material(name);
                if (!s.material) throw ValidationError(where + ": unknown class name '" + name + "'");
            }
            if (js.contains("instances")) {
                for (const auto& ji : js.at("instances")) {
                    GroundTruthInstance inst;
                    inst.label = require(ji, "label", where).get<std::string>();
                    try {
                        inst.mask = decode_rle(require(ji, "mask", where).get<std::string>());
                    } catch (const ValidationError& e) {
                        throw ValidationError(where + ": " + e.what());
                    }
                    const auto box = require(ji, "box", where).get<std::vector<int>>();
                    if (box.size() != 4) throw ValidationError(where + ": box must have 4 integers");
                    inst.box = Box{box[0], box[1], box[2], box[3]};
                    s.gt_instances.push_back(std::move(inst));
                }
            }
            m.samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed manifest: ") + e.what());
    }
    validate(m);
    return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ValidationError("manifest not found: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    return manifest_from_json(j, path.parent_path());
}

/// Writes the manifest with image paths made relative to the manifest's directory when possible.
inline void save_manifest(const std::filesystem::path& path, Manifest m) {
    const auto dir = path.parent_path();
    for (auto& s : m.samples) {
        if (!dir.empty() && s.image_path.is_absolute() == dir.is_absolute()) {
            auto rel = s.image_path.lexically_relative(dir);
            if (!rel.empty() && *rel.begin() != "..") s.image_path = rel;
        }
    }
    io::write_atomic(path, to_json(m).dump(1) + "\n");
}

// ---------------------------------------------------------------------------
// Cross-validation folds

struct FoldPlan {
    int k = 0;
    std::uint64_t seed = 0;
    std::map<std::string, int> assignment;  // sample id -> fold index

    std::vector<std::string> fold_members(int fold) const {
        std::vector<std::string> ids;
        for (const auto& [id, f] : assignment)
            if (f == fold) ids.push_back(id);
        return ids;
    }
};

/// Stratified k-fold partition of the trainval samples.
///
/// Each class's ids are sorted, shuffled with a generator seeded from `seed`,
/// then dealt round-robin to folds. The deal for each class starts where the
/// previous class stopped, so per-class and per-fold totals both differ by at
/// most one across folds.
inline FoldPlan make_folds(const Manifest& manifest, int k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("fold count k must be >= 2, got " + std::to_string(k));
    std::array<std::vector<std::string>, kNumClasses> by_class;
    for (const auto& s : manifest.samples)
        if (s.role == Role::TrainVal && s.material) by_class[class_index(*s.material)].push_back(s.id);

    int smallest = -1;
    for (const auto& ids : by_class)
        if (!ids.empty() && (smallest < 0 || static_cast<int>(ids.size()) < smallest)) smallest = static_cast<int>(ids.size());
    if (smallest < 0) throw ValidationError("manifest has no trainval samples to partition");
    if (k > smallest)
        throw ValidationError("k=" + std::to_string(k) + " exceeds the smallest class count " + std::to_string(smallest));

    FoldPlan plan{k, seed, {}};
    std::mt19937_64 rng(seed);
    int next = 0;
    for (auto& ids : by_class) {
        std::sort(ids.begin(), ids.end());
        std::shuffle(ids.begin(), ids.end(), rng);
        for (const auto& id : ids) {
            plan.assignment[id] = next;
            next = (next + 1) % k;
        }
    }
    return plan;
}

struct TrainValSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
};

inline TrainValSplit split_train_val(const FoldPlan& plan, int fold_index) {
    if (fold_index < 0 || fold_index >= plan.k)
        throw ValidationError("fold index " + std::to_string(fold_index) + " out of range [0, " + std::to_string(plan.k) + ")");
    TrainValSplit split;
    for (const auto& [id, f] : plan.assignment) (f == fold_index ? split.val : split.train).push_back(id);
    return split;
}

inline nlohmann::json to_json(const FoldPlan& p) {
    return {{"k", p.k}, {"seed", p.seed}, {"assignment", p.assignment}};
}

inline FoldPlan fold_plan_from_json(const nlohmann::json& j) {
    try {
        FoldPlan p;
        p.k = j.at("k").get<int>();
        p.seed = j.at("seed").get<std::uint64_t>();
        p.assignment = j.at("assignment").get<std::map<std::string, int>>();
        for (const auto& [id, f] : p.assignment)
            if (f < 0 || f >= p.k) throw ValidationError("fold plan: sample '" + id + "' has fold " + std::to_string(f));
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed fold plan: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Test-set composition

struct CompositionReport {
    std::array<int, kNumClasses> counts{};
    std::array<int, kNumClasses> expected = kStandardTestProfile;
    std::array<int, kNumClasses> deltas{};  // counts - expected
    int total = 0;
    bool matches_profile = false;
};

inline CompositionReport validate_test_composition(const Manifest& manifest) {
    CompositionReport r;
    for (const auto& s : manifest.samples) {
        if (s.role != Role::Test || !s.material) continue;
        ++r.counts[class_index(*s.material)];
        ++r.total;
    }
    r.matches_profile = true;
    for (int c = 0; c < kNumClasses; ++c) {
        r.deltas[c] = r.counts[c] - r.expected[c];
        if (r.deltas[c] != 0) r.matches_profile = false;
    }
    return r;
}

}  // namespace texsort
