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
#include <future>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>

#include "texsort/classifier.hpp"
#include "texsort/config.hpp"
#include "texsort/dataset.hpp"
#include "texsort/error.hpp"
#include "texsort/io.hpp"
#include "texsort/metrics.hpp"
#include "texsort/render.hpp"
#include "texsort/synthgen.hpp"
#include "texsort/zeroshot.hpp"

// Command implementations behind the texsort CLI. Each returns a process exit
// code for partial failures and throws ValidationError (exit 1) or
// RuntimeFailure (exit 2) for whole-command failures.
namespace texsort::cmd {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

inline int exit_code_for(const std::exception& e) {
    return dynamic_cast<const ValidationError*>(&e) ? kExitValidation : kExitRuntime;
}

struct GlobalOptions {
    std::optional<fs::path> config;
    std::optional<std::uint64_t> seed;
    std::optional<fs::path> out;
    bool deterministic = false;
};

/// Config file (or defaults) with command-line overrides applied.
inline RunConfig resolve_config(const GlobalOptions& g) {
    RunConfig c = g.config ? load_run_config(*g.config) : RunConfig{};
    if (g.seed) c.seed = *g.seed;
    if (g.out) c.out = *g.out;
    if (g.deterministic) c.jobs = 1;
    return c;
}

inline Manifest require_manifest(const RunConfig& c) {
    if (c.manifest.empty()) throw ValidationError("no manifest: set \"manifest\" in the config file");
    return load_manifest(c.manifest);
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    int per_class = 20;
    int size = 128;
    std::string test_profile = "none";  // none | standard
    int scenes = 0;
    int scene_size = 320;
};

inline int synth(const GlobalOptions& g, const SynthArgs& a, std::ostream& log) {
    if (a.test_profile != "none" && a.test_profile != "standard")
        throw ValidationError("--test-profile must be 'none' or 'standard'");
    if (a.scenes < 0) throw ValidationError("--scenes must be non-negative");
    synth::SynthSpec spec;
    spec.n_per_class = a.per_class;
    spec.height = spec.width = a.size;
    spec.seed = g.seed.value_or(1);
    if (a.test_profile == "standard") spec.test_counts = kStandardTestProfile;
    synth::validate(spec);
    const fs::path out = g.out.value_or("data");

    const auto m = synth::gen_texture_dataset(spec, out);
    fmt::print(log, "wrote {} images and {}\n", m.samples.size(), (out / "manifest.json").string());
    if (a.scenes > 0) {
        synth::SceneSetSpec ss;
        ss.count = a.scenes;
        ss.height = ss.width = a.scene_size;
        ss.seed = spec.seed;
        const auto sm = synth::gen_scene_dataset(ss, out / "scenes");
        fmt::print(log, "wrote {} scenes and {}\n", sm.samples.size(), (out / "scenes" / "manifest.json").string());
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// folds

inline int folds(const GlobalOptions& g, std::ostream& log) {
    const auto cfg = resolve_config(g);
    const auto m = require_manifest(cfg);
    const auto plan = make_folds(m, cfg.folds, cfg.seed);
    io::write_atomic(cfg.out / "folds.json", to_json(plan).dump(2) + "\n");
    for (int f = 0; f < plan.k; ++f) {
        std::array<int, kNumClasses> per{};
        const auto members = plan.fold_members(f);
        for (const auto& id : members) ++per[static_cast<std::size_t>(class_index(*m.find(id)->material))];
        fmt::print(log, "fold {}: {} samples ({})\n", f, members.size(), fmt::join(per, "/"));
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::optional<int> fold;
    bool all_folds = false;
};

inline int train(const GlobalOptions& g, const TrainArgs& a, std::ostream& log) {
    if (a.fold.has_value() == a.all_folds) throw ValidationError("pass exactly one of --fold N or --all-folds");
    const auto cfg = resolve_config(g);
    const auto m = require_manifest(cfg);
    const auto& backbone = backbone_spec(cfg.backbone);
    const auto plan = make_folds(m, cfg.folds, cfg.seed);
    if (a.fold && (*a.fold < 0 || *a.fold >= plan.k))
        throw ValidationError(fmt::format("--fold {} is out of range for k={}", *a.fold, plan.k));

    CvOptions opt;
    opt.augment = cfg.augment;
    opt.crop_mode = cfg.crop_mode;
    opt.seed = cfg.seed;
    opt.weights = cfg.weight_source();
    opt.jobs = cfg.jobs;
    opt.out_dir = cfg.out;
    if (a.fold) opt.only_folds = {*a.fold};

    // A single-fold run merges into an existing summary from the same setup.
    nlohmann::json previous;
    const auto summary_path = cfg.out / "summary.json";
    if (a.fold && fs::exists(summary_path)) {
        try {
            previous = nlohmann::json::parse(io::read_file(summary_path));
        } catch (const nlohmann::json::exception&) {
            previous = nullptr;
        }
    }

    io::write_atomic(cfg.out / "folds.json", to_json(plan).dump(2) + "\n");
    const auto result = cross_validate(m, plan, backbone, cfg.train, opt);
    for (const auto& r : result.folds) {
        const auto& c = r.outcome.checkpoint;
        fmt::print(log, "fold {}: best val_accuracy {:.4f} (phase {}, epoch {}), {} epochs\n", r.fold, c.val_accuracy,
                   c.phase, c.epoch, r.outcome.history.size());
    }

    if (a.fold && previous.is_object() && previous.value("backbone", "") == backbone.name &&
        previous.value("k", 0) == plan.k && previous.value("seed", std::uint64_t{0}) == cfg.seed) {
        auto merged = nlohmann::json::parse(io::read_file(summary_path));
        std::map<int, nlohmann::json> by_fold;
        for (const auto& f : previous["folds"]) by_fold[f.at("fold").get<int>()] = f;
        for (const auto& f : merged["folds"]) by_fold[f.at("fold").get<int>()] = f;
        merged["folds"] = nlohmann::json::array();
        std::vector<double> accs;
        std::vector<int> ids;
        for (const auto& [f, j] : by_fold) {
            merged["folds"].push_back(j);
            accs.push_back(j.at("val_accuracy").get<double>());
            ids.push_back(f);
        }
        merged["best_fold"] = ids[static_cast<std::size_t>(select_best_fold(accs))];
        io::write_atomic(summary_path, merged.dump(2) + "\n");
        fmt::print(log, "best fold so far: {}\n", merged["best_fold"].get<int>());
    } else {
        fmt::print(log, "best fold: {}\n", result.best_fold);
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    std::optional<fs::path> checkpoint;   // default: best fold of the run in --out
    std::optional<fs::path> predictions;  // CSV id,true,pred; skips the model entirely
};

struct LabelPairs {
    std::vector<std::string> ids, truth, pred;
};

inline LabelPairs read_predictions_csv(const fs::path& path) {
    std::istringstream in(io::read_file(path));
    std::string line;
    if (!std::getline(in, line) || line != "id,true,pred")
        throw ValidationError(path.string() + ": expected header 'id,true,pred'");
    LabelPairs p;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != 3) throw ValidationError(fmt::format("{}:{}: expected 3 columns", path.string(), row));
        p.ids.push_back(cells[0]);
        p.truth.push_back(cells[1]);
        p.pred.push_back(cells[2]);
    }
    return p;
}

inline fs::path best_checkpoint(const fs::path& run_dir) {
    const auto summary_path = run_dir / "summary.json";
    if (!fs::exists(summary_path))
        throw ValidationError("no --checkpoint given and no " + summary_path.string() + " to pick the best fold from");
    const auto s = nlohmann::json::parse(io::read_file(summary_path));
    return run_dir / fmt::format("fold_{}", s.at("best_fold").get<int>()) / "checkpoint.tsw";
}

/// Writes the report CSVs and confusion figure into `dir`.
inline ClassReport write_class_report(const fs::path& dir, const ConfusionMatrix& cm,
                                      const std::vector<std::string>& classes) {
    auto report = classification_report(cm, classes);
    io::write_atomic(dir / "confusion.csv", confusion_to_csv(cm, classes));
    io::write_atomic(dir / "class_report.csv", class_report_to_csv(report));
    save_png(dir / "confusion.png", render::confusion_figure(cm, classes));
    return report;
}

inline int evaluate(const GlobalOptions& g, const EvaluateArgs& a, std::ostream& log) {
    const auto cfg = resolve_config(g);
    const fs::path dir = cfg.out / "eval";
    LabelPairs pairs;
    std::vector<std::string> classes(kClassOrder.begin(), kClassOrder.end());

    if (a.predictions) {
        pairs = read_predictions_csv(*a.predictions);
    } else {
        const auto m = require_manifest(cfg);
        const auto ckpt_path = a.checkpoint ? *a.checkpoint : best_checkpoint(cfg.out);
        const auto net = nn::load_weights(ckpt_path);
        if (net.classes != m.classes)
            throw ValidationError(fmt::format("class order mismatch: checkpoint [{}] vs manifest [{}]",
                                              fmt::join(net.classes, ", "), fmt::join(m.classes, ", ")));
        const auto& backbone = backbone_spec(net.backbone);
        std::vector<std::string> test_ids;
        for (const auto& s : m.samples)
            if (s.role == Role::Test) test_ids.push_back(s.id);
        if (test_ids.empty()) throw ValidationError("manifest has no test samples");
        const auto set = load_labeled(m, test_ids, preprocess_spec_for(backbone, cfg.crop_mode));
        std::vector<ImageF> inputs;
        for (const auto& img : set.images) inputs.push_back(to_model_input(img));
        const auto preds = predict(net, inputs);
        std::string csv = "id,true,pred";
        for (std::size_t k = 0; k < classes.size(); ++k) csv += ",p_" + classes[k];
        csv += "\n";
        for (std::size_t i = 0; i < preds.size(); ++i) {
            pairs.ids.push_back(set.ids[i]);
            pairs.truth.push_back(classes[static_cast<std::size_t>(set.labels[i])]);
            pairs.pred.push_back(classes[static_cast<std::size_t>(preds[i].label)]);
            csv += fmt::format("{},{},{}", set.ids[i], pairs.truth.back(), pairs.pred.back());
            for (float p : preds[i].probs) csv += fmt::format(",{:.9g}", p);
            csv += "\n";
        }
        io::write_atomic(dir / "predictions.csv", csv);
        classes = m.classes;
    }

    const auto cm = confusion(pairs.truth, pairs.pred, classes);
    const auto report = write_class_report(dir, cm, classes);
    fmt::print(log, "accuracy {:.4f}  weighted F1 {:.4f}  (n={})\n", report.accuracy, report.weighted_f1, cm.total());
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const auto& c = report.per_class[i];
        fmt::print(log, "  {:<18} P {:.4f}  R {:.4f}  F1 {:.4f}  support {}\n", classes[i], c.precision, c.recall, c.f1,
                   c.support);
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// segment

struct SegmentSummary {
    Prf mask;
    Prf box;
    double mean_mask_iou = 0;
    double mean_box_iou = 0;
    double per_image_mean_mask_iou = 0;
};

inline std::string segmentation_summary_csv(const SegmentSummary& s) {
    return fmt::format(
        "precision,recall,f1,mean_box_iou,mean_mask_iou\n{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", s.mask.precision,
        s.mask.recall, s.mask.f1, s.mean_box_iou, s.mean_mask_iou);
}

inline SegmentSummary segmentation_summary_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "precision,recall,f1,mean_box_iou,mean_mask_iou")
        throw ValidationError("segmentation summary CSV: bad header");
    if (!std::getline(in, line)) throw ValidationError("segmentation summary CSV: missing row");
    const auto c = detail::split_csv_line(line);
    if (c.size() != 5) throw ValidationError("segmentation summary CSV: bad row");
    SegmentSummary s;
    s.mask = {std::stod(c[0]), std::stod(c[1]), std::stod(c[2])};
    s.mean_box_iou = std::stod(c[3]);
    s.mean_mask_iou = std::stod(c[4]);
    return s;
}

struct SegmentOutcome {
    int failed = 0;
    std::optional<SegmentSummary> summary;  // absent when the manifest has no ground truth
};

/// Runs the pipeline on every manifest image. Failures are logged and counted;
/// the remaining images still run.
inline SegmentOutcome run_segment(const Manifest& m, const RunConfig& cfg, zeroshot::DetectorBackend& detector,
                                  zeroshot::SegmenterBackend& segmenter, const fs::path& dir, std::ostream& log) {
    struct PerImage {
        std::vector<zeroshot::InstanceMask> instances;
        std::string error;
    };
    auto process = [&](const Sample& s) {
        PerImage r;
        try {
            const auto img = load_rgb(s.image_path);
            r.instances = zeroshot::run_pipeline(zeroshot::SceneImage::of(s.id, img), cfg.prompts, cfg.detect,
                                                 detector, segmenter);
            io::write_atomic(dir / "instances" / (s.id + ".json"),
                             zeroshot::to_json(s.id, r.instances).dump(2) + "\n");
            save_png(dir / "overlays" / (s.id + ".png"), render::overlay(img, r.instances));
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        return r;
    };

    const bool parallel = cfg.jobs > 1 && detector.reentrant() && segmenter.reentrant();
    std::vector<PerImage> results(m.samples.size());
    const std::size_t step = parallel ? static_cast<std::size_t>(cfg.jobs) : 1;
    for (std::size_t start = 0; start < m.samples.size(); start += step) {
        std::vector<std::future<PerImage>> pending;
        for (std::size_t i = start; i < std::min(m.samples.size(), start + step); ++i)
            pending.push_back(std::async(parallel ? std::launch::async : std::launch::deferred, process,
                                         std::cref(m.samples[i])));
        for (std::size_t i = 0; i < pending.size(); ++i) results[start + i] = pending[i].get();
    }

    SegmentOutcome out;
    bool any_gt = false;
    SegmentationTally tally;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& s = m.samples[i];
        if (!results[i].error.empty()) {
            ++out.failed;
            fmt::print(log, "error: {}: {}\n", s.id, results[i].error);
            continue;
        }
        any_gt = any_gt || !s.gt_instances.empty();
        const auto preds = zeroshot::regions(results[i].instances);
        const auto gts = zeroshot::regions(s.gt_instances);
        tally.add_image(preds, gts);
    }
    if (any_gt) {
        SegmentSummary s;
        s.mask = tally.mask_prf();
        s.box = tally.box_prf();
        s.mean_mask_iou = tally.mean_mask_iou();
        s.mean_box_iou = tally.mean_box_iou();
        s.per_image_mean_mask_iou = tally.per_image_mean_mask_iou();
        io::write_atomic(dir / "summary.csv", segmentation_summary_csv(s));
        const nlohmann::json j{{"precision", s.mask.precision},
                               {"recall", s.mask.recall},
                               {"f1", s.mask.f1},
                               {"mean_box_iou", s.mean_box_iou},
                               {"mean_mask_iou", s.mean_mask_iou},
                               {"per_image_mean_mask_iou", s.per_image_mean_mask_iou},
                               {"images", m.samples.size()},
                               {"failed", out.failed},
                               {"gt_instances", tally.gt_count()}};
        io::write_atomic(dir / "summary.json", j.dump(2) + "\n");
        out.summary = s;
    }
    return out;
}

inline int segment(const GlobalOptions& g, std::ostream& log, std::ostream& err) {
    const auto cfg = resolve_config(g);
    const auto m = require_manifest(cfg);
    auto detector = zeroshot::make_detector(cfg.detector, m);
    auto segmenter = zeroshot::make_segmenter(cfg.segmenter, m);
    const auto out = run_segment(m, cfg, *detector, *segmenter, cfg.out / "segment", err);
    if (out.summary) {
        const auto& s = *out.summary;
        fmt::print(log, "precision {:.4f}  recall {:.4f}  F1 {:.4f}  mean box IoU {:.4f}  mean mask IoU {:.4f}\n",
                   s.mask.precision, s.mask.recall, s.mask.f1, s.mean_box_iou, s.mean_mask_iou);
    } else {
        fmt::print(log, "no ground truth in manifest; summary omitted\n");
    }
    if (out.failed > 0) {
        fmt::print(err, "{} of {} images failed\n", out.failed, m.samples.size());
        return kExitRuntime;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// report

/// Re-renders per-fold curves (and the confusion figure, if evaluated) from
/// the CSV artifacts of a run directory into `<run>/report`.
inline int report(const GlobalOptions& g, const std::optional<fs::path>& run_arg, std::ostream& log) {
    const fs::path run = run_arg.value_or(g.out.value_or("run"));
    const auto summary_path = run / "summary.json";
    std::vector<std::string> missing;
    std::vector<int> folds;
    if (!fs::exists(summary_path)) {
        missing.push_back(summary_path.string());
        missing.push_back((run / "fold_<i>" / "history.csv").string());
    } else {
        const auto s = nlohmann::json::parse(io::read_file(summary_path));
        for (const auto& f : s.at("folds")) folds.push_back(f.at("fold").get<int>());
        for (int f : folds) {
            const auto h = run / fmt::format("fold_{}", f) / "history.csv";
            if (!fs::exists(h)) missing.push_back(h.string());
        }
    }
    if (!missing.empty()) {
        std::string msg = "missing run artifacts:";
        for (const auto& p : missing) msg += "\n  - " + p;
        throw ValidationError(msg);
    }

    const fs::path dir = run / "report";
    int figures = 0;
    for (int f : folds) {
        const auto h = history_from_csv(io::read_file(run / fmt::format("fold_{}", f) / "history.csv"));
        for (auto metric : {render::CurveMetric::Accuracy, render::CurveMetric::Loss}) {
            const auto title = fmt::format("fold {}: training and validation {}", f, render::metric_name(metric));
            save_png(dir / fmt::format("fold_{}_{}.png", f, render::metric_name(metric)),
                     render::curve_figure(h, metric, title));
            ++figures;
        }
    }
    const auto cm_csv = run / "eval" / "confusion.csv";
    if (fs::exists(cm_csv)) {
        const auto [cm, classes] = confusion_from_csv(io::read_file(cm_csv));
        save_png(dir / "confusion.png", render::confusion_figure(cm, classes));
        ++figures;
    }
    fmt::print(log, "wrote {} figures to {}\n", figures, dir.string());
    return kExitOk;
}

}  // namespace texsort::cmd
