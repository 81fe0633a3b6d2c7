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


#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include <fmt/format.h>
#include <gtest/gtest.h>

#include "support.hpp"
#include "texsort/commands.hpp"

namespace texsort {
namespace {

namespace fs = std::filesystem;

struct RunResult {
    int code = -1;
    std::string output;  // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args, const fs::path& scratch) {
    const auto log = scratch / "cli_output.txt";
    const auto cmd = fmt::format("TEXSORT_WEIGHTS_DIR='{}' '{}' {} > '{}' 2>&1", testing::shared_weights_dir().string(),
                                 TEXSORT_CLI_PATH, args, log.string());
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = io::read_file(log);
    return r;
}

void write_json(const fs::path& p, const nlohmann::json& j) { io::write_atomic(p, j.dump(2)); }

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, UnknownKeysAndBadValuesAreAllReported) {
    const auto j = nlohmann::json::parse(R"({
        "backbone": "ResNet50",
        "folds": 1,
        "learning_rate": 0.1,
        "train": {"batch_size": 0, "epochs": 3},
        "augment": {"hflip_prob": 2},
        "detector": {"kind": "box_fill"}
    })");
    try {
        run_config_from_json(j);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        for (const char* needle : {"learning_rate", "train.epochs", "ResNet50", "folds", "batch_size", "hflip_prob",
                                   "detector.kind"})
            EXPECT_NE(msg.find(needle), std::string::npos) << needle << "\n" << msg;
    }
}

TEST(Config, DefaultsAreValid) {
    const auto c = run_config_from_json(nlohmann::json::object());
    EXPECT_EQ(c.backbone, "Tiny");
    EXPECT_EQ(c.folds, 5);
    EXPECT_TRUE(validation_errors(c).empty());
    EXPECT_EQ(c.detect.box_threshold, 0.35);
}

TEST(Config, ManifestPathIsRelativeToConfigFile) {
    testing::TempDir dir("cfg");
    fs::create_directories(dir / "sub");
    write_json(dir / "sub" / "run.json", {{"manifest", "data/manifest.json"}, {"weights", "random"}});
    const auto c = load_run_config(dir / "sub" / "run.json");
    EXPECT_EQ(c.manifest, dir / "sub" / "data" / "manifest.json");
    EXPECT_TRUE(c.random_init);
}

// ---------------------------------------------------------------------------
// Exit codes

TEST(Cli, UsageErrorsExitOne) {
    testing::TempDir dir("cli_usage");
    EXPECT_EQ(run_cli("", dir.path()).code, 1);
    EXPECT_EQ(run_cli("frobnicate", dir.path()).code, 1);
    EXPECT_EQ(run_cli("train --fold 1 --all-folds", dir.path()).code, 1);
    EXPECT_EQ(run_cli("--help", dir.path()).code, 0);
}

TEST(Cli, InvalidConfigExitsOneWithEveryError) {
    testing::TempDir dir("cli_cfg");
    write_json(dir / "bad.json", {{"folds", 0}, {"colour", "red"}});
    const auto r = run_cli(fmt::format("--config '{}' folds", (dir / "bad.json").string()), dir.path());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("folds"), std::string::npos);
    EXPECT_NE(r.output.find("colour"), std::string::npos);
}

TEST(Cli, MissingRunArtifactsExitOne) {
    testing::TempDir dir("cli_report");
    const auto r = run_cli(fmt::format("report '{}'", dir.path().string()), dir.path());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("summary.json"), std::string::npos);
}

TEST(Cli, UnwritableOutputIsARuntimeFailure) {
    testing::TempDir dir("cli_out");
    io::write_atomic(dir / "blocker", "not a directory");
    const auto r = run_cli(fmt::format("--out '{}' synth --per-class 1 --size 64", (dir / "blocker" / "data").string()),
                           dir.path());
    EXPECT_EQ(r.code, 2) << r.output;
}

// ---------------------------------------------------------------------------
// Commands end to end

TEST(Cli, SynthIsByteIdenticalAcrossRuns) {
    testing::TempDir dir("cli_synth");
    for (const char* sub : {"a", "b"})
        ASSERT_EQ(run_cli(fmt::format("--seed 5 --out '{}' synth --per-class 2 --size 64 --test-profile standard",
                                      (dir / sub).string()),
                          dir.path())
                      .code,
                  0);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), dir / "a");
        if (rel.filename() == "manifest.json") continue;  // holds absolute paths
        EXPECT_EQ(io::read_file(e.path()), io::read_file(dir / "b" / rel)) << rel;
        ++files;
    }
    EXPECT_EQ(files, 8u + 32u);
}

TEST(Cli, FoldsRejectsOutOfRangeFold) {
    testing::TempDir dir("cli_folds");
    ASSERT_EQ(run_cli(fmt::format("--out '{}' synth --per-class 5 --size 64", (dir / "data").string()), dir.path()).code, 0);
    write_json(dir / "run.json", {{"manifest", "data/manifest.json"}, {"folds", 5}});
    const auto cfg = fmt::format("--config '{}' --out '{}'", (dir / "run.json").string(), (dir / "run").string());
    const auto folds = run_cli(cfg + " folds", dir.path());
    ASSERT_EQ(folds.code, 0) << folds.output;
    const auto plan = fold_plan_from_json(nlohmann::json::parse(io::read_file(dir / "run" / "folds.json")));
    EXPECT_EQ(plan.k, 5);
    EXPECT_EQ(plan.assignment.size(), 20u);
    const auto r = run_cli(cfg + " train --fold 7", dir.path());
    EXPECT_EQ(r.code, 1);
    EXPECT_FALSE(fs::exists(dir / "run" / "summary.json"));
}

TEST(Cli, EvaluatePredictionsReproducesKnownScores) {
    testing::TempDir dir("cli_eval");
    const std::vector<std::vector<int>> rows{{6, 0, 0, 0}, {0, 5, 1, 0}, {2, 2, 2, 0}, {0, 0, 1, 13}};
    std::string csv = "id,true,pred\n";
    int n = 0;
    for (int t = 0; t < 4; ++t)
        for (int p = 0; p < 4; ++p)
            for (int k = 0; k < rows[t][p]; ++k) csv += fmt::format("s{},{},{}\n", n++, kClassOrder[t], kClassOrder[p]);
    io::write_atomic(dir / "pred.csv", csv);
    const auto r = run_cli(
        fmt::format("--out '{}' evaluate --predictions '{}'", (dir / "run").string(), (dir / "pred.csv").string()),
        dir.path());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("accuracy 0.8125"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("weighted F1 0.8012"), std::string::npos) << r.output;
    const auto report = class_report_from_csv(io::read_file(dir / "run" / "eval" / "class_report.csv"));
    EXPECT_EQ(report.accuracy, 0.8125);
    EXPECT_TRUE(fs::exists(dir / "run" / "eval" / "confusion.png"));
}

TEST(Cli, TrainEvaluateReportPipeline) {
    testing::TempDir dir("cli_pipeline");
    ASSERT_EQ(run_cli(fmt::format("--out '{}' synth --per-class 5 --size 64 --test-profile standard",
                                  (dir / "data").string()),
                      dir.path())
                  .code,
              0);
    write_json(dir / "run.json", {{"manifest", "data/manifest.json"},
                                  {"folds", 5},
                                  {"train", {{"max_epochs_phase1", 1}, {"max_epochs_phase2", 1}}}});
    const auto cfg = fmt::format("--config '{}' --out '{}' --deterministic", (dir / "run.json").string(),
                                 (dir / "run").string());
    const auto train = run_cli(cfg + " train --fold 2", dir.path());
    ASSERT_EQ(train.code, 0) << train.output;
    const auto summary = nlohmann::json::parse(io::read_file(dir / "run" / "summary.json"));
    EXPECT_EQ(summary.at("best_fold"), 2);
    EXPECT_EQ(history_from_csv(io::read_file(dir / "run" / "fold_2" / "history.csv")).size(), 2u);

    const auto eval = run_cli(cfg + " evaluate", dir.path());
    ASSERT_EQ(eval.code, 0) << eval.output;
    const auto [cm, classes] = confusion_from_csv(io::read_file(dir / "run" / "eval" / "confusion.csv"));
    EXPECT_EQ(cm.total(), 32);
    for (int k = 0; k < kNumClasses; ++k) EXPECT_EQ(cm.row_sum(k), kStandardTestProfile[k]);

    ASSERT_EQ(run_cli(cfg + " report", dir.path()).code, 0);
    const auto first = io::read_file(dir / "run" / "report" / "fold_2_accuracy.png");
    const auto confusion_png = io::read_file(dir / "run" / "report" / "confusion.png");
    ASSERT_EQ(run_cli(cfg + " report", dir.path()).code, 0);
    EXPECT_EQ(io::read_file(dir / "run" / "report" / "fold_2_accuracy.png"), first);
    EXPECT_EQ(io::read_file(dir / "run" / "report" / "confusion.png"), confusion_png);
}

TEST(Cli, SegmentWritesInstancesAndSummary) {
    testing::TempDir dir("cli_segment");
    ASSERT_EQ(run_cli(fmt::format("--out '{}' synth --per-class 1 --size 64 --scenes 3 --scene-size 256",
                                  (dir / "data").string()),
                      dir.path())
                  .code,
              0);
    write_json(dir / "run.json", {{"manifest", "data/scenes/manifest.json"}});
    const auto r = run_cli(fmt::format("--config '{}' --out '{}' segment", (dir / "run.json").string(),
                                       (dir / "run").string()),
                           dir.path());
    ASSERT_EQ(r.code, 0) << r.output;
    const auto s = cmd::segmentation_summary_from_csv(io::read_file(dir / "run" / "segment" / "summary.csv"));
    EXPECT_EQ(s.mask.f1, 1.0);
    EXPECT_EQ(s.mean_mask_iou, 1.0);
    for (int i = 0; i < 3; ++i) {
        EXPECT_TRUE(fs::exists(dir / "run" / "segment" / "instances" / fmt::format("scene_{:03d}.json", i)));
        EXPECT_TRUE(fs::exists(dir / "run" / "segment" / "overlays" / fmt::format("scene_{:03d}.png", i)));
    }
}

TEST(Cli, SegmentWithoutGroundTruthOmitsSummary) {
    testing::TempDir dir("cli_segment_nogt");
    ASSERT_EQ(run_cli(fmt::format("--out '{}' synth --per-class 1 --size 64 --scenes 2 --scene-size 256",
                                  (dir / "data").string()),
                      dir.path())
                  .code,
              0);
    // Precomputed detections for the scenes, with the ground truth stripped from the manifest.
    auto m = load_manifest(dir / "data" / "scenes" / "manifest.json");
    nlohmann::json pre = nlohmann::json::object();
    for (auto& s : m.samples) {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& g : s.gt_instances)
            list.push_back({{"label", g.label},
                            {"confidence", 0.8},
                            {"box", {g.box.x1, g.box.y1, g.box.x2, g.box.y2}},
                            {"mask_rle", encode_rle(g.mask)}});
        pre[s.id] = list;
        s.gt_instances.clear();
    }
    save_manifest(dir / "nogt.json", m);
    write_json(dir / "pre.json", pre);
    write_json(dir / "run.json", {{"manifest", "nogt.json"},
                                  {"detector", {{"kind", "precomputed"}, {"path", "pre.json"}}},
                                  {"segmenter", {{"kind", "precomputed"}, {"path", "pre.json"}}}});
    const auto r = run_cli(fmt::format("--config '{}' --out '{}' segment", (dir / "run.json").string(),
                                       (dir / "run").string()),
                           dir.path());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("summary omitted"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "run" / "segment" / "summary.csv"));
    const auto inst = nlohmann::json::parse(io::read_file(dir / "run" / "segment" / "instances" / "scene_000.json"));
    EXPECT_EQ(inst.at("instances").size(), pre["scene_000"].size());
}

TEST(Cli, SegmentBackendFailureExitsTwoButFinishesOtherImages) {
    testing::TempDir dir("cli_segment_fail");
    ASSERT_EQ(run_cli(fmt::format("--out '{}' synth --per-class 1 --size 64 --scenes 2 --scene-size 256",
                                  (dir / "data").string()),
                      dir.path())
                  .code,
              0);
    // Dilation past the bleed band makes every replayed mask invalid.
    write_json(dir / "run.json", {{"manifest", "data/scenes/manifest.json"},
                                  {"segmenter", {{"kind", "gt_replay"}, {"dilation", 12}}}});
    const auto r = run_cli(fmt::format("--config '{}' --out '{}' segment", (dir / "run.json").string(),
                                       (dir / "run").string()),
                           dir.path());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("scene_000"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("scene_001"), std::string::npos) << r.output;
}

}  // namespace
}  // namespace texsort
