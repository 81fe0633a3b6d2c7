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


// texsort command-line entry point.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "texsort/commands.hpp"

namespace {

namespace cmd = texsort::cmd;

int run(int argc, char** argv) {
    CLI::App app{"texsort: textile material classification and fastener segmentation pipeline"};
    app.require_subcommand(1);
    app.fallthrough();
    app.footer(
        "Environment:\n"
        "  TEXSORT_WEIGHTS_DIR  cache directory for pretrained backbone weights\n"
        "Exit codes: 0 success, 1 validation error, 2 runtime failure");

    cmd::GlobalOptions g;
    std::string config, out;
    std::uint64_t seed = 0;
    auto* config_opt = app.add_option("--config", config, "Run configuration (JSON)")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "Seed for every random choice in the run");
    auto* out_opt = app.add_option("--out", out, "Output directory");
    app.add_flag("--deterministic", g.deterministic, "Single worker, reproducible byte-for-byte");

    cmd::SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate the synthetic texture dataset (and optional fastener scenes)");
    s->add_option("--per-class", synth.per_class, "Train/val images per class")->capture_default_str();
    s->add_option("--size", synth.size, "Texture image side in pixels")->capture_default_str();
    s->add_option("--test-profile", synth.test_profile, "Held-out test split: none | standard (6/6/6/14)")
        ->capture_default_str();
    s->add_option("--scenes", synth.scenes, "Also write this many fastener scenes under <out>/scenes")
        ->capture_default_str();
    s->add_option("--scene-size", synth.scene_size, "Scene side in pixels")->capture_default_str();

    auto* f = app.add_subcommand("folds", "Write the stratified fold plan to <out>/folds.json");

    cmd::TrainArgs train;
    int fold = -1;
    auto* t = app.add_subcommand("train", "Two-phase training for one fold or all folds");
    auto* fold_opt = t->add_option("--fold", fold, "Train a single fold");
    auto* all_opt = t->add_flag("--all-folds", train.all_folds, "Train every fold and pick the best");
    fold_opt->excludes(all_opt);

    cmd::EvaluateArgs eval;
    std::string checkpoint, predictions;
    auto* e = app.add_subcommand("evaluate", "Classification report on the manifest's test samples");
    auto* ckpt_opt = e->add_option("--checkpoint", checkpoint, "Weights file (default: best fold under --out)")
                         ->check(CLI::ExistingFile);
    auto* pred_opt = e->add_option("--predictions", predictions, "Score a CSV of id,true,pred instead of a model")
                         ->check(CLI::ExistingFile);
    pred_opt->excludes(ckpt_opt);

    auto* sg = app.add_subcommand("segment", "Zero-shot fastener detection and segmentation over the manifest");

    std::string run_dir;
    auto* r = app.add_subcommand("report", "Render curves and the confusion figure for a run directory");
    auto* run_opt = r->add_option("run_dir", run_dir, "Run directory (default: --out)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& pe) {
        const int code = app.exit(pe);
        return code == 0 ? cmd::kExitOk : cmd::kExitValidation;
    }

    if (*config_opt) g.config = config;
    if (*seed_opt) g.seed = seed;
    if (*out_opt) g.out = out;
    if (*fold_opt) train.fold = fold;
    if (*ckpt_opt) eval.checkpoint = checkpoint;
    if (*pred_opt) eval.predictions = predictions;

    try {
        if (*s) return cmd::synth(g, synth, std::cout);
        if (*f) return cmd::folds(g, std::cout);
        if (*t) return cmd::train(g, train, std::cout);
        if (*e) return cmd::evaluate(g, eval, std::cout);
        if (*sg) return cmd::segment(g, std::cout, std::cerr);
        if (*r) return cmd::report(g, *run_opt ? std::optional<std::filesystem::path>(run_dir) : std::nullopt, std::cout);
    } catch (const std::exception& ex) {
        fmt::print(std::cerr, "error: {}\n", ex.what());
        return cmd::exit_code_for(ex);
    }
    return cmd::kExitValidation;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
