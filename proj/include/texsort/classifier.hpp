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
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <future>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "texsort/callbacks.hpp"
#include "texsort/dataset.hpp"
#include "texsort/error.hpp"
#include "texsort/io.hpp"
#include "texsort/nn.hpp"
#include "texsort/preprocess.hpp"
#include "texsort/synthgen.hpp"

namespace texsort {

// ---------------------------------------------------------------------------
// Backbones

struct BackboneSpec {
    std::string name;
    int input_h = 224;
    int input_w = 224;
    int unfreeze_top_layers = 0;  // trailing top-level base layers trainable in phase 2
    int feature_width = 0;        // channels entering the pooling head
    std::string pretrained_source = "imagenet";
};

/// Supported backbones. "Tiny" is a small conv stack used for desk-scale runs;
/// its pretrained weights come from a synthetic grating pretext task.
inline const std::vector<BackboneSpec>& backbone_registry() {
    static const std::vector<BackboneSpec> r = {
        {"VGG16", 224, 224, 4, 512, "imagenet"},
        {"VGG19", 224, 224, 6, 512, "imagenet"},
        {"EfficientNetB0", 224, 224, 30, 1280, "imagenet"},
        {"EfficientNetV2S", 384, 384, 30, 1280, "imagenet"},
        {"EfficientNetV2M", 480, 480, 30, 1280, "imagenet"},
        {"Tiny", 64, 64, 2, 32, "synthetic-pretext"},
    };
    return r;
}

inline std::string supported_backbones() {
    std::string s;
    for (const auto& b : backbone_registry()) s += (s.empty() ? "" : ", ") + b.name;
    return s;
}

inline const BackboneSpec& backbone_spec(const std::string& name) {
    for (const auto& b : backbone_registry())
        if (b.name == name) return b;
    throw ValidationError("unknown backbone '" + name + "'; supported: " + supported_backbones());
}

inline PreprocessSpec preprocess_spec_for(const BackboneSpec& b, CropMode mode = CropMode::Literal) {
    return {b.input_h, b.input_w, mode};
}

/// Top-level base layers in provider order. EfficientNet blocks are not
/// expressible with the native layer set.
inline std::vector<nn::Layer> base_architecture(const BackboneSpec& b) {
    std::vector<nn::Layer> layers;
    auto vgg = [&](const std::vector<int>& convs_per_block) {
        const int widths[] = {64, 128, 256, 512, 512};
        int in = 3;
        for (std::size_t blk = 0; blk < convs_per_block.size(); ++blk) {
            for (int c = 0; c < convs_per_block[blk]; ++c) {
                layers.emplace_back(nn::make_conv(fmt::format("block{}_conv{}", blk + 1, c + 1), in, widths[blk]));
                in = widths[blk];
            }
            layers.emplace_back(nn::MaxPool2D{fmt::format("block{}_pool", blk + 1)});
        }
    };
    if (b.name == "VGG16") {
        vgg({2, 2, 3, 3, 3});
    } else if (b.name == "VGG19") {
        vgg({2, 2, 4, 4, 4});
    } else if (b.name == "Tiny") {
        layers.emplace_back(nn::make_conv("conv1", 3, 8));
        layers.emplace_back(nn::MaxPool2D{"pool1"});
        layers.emplace_back(nn::make_conv("conv2", 8, 16));
        layers.emplace_back(nn::MaxPool2D{"pool2"});
        layers.emplace_back(nn::make_conv("conv3", 16, 32));
        layers.emplace_back(nn::make_conv("conv4", 32, 32));
    } else {
        backbone_spec(b.name);
        throw WeightsUnavailable(b.name + " has no native implementation (MBConv/fused-MBConv blocks); "
                                 "pretrained weights cannot be loaded in this build");
    }
    return layers;
}

inline std::size_t first_unfrozen_layer(const nn::Network& net, const BackboneSpec& b) {
    const auto n = net.base.size();
    return n - std::min<std::size_t>(static_cast<std::size_t>(b.unfreeze_top_layers), n);
}

inline std::vector<std::string> unfrozen_layer_names(const nn::Network& net, const BackboneSpec& b) {
    std::vector<std::string> names;
    for (std::size_t i = first_unfrozen_layer(net, b); i < net.base.size(); ++i) names.push_back(nn::layer_name(net.base[i]));
    return names;
}

// ---------------------------------------------------------------------------
// Parameter audit

struct ParamGroup {
    std::string name;
    std::string tag;  // "base" or "head"
    std::size_t params = 0;
    bool trainable_phase2 = false;
    std::uint64_t checksum = 0;
};

struct ParameterAudit {
    std::vector<ParamGroup> groups;

    std::size_t count(const std::string& tag) const {
        std::size_t n = 0;
        for (const auto& g : groups)
            if (g.tag == tag) n += g.params;
        return n;
    }
    const ParamGroup* find(const std::string& name) const {
        for (const auto& g : groups)
            if (g.name == name) return &g;
        return nullptr;
    }
};

inline ParameterAudit audit(const nn::Network& net, const BackboneSpec& b) {
    ParameterAudit a;
    const auto first = first_unfrozen_layer(net, b);
    for (std::size_t i = 0; i < net.base.size(); ++i)
        a.groups.push_back({nn::layer_name(net.base[i]), "base", nn::layer_params(net.base[i]), i >= first,
                            nn::checksum(net.base[i])});
    a.groups.push_back({net.head.name, "head", net.head.param_count(), true, nn::checksum(net.head)});
    return a;
}

/// Names of groups whose checksum differs between two audits of the same model.
inline std::vector<std::string> changed_groups(const ParameterAudit& before, const ParameterAudit& after) {
    std::vector<std::string> changed;
    for (std::size_t i = 0; i < before.groups.size() && i < after.groups.size(); ++i)
        if (before.groups[i].checksum != after.groups[i].checksum) changed.push_back(before.groups[i].name);
    return changed;
}

inline nlohmann::json to_json(const ParameterAudit& a) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& g : a.groups)
        j.push_back({{"name", g.name}, {"tag", g.tag}, {"params", g.params}, {"trainable_phase2", g.trainable_phase2},
                     {"checksum", fmt::format("{:016x}", g.checksum)}});
    return j;
}

// ---------------------------------------------------------------------------
// Model construction

/// Where base weights come from.
struct WeightSource {
    enum class Kind { Pretrained, RandomInit };
    Kind kind = Kind::Pretrained;
    std::filesystem::path cache_dir;  // pretrained weight files live here
    std::uint64_t seed = 0;           // RandomInit only

    static WeightSource pretrained(std::filesystem::path dir) { return {Kind::Pretrained, std::move(dir), 0}; }
    static WeightSource random(std::uint64_t seed) { return {Kind::RandomInit, {}, seed}; }

    /// TEXSORT_WEIGHTS_DIR if set, otherwise no cache.
    static WeightSource from_environment() {
        const char* dir = std::getenv("TEXSORT_WEIGHTS_DIR");
        return pretrained(dir ? std::filesystem::path(dir) : std::filesystem::path{});
    }
};

inline std::string weight_file_name(const BackboneSpec& b) {
    std::string n = b.name;
    std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return n + "_" + b.pretrained_source + ".tsw";
}

struct PretextConfig {
    int image_size = 32;
    int epochs = 8;
    int samples_per_epoch = 1024;
    int batch_size = 16;
    double lr = 2e-3;
    std::uint64_t seed = 20240601;
};

/// Trains the Tiny base (all layers) on synthetic gratings and returns the
/// base without a head. Deterministic for a given config.
inline nn::Network pretrain_tiny_backbone(const PretextConfig& pc = {}) {
    const auto& spec = backbone_spec("Tiny");
    nn::Network net;
    net.backbone = spec.name;
    net.input_h = pc.image_size;
    net.input_w = pc.image_size;
    net.base = base_architecture(spec);
    std::mt19937_64 rng(pc.seed);
    for (auto& l : net.base)
        if (auto* c = std::get_if<nn::Conv2D>(&l)) nn::init_conv(*c, rng);
    nn::init_dense(net.head, net.feature_width(), synth::kPretextClasses, rng);

    nn::Adam adam(net, 0);
    nn::ForwardTrace trace;
    for (int epoch = 0; epoch < pc.epochs; ++epoch) {
        for (int start = 0; start < pc.samples_per_epoch; start += pc.batch_size) {
            auto grads = nn::Gradients::zeros_like(net, 0);
            for (int i = 0; i < pc.batch_size; ++i) {
                const auto s = synth::make_pretext_sample(pc.image_size, rng);
                nn::forward(net, nn::from_image(to_model_input(s.image)), trace);
                nn::backward(net, trace, s.label, 0, grads);
            }
            grads.scale(1.0f / static_cast<float>(pc.batch_size));
            adam.step(net, grads, pc.lr);
        }
    }
    // Rescale the last conv's output channels so pooled features have unit
    // standard deviation over pretext data. Pooled ReLU outputs share a large
    // positive offset; normalizing by RMS instead leaves class differences tiny
    // and a fresh head then needs many epochs to build margin. ReLU is
    // positively homogeneous, so this only changes scale.
    std::vector<double> sum(static_cast<std::size_t>(net.feature_width()), 0.0), sq(sum.size(), 0.0);
    constexpr int kCalibration = 256;
    for (int i = 0; i < kCalibration; ++i) {
        const auto s = synth::make_pretext_sample(pc.image_size, rng);
        nn::forward(net, nn::from_image(to_model_input(s.image)), trace);
        for (std::size_t c = 0; c < sq.size(); ++c) {
            sum[c] += trace.pooled[c];
            sq[c] += static_cast<double>(trace.pooled[c]) * trace.pooled[c];
        }
    }
    for (auto it = net.base.rbegin(); it != net.base.rend(); ++it) {
        if (auto* conv = std::get_if<nn::Conv2D>(&*it)) {
            for (int c = 0; c < conv->out_ch; ++c) {
                const auto ci = static_cast<std::size_t>(c);
                const double mean = sum[ci] / kCalibration;
                const double sd = std::sqrt(std::max(0.0, sq[ci] / kCalibration - mean * mean));
                if (sd <= 1e-6) continue;
                const auto k = static_cast<float>(1.0 / sd);
                for (int j = 0; j < conv->in_ch * 9; ++j) conv->weight[ci * conv->in_ch * 9 + j] *= k;
                conv->bias[c] *= k;
            }
            break;
        }
    }
    net.head = nn::Dense{};
    net.input_h = spec.input_h;
    net.input_w = spec.input_w;
    return net;
}

inline void check_layout(const nn::Network& loaded, const std::vector<nn::Layer>& expected, const std::string& source) {
    auto mismatch = [&](const std::string& why) {
        return WeightsUnavailable("weights in " + source + " do not match the architecture: " + why);
    };
    if (loaded.base.size() != expected.size())
        throw mismatch(fmt::format("{} layers, expected {}", loaded.base.size(), expected.size()));
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (nn::layer_name(loaded.base[i]) != nn::layer_name(expected[i]) ||
            nn::layer_params(loaded.base[i]) != nn::layer_params(expected[i]) ||
            loaded.base[i].index() != expected[i].index())
            throw mismatch("layer " + std::to_string(i) + " '" + nn::layer_name(loaded.base[i]) + "'");
    }
}

/// Resolves pretrained base weights. Tiny weights are produced by the pretext
/// task on first use and cached when a cache directory is configured.
inline nn::Network load_pretrained_base(const BackboneSpec& b, const std::filesystem::path& cache_dir) {
    const auto expected = base_architecture(b);
    const auto path = cache_dir.empty() ? std::filesystem::path{} : cache_dir / weight_file_name(b);
    if (!path.empty() && std::filesystem::exists(path)) {
        auto net = nn::load_weights(path);
        check_layout(net, expected, path.string());
        net.backbone = b.name;
        net.input_h = b.input_h;
        net.input_w = b.input_w;
        net.head = nn::Dense{};
        return net;
    }
    if (b.name != "Tiny")
        throw WeightsUnavailable("pretrained weights for " + b.name + " not found" +
                                 (path.empty() ? std::string(" (no weight cache directory configured; set TEXSORT_WEIGHTS_DIR)")
                                               : " at " + path.string()));
    auto net = pretrain_tiny_backbone();
    if (!path.empty()) nn::save_weights(path, net);
    return net;
}

struct BuiltModel {
    nn::Network net;
    ParameterAudit audit;
};

/// Backbone base with its original classifier removed, plus a fresh
/// GAP -> dense -> softmax head over `num_classes` outputs.
inline BuiltModel build_model(const BackboneSpec& b, int num_classes, const WeightSource& weights,
                              std::uint64_t head_seed, const nn::Network* pretrained_base = nullptr) {
    if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
    nn::Network net;
    if (pretrained_base) {
        net = *pretrained_base;
    } else if (weights.kind == WeightSource::Kind::Pretrained) {
        net = load_pretrained_base(b, weights.cache_dir);
    } else {
        net.base = base_architecture(b);
        std::mt19937_64 rng(weights.seed);
        for (auto& l : net.base)
            if (auto* c = std::get_if<nn::Conv2D>(&l)) nn::init_conv(*c, rng);
    }
    net.backbone = b.name;
    net.input_h = b.input_h;
    net.input_w = b.input_w;
    net.classes.assign(kClassOrder.begin(), kClassOrder.end());
    if (num_classes != kNumClasses) {
        net.classes.clear();
        for (int i = 0; i < num_classes; ++i) net.classes.push_back("class" + std::to_string(i));
    }
    std::mt19937_64 rng(head_seed);
    net.head.name = "head_dense";
    nn::init_dense(net.head, net.feature_width(), num_classes, rng);
    auto a = audit(net, b);
    return {std::move(net), std::move(a)};
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    double lr_phase1 = 1e-3;
    double lr_phase2 = 1e-5;
    int batch_size = 4;
    int max_epochs_phase1 = 15;
    int max_epochs_phase2 = 50;
    int early_stop_patience = 15;
    int reduce_lr_patience = 10;
    double reduce_lr_factor = 0.2;
    double min_lr = 1e-6;
};

inline std::vector<std::string> validation_errors(const TrainConfig& c) {
    std::vector<std::string> errs;
    auto pos = [&](double v, const char* name) {
        if (!(v > 0)) errs.push_back(std::string("train.") + name + " must be positive");
    };
    pos(c.lr_phase1, "lr_phase1");
    pos(c.lr_phase2, "lr_phase2");
    pos(c.batch_size, "batch_size");
    pos(c.max_epochs_phase1, "max_epochs_phase1");
    pos(c.max_epochs_phase2, "max_epochs_phase2");
    pos(c.early_stop_patience, "early_stop_patience");
    pos(c.reduce_lr_patience, "reduce_lr_patience");
    pos(c.reduce_lr_factor, "reduce_lr_factor");
    pos(c.min_lr, "min_lr");
    if (c.reduce_lr_factor >= 1.0) errs.push_back("train.reduce_lr_factor must be < 1");
    return errs;
}

struct EpochRecord {
    int phase = 1;
    int epoch = 0;  // index within the phase
    double train_loss = 0;
    double train_acc = 0;
    double val_loss = 0;
    double val_acc = 0;
    double lr = 0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

using TrainHistory = std::vector<EpochRecord>;

inline constexpr const char* kHistoryHeader = "phase,epoch,train_loss,train_acc,val_loss,val_acc,lr";

inline std::string history_to_csv(const TrainHistory& h) {
    std::string out = std::string(kHistoryHeader) + "\n";
    for (const auto& r : h)
        out += fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.phase, r.epoch, r.train_loss, r.train_acc,
                           r.val_loss, r.val_acc, r.lr);
    return out;
}

inline TrainHistory history_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kHistoryHeader) throw ValidationError("history CSV: bad header");
    TrainHistory h;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        EpochRecord r;
        char c = 0;
        std::istringstream ls(line);
        ls >> r.phase >> c >> r.epoch >> c >> r.train_loss >> c >> r.train_acc >> c >> r.val_loss >> c >> r.val_acc >> c >> r.lr;
        if (!ls) throw ValidationError("history CSV: bad row '" + line + "'");
        h.push_back(r);
    }
    return h;
}

struct Checkpoint {
    nn::Network weights;
    double val_accuracy = -1.0;
    double val_loss = 0.0;
    int phase = 0;
    int epoch = -1;
    int fold = 0;
    std::vector<std::string> unfrozen_layer_names;
};

inline nlohmann::json sidecar_json(const Checkpoint& c) {
    return {{"fold", c.fold},
            {"phase", c.phase},
            {"epoch", c.epoch},
            {"val_accuracy", c.val_accuracy},
            {"val_loss", c.val_loss},
            {"backbone", c.weights.backbone},
            {"classes", c.weights.classes},
            {"unfrozen_layer_names", c.unfrozen_layer_names}};
}

/// Preprocessed images with integer labels in class order.
struct LabeledSet {
    std::vector<std::string> ids;
    std::vector<Image8> images;
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

inline std::vector<nn::Tensor> to_tensors(const LabeledSet& set) {
    std::vector<nn::Tensor> t;
    t.reserve(set.size());
    for (const auto& img : set.images) t.push_back(nn::from_image(to_model_input(img)));
    return t;
}

/// Mean cross-entropy and accuracy over a fixed-order set; never augments.
inline EvalResult evaluate(const nn::Network& net, const std::vector<nn::Tensor>& inputs, const std::vector<int>& labels) {
    EvalResult r;
    if (inputs.empty()) return r;
    nn::ForwardTrace trace;
    double loss = 0.0;
    int correct = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        nn::forward(net, inputs[i], trace);
        loss += nn::cross_entropy(trace.probs, labels[i]);
        correct += nn::argmax(trace.probs) == labels[i];
    }
    r.loss = loss / static_cast<double>(inputs.size());
    r.accuracy = static_cast<double>(correct) / static_cast<double>(inputs.size());
    return r;
}

/// Test-only interception points.
struct TrainHooks {
    /// Replaces the measured validation loss of an epoch before callbacks see it.
    std::function<double(int phase, int epoch, double measured)> val_loss_override;
    /// Called after each phase with the model weights as they leave the phase.
    std::function<void(int phase, const nn::Network&)> after_phase;
};

struct TrainOutcome {
    Checkpoint checkpoint;            // best validation accuracy over both phases
    TrainHistory history;
    nn::Network final_weights;        // end of phase 2, best-val-loss weights restored
    std::size_t augmented_samples = 0;
};

/// Two-phase transfer learning.
///
/// Phase 1 trains only the head at lr_phase1. Phase 2 additionally unfreezes the
/// backbone's trailing `unfreeze_top_layers` base layers at lr_phase2 with a
/// fresh optimizer. Early stopping (restore best val-loss weights at the end of
/// each phase) and plateau lr reduction are reset per phase; the checkpoint
/// tracks the highest validation accuracy across both phases, earliest on ties.
inline TrainOutcome train_two_phase(nn::Network model, const LabeledSet& train, const LabeledSet& val,
                                    const TrainConfig& cfg, const BackboneSpec& backbone, const AugmentConfig& aug,
                                    std::uint64_t seed, int fold = 0, const TrainHooks& hooks = {}) {
    if (train.size() == 0) throw ValidationError("training set is empty");
    if (val.size() == 0) throw ValidationError("validation set is empty");
    if (const auto errs = validation_errors(cfg); !errs.empty()) throw ValidationError(errs.front());
    validate(aug);
    if (model.input_h != backbone.input_h || model.input_w != backbone.input_w)
        throw ValidationError("model input dims do not match backbone " + backbone.name);
    auto check_dims = [&](const LabeledSet& s, const char* which) {
        for (std::size_t i = 0; i < s.size(); ++i)
            if (s.images[i].height != backbone.input_h || s.images[i].width != backbone.input_w)
                throw ValidationError(fmt::format("{} image '{}' is {}x{}, {} expects {}x{}", which,
                                                  i < s.ids.size() ? s.ids[i] : std::to_string(i), s.images[i].height,
                                                  s.images[i].width, backbone.name, backbone.input_h, backbone.input_w));
    };
    check_dims(train, "train");
    check_dims(val, "validation");

    TrainOutcome out;
    out.checkpoint.fold = fold;
    out.checkpoint.unfrozen_layer_names = unfrozen_layer_names(model, backbone);
    const auto val_inputs = to_tensors(val);
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(train.size());
    nn::ForwardTrace trace;

    auto run_phase = [&](int phase, double lr0, int max_epochs, std::size_t first_trainable) {
        nn::Adam adam(model, first_trainable);
        EarlyStopping stopper(cfg.early_stop_patience);
        ReduceLrOnPlateau plateau(lr0, cfg.reduce_lr_patience, cfg.reduce_lr_factor, cfg.min_lr);
        nn::Network best_loss_weights = model;
        for (int epoch = 0; epoch < max_epochs; ++epoch) {
            const double lr = plateau.lr();
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            double loss_sum = 0.0;
            int correct = 0;
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
                auto grads = nn::Gradients::zeros_like(model, first_trainable);
                for (std::size_t k = start; k < end; ++k) {
                    const auto idx = order[k];
                    const auto input = nn::from_image(to_model_input(augment(train.images[idx], aug, rng)));
                    ++out.augmented_samples;
                    nn::forward(model, input, trace);
                    loss_sum += nn::cross_entropy(trace.probs, train.labels[idx]);
                    correct += nn::argmax(trace.probs) == train.labels[idx];
                    nn::backward(model, trace, train.labels[idx], first_trainable, grads);
                }
                grads.scale(1.0f / static_cast<float>(end - start));
                adam.step(model, grads, lr);
            }
            const auto ev = evaluate(model, val_inputs, val.labels);
            const double val_loss = hooks.val_loss_override ? hooks.val_loss_override(phase, epoch, ev.loss) : ev.loss;
            out.history.push_back({phase, epoch, loss_sum / static_cast<double>(train.size()),
                                   static_cast<double>(correct) / static_cast<double>(train.size()), val_loss,
                                   ev.accuracy, lr});
            if (ev.accuracy > out.checkpoint.val_accuracy) {
                out.checkpoint.weights = model;
                out.checkpoint.val_accuracy = ev.accuracy;
                out.checkpoint.val_loss = val_loss;
                out.checkpoint.phase = phase;
                out.checkpoint.epoch = epoch;
            }
            if (stopper.update(val_loss)) best_loss_weights = model;
            plateau.update(val_loss);
            if (stopper.should_stop()) break;
        }
        model = std::move(best_loss_weights);
        if (hooks.after_phase) hooks.after_phase(phase, model);
    };

    run_phase(1, cfg.lr_phase1, cfg.max_epochs_phase1, model.base.size());
    run_phase(2, cfg.lr_phase2, cfg.max_epochs_phase2, first_unfrozen_layer(model, backbone));
    out.final_weights = std::move(model);
    return out;
}

// ---------------------------------------------------------------------------
// Prediction

struct Prediction {
    std::vector<float> probs;
    int label = 0;
};

/// Per-image class probabilities, in input order; label ties go to the lowest index.
inline std::vector<Prediction> predict(const nn::Network& net, const std::vector<ImageF>& images) {
    std::vector<Prediction> out;
    out.reserve(images.size());
    for (const auto& img : images) {
        if (img.height != net.input_h || img.width != net.input_w)
            throw ValidationError(fmt::format("image is {}x{}, model expects {}x{}", img.height, img.width, net.input_h,
                                              net.input_w));
        auto probs = nn::predict_probs(net, nn::from_image(img));
        const int label = nn::argmax(probs);
        out.push_back({std::move(probs), label});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cross-validation

/// Loads and spatially normalizes the named samples.
inline LabeledSet load_labeled(const Manifest& m, const std::vector<std::string>& ids, const PreprocessSpec& pre) {
    LabeledSet set;
    for (const auto& id : ids) {
        const Sample* s = m.find(id);
        if (!s) throw ValidationError("sample '" + id + "' not in manifest");
        if (!s->material) throw ValidationError("sample '" + id + "' has no material label");
        set.ids.push_back(id);
        set.images.push_back(center_crop_resize(load_rgb(s->image_path), pre));
        set.labels.push_back(class_index(*s->material));
    }
    return set;
}

inline LabeledSet subset(const LabeledSet& all, const std::vector<std::string>& ids) {
    LabeledSet s;
    for (const auto& id : ids) {
        const auto it = std::find(all.ids.begin(), all.ids.end(), id);
        if (it == all.ids.end()) throw ValidationError("sample '" + id + "' not loaded");
        const auto i = static_cast<std::size_t>(it - all.ids.begin());
        s.ids.push_back(id);
        s.images.push_back(all.images[i]);
        s.labels.push_back(all.labels[i]);
    }
    return s;
}

struct CvOptions {
    AugmentConfig augment;
    CropMode crop_mode = CropMode::Literal;
    std::uint64_t seed = 0;
    WeightSource weights = WeightSource::from_environment();
    int jobs = 1;                       // folds trained concurrently
    std::filesystem::path out_dir;      // empty: keep results in memory only
    std::vector<int> only_folds;        // empty: all folds
};

struct FoldResult {
    int fold = 0;
    TrainOutcome outcome;
};

struct CvResult {
    std::vector<FoldResult> folds;  // ascending fold index
    int best_fold = -1;
};

/// Highest checkpoint validation accuracy; lowest fold index on ties.
inline int select_best_fold(const std::vector<double>& val_accuracies) {
    int best = -1;
    for (int i = 0; i < static_cast<int>(val_accuracies.size()); ++i)
        if (best < 0 || val_accuracies[i] > val_accuracies[best]) best = i;
    return best;
}

inline std::uint64_t fold_seed(std::uint64_t seed, int fold) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(fold), 0xF01Du};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline void persist_fold(const std::filesystem::path& dir, const FoldResult& r, const BackboneSpec& b) {
    const auto fold_dir = dir / fmt::format("fold_{}", r.fold);
    nn::save_weights(fold_dir / "checkpoint.tsw", r.outcome.checkpoint.weights);
    io::write_atomic(fold_dir / "checkpoint.json", sidecar_json(r.outcome.checkpoint).dump(2) + "\n");
    io::write_atomic(fold_dir / "history.csv", history_to_csv(r.outcome.history));
    io::write_atomic(fold_dir / "audit.json", to_json(audit(r.outcome.checkpoint.weights, b)).dump(2) + "\n");
}

/// Runs the two-phase protocol once per fold and selects the best fold.
inline CvResult cross_validate(const Manifest& manifest, const FoldPlan& plan, const BackboneSpec& backbone,
                               const TrainConfig& cfg, const CvOptions& opt) {
    std::vector<int> folds = opt.only_folds;
    if (folds.empty()) {
        folds.resize(static_cast<std::size_t>(plan.k));
        std::iota(folds.begin(), folds.end(), 0);
    }
    for (int f : folds) split_train_val(plan, f);  // range check before any work

    std::vector<std::string> all_ids;
    for (const auto& [id, f] : plan.assignment) all_ids.push_back(id);
    const auto all = load_labeled(manifest, all_ids, preprocess_spec_for(backbone, opt.crop_mode));

    const auto base = opt.weights.kind == WeightSource::Kind::Pretrained
                          ? std::optional<nn::Network>(load_pretrained_base(backbone, opt.weights.cache_dir))
                          : std::nullopt;

    auto run_fold = [&](int f) {
        const auto split = split_train_val(plan, f);
        const auto fs = fold_seed(opt.seed, f);
        auto built = build_model(backbone, kNumClasses, opt.weights, fs, base ? &*base : nullptr);
        FoldResult r{f, train_two_phase(std::move(built.net), subset(all, split.train), subset(all, split.val), cfg,
                                        backbone, opt.augment, fs, f)};
        if (!opt.out_dir.empty()) persist_fold(opt.out_dir, r, backbone);
        return r;
    };

    CvResult result;
    const int jobs = std::max(1, opt.jobs);
    for (std::size_t start = 0; start < folds.size(); start += static_cast<std::size_t>(jobs)) {
        std::vector<std::future<FoldResult>> pending;
        for (std::size_t i = start; i < std::min(folds.size(), start + static_cast<std::size_t>(jobs)); ++i)
            pending.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, run_fold, folds[i]));
        for (auto& p : pending) result.folds.push_back(p.get());
    }

    std::vector<double> accs;
    for (const auto& r : result.folds) accs.push_back(r.outcome.checkpoint.val_accuracy);
    const int best_pos = select_best_fold(accs);
    result.best_fold = best_pos < 0 ? -1 : result.folds[static_cast<std::size_t>(best_pos)].fold;

    if (!opt.out_dir.empty()) {
        nlohmann::json summary{{"backbone", backbone.name}, {"k", plan.k}, {"seed", opt.seed},
                               {"best_fold", result.best_fold}, {"folds", nlohmann::json::array()}};
        for (const auto& r : result.folds) {
            const auto& c = r.outcome.checkpoint;
            summary["folds"].push_back({{"fold", r.fold},
                                        {"val_accuracy", c.val_accuracy},
                                        {"phase", c.phase},
                                        {"epoch", c.epoch},
                                        {"epochs_run", r.outcome.history.size()},
                                        {"checkpoint", fmt::format("fold_{}/checkpoint.tsw", r.fold)}});
        }
        io::write_atomic(opt.out_dir / "summary.json", summary.dump(2) + "\n");
    }
    return result;
}

}  // namespace texsort
