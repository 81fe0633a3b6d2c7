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


#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"
#include "texsort/callbacks.hpp"
#include "texsort/nn.hpp"

namespace texsort {
namespace {

nn::Network small_net(std::uint64_t seed, int h = 8, int w = 8) {
    nn::Network net;
    net.backbone = "test";
    net.input_h = h;
    net.input_w = w;
    net.base.emplace_back(nn::make_conv("c1", 3, 4));
    net.base.emplace_back(nn::MaxPool2D{"p1"});
    net.base.emplace_back(nn::make_conv("c2", 4, 5));
    std::mt19937_64 rng(seed);
    for (auto& l : net.base)
        if (auto* c = std::get_if<nn::Conv2D>(&l)) {
            nn::init_conv(*c, rng);
            for (auto& b : c->bias) b = std::uniform_real_distribution<float>(-0.1f, 0.1f)(rng);
        }
    nn::init_dense(net.head, net.feature_width(), 3, rng);
    net.classes = {"a", "b", "c"};
    return net;
}

nn::Tensor random_input(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    nn::Tensor t(3, h, w);
    for (auto& v : t.v) v = std::uniform_real_distribution<float>(-1.0f, 1.0f)(rng);
    return t;
}

double loss_of(const nn::Network& net, const nn::Tensor& x, int label) {
    return nn::cross_entropy(nn::predict_probs(net, x), label);
}

TEST(Conv, CenterTapKernelWithoutReluIsIdentity) {
    nn::Network net;
    net.input_h = 5;
    net.input_w = 6;
    auto c = nn::make_conv("id", 3, 3, false);
    for (int o = 0; o < 3; ++o) c.weight[static_cast<std::size_t>(o) * 3 * 9 + o * 9 + 4] = 1.0f;
    net.base.emplace_back(c);
    net.head.in = 3;
    net.head.out = 2;
    net.head.weight.assign(6, 0.0f);
    net.head.bias.assign(2, 0.0f);
    const auto x = random_input(5, 6, 1);
    nn::ForwardTrace t;
    nn::forward(net, x, t);
    EXPECT_EQ(t.acts[1].v, x.v);
}

TEST(Conv, SamePaddingMatchesNaiveSum) {
    auto net = small_net(2, 6, 7);
    const auto x = random_input(6, 7, 3);
    nn::ForwardTrace t;
    nn::forward(net, x, t);
    const auto& c = std::get<nn::Conv2D>(net.base[0]);
    for (int o = 0; o < c.out_ch; ++o)
        for (int y = 0; y < 6; ++y)
            for (int xx = 0; xx < 7; ++xx) {
                double s = c.bias[o];
                for (int i = 0; i < 3; ++i)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int sy = y + ky - 1, sx = xx + kx - 1;
                            if (sy < 0 || sy >= 6 || sx < 0 || sx >= 7) continue;
                            s += c.weight[((static_cast<std::size_t>(o) * 3 + i) * 3 + ky) * 3 + kx] *
                                 x.plane(i)[sy * 7 + sx];
                        }
                EXPECT_NEAR(t.acts[1].plane(o)[y * 7 + xx], std::max(0.0, s), 1e-5);
            }
}

TEST(Softmax, OutputsAreDistributions) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto p = nn::predict_probs(small_net(s), random_input(8, 8, s + 100));
        double sum = 0;
        for (float v : p) {
            EXPECT_GE(v, 0.0f);
            sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-6);
    }
}

TEST(Backward, MatchesCentralDifferences) {
    auto net = small_net(7);
    const auto x = random_input(8, 8, 8);
    const int label = 1;
    nn::ForwardTrace t;
    nn::forward(net, x, t);
    auto g = nn::Gradients::zeros_like(net, 0);
    nn::backward(net, t, label, 0, g);

    // A perturbation that crosses a ReLU or max-pool switch makes the central
    // difference meaningless; such parameters show disagreeing estimates at two
    // step sizes and are skipped (and counted).
    int checked = 0, skipped = 0;
    auto numeric = [&](float& param, float h) {
        const float saved = param;
        param = saved + h;
        const double up = loss_of(net, x, label);
        param = saved - h;
        const double down = loss_of(net, x, label);
        param = saved;
        return (up - down) / (2.0 * static_cast<double>(h));
    };
    auto check = [&](float& param, float analytic, const std::string& what) {
        const double coarse = numeric(param, 1e-3f), fine = numeric(param, 2.5e-4f);
        if (std::fabs(coarse - fine) > 1e-3 + 0.05 * std::fabs(fine)) {
            ++skipped;
            return;
        }
        ++checked;
        EXPECT_NEAR(analytic, coarse, 1e-3 + 2e-2 * std::fabs(coarse)) << what;
    };
    std::mt19937_64 rng(9);
    for (std::size_t li : {0u, 2u}) {
        auto& c = std::get<nn::Conv2D>(net.base[li]);
        for (int k = 0; k < 15; ++k) {
            const auto j = static_cast<std::size_t>(rng() % c.weight.size());
            check(c.weight[j], g.conv_w[li][j], c.name + ".w[" + std::to_string(j) + "]");
        }
        for (std::size_t j = 0; j < c.bias.size(); ++j) check(c.bias[j], g.conv_b[li][j], c.name + ".b");
    }
    for (std::size_t j = 0; j < net.head.weight.size(); ++j) check(net.head.weight[j], g.head_w[j], "head.w");
    for (std::size_t j = 0; j < net.head.bias.size(); ++j) check(net.head.bias[j], g.head_b[j], "head.b");
    EXPECT_LE(skipped * 5, checked + skipped) << skipped << " of " << checked + skipped << " skipped";
}

TEST(Backward, FrozenLayersGetNoGradientBuffers) {
    auto net = small_net(1);
    auto g = nn::Gradients::zeros_like(net, 2);
    EXPECT_TRUE(g.conv_w[0].empty());
    EXPECT_FALSE(g.conv_w[2].empty());
}

TEST(Adam, FirstStepMovesEachParameterByLearningRate) {
    // With bias correction, step one is lr * g / (|g| + eps') for every parameter.
    auto net = small_net(3);
    const auto before = net;
    auto g = nn::Gradients::zeros_like(net, 0);
    for (auto& v : g.head_w) v = 0.5f;
    for (auto& v : g.head_b) v = -2.0f;
    nn::Adam adam(net, 0);
    adam.step(net, g, 1e-2);
    for (std::size_t j = 0; j < net.head.weight.size(); ++j)
        EXPECT_NEAR(before.head.weight[j] - net.head.weight[j], 1e-2, 1e-6);
    for (std::size_t j = 0; j < net.head.bias.size(); ++j) EXPECT_NEAR(net.head.bias[j] - before.head.bias[j], 1e-2, 1e-6);
    // Zero gradients leave conv weights untouched.
    EXPECT_EQ(std::get<nn::Conv2D>(net.base[0]).weight, std::get<nn::Conv2D>(before.base[0]).weight);
}

TEST(Adam, FrozenPrefixIsBitwiseUnchanged) {
    auto net = small_net(4);
    const auto before = nn::checksum(net.base[0]);
    nn::Adam adam(net, 2);
    auto g = nn::Gradients::zeros_like(net, 2);
    for (auto& v : g.conv_w[2]) v = 1.0f;
    adam.step(net, g, 1e-3);
    EXPECT_EQ(nn::checksum(net.base[0]), before);
}

TEST(Argmax, TiesGoToLowestIndex) {
    const std::vector<float> uniform{0.25f, 0.25f, 0.25f, 0.25f};
    EXPECT_EQ(nn::argmax(uniform), 0);
    const std::vector<float> p{0.1f, 0.7f, 0.1f, 0.1f};
    EXPECT_EQ(nn::argmax(p), 1);
    const std::vector<float> q{0.1f, 0.4f, 0.4f, 0.1f};
    EXPECT_EQ(nn::argmax(q), 1);
}

TEST(CrossEntropy, ClipsProbabilities) {
    const std::vector<float> p{0.0f, 1.0f};
    EXPECT_NEAR(nn::cross_entropy(p, 0), -std::log(1e-7), 1e-9);
    EXPECT_NEAR(nn::cross_entropy(p, 1), -std::log(1.0 - 1e-7), 1e-12);
}

TEST(Weights, SaveLoadRoundTripIsBitExact) {
    testing::TempDir dir("weights");
    const auto net = small_net(5);
    nn::save_weights(dir / "w.tsw", net);
    const auto back = nn::load_weights(dir / "w.tsw");
    ASSERT_EQ(back.base.size(), net.base.size());
    for (std::size_t i = 0; i < net.base.size(); ++i) EXPECT_EQ(nn::checksum(back.base[i]), nn::checksum(net.base[i]));
    EXPECT_EQ(nn::checksum(back.head), nn::checksum(net.head));
    EXPECT_EQ(back.classes, net.classes);
    const auto x = random_input(8, 8, 6);
    EXPECT_EQ(nn::predict_probs(back, x), nn::predict_probs(net, x));
}

TEST(Weights, TruncatedFileIsRejected) {
    testing::TempDir dir("weights");
    nn::save_weights(dir / "w.tsw", small_net(5));
    auto bytes = io::read_file(dir / "w.tsw");
    bytes.resize(bytes.size() - 7);
    io::write_atomic(dir / "bad.tsw", bytes);
    EXPECT_THROW(nn::load_weights(dir / "bad.tsw"), std::runtime_error);
}

TEST(Forward, DimensionMismatchIsRejected) {
    EXPECT_THROW(nn::predict_probs(small_net(1), random_input(9, 8, 1)), ValidationError);
}

// ---------------------------------------------------------------------------
// Callbacks

TEST(EarlyStop, ImprovingSequenceDoesNotStop) {
    const std::vector<double> l{3, 2, 1};
    const auto d = early_stop_decision(l, 15);
    EXPECT_FALSE(d.stop);
    EXPECT_EQ(d.best_epoch, 2);
}

TEST(EarlyStop, FifteenNonImprovingEpochsStop) {
    std::vector<double> l{1.0};
    std::mt19937_64 rng(1);
    for (int i = 0; i < 15; ++i) l.push_back(1.0 + std::uniform_real_distribution<double>(0.0, 0.5)(rng) * (i % 2));
    const auto d = early_stop_decision(l, 15);
    EXPECT_TRUE(d.stop);
    EXPECT_EQ(d.best_epoch, 0);
    l.pop_back();
    EXPECT_FALSE(early_stop_decision(l, 15).stop);
}

TEST(EarlyStop, MatchesBruteForceScanOnRandomTraces) {
    std::mt19937_64 rng(2024);
    for (int t = 0; t < 1000; ++t) {
        const int n = 1 + static_cast<int>(rng() % 40);
        const int patience = 1 + static_cast<int>(rng() % 16);
        std::vector<double> l;
        // Coarse quantization produces plenty of exact ties.
        for (int i = 0; i < n; ++i) l.push_back(static_cast<double>(rng() % 8) / 4.0);
        const auto d = early_stop_decision(l, patience);
        const auto [stop, best] = testing::brute_early_stop(l, patience);
        EXPECT_EQ(d.stop, stop);
        EXPECT_EQ(d.best_epoch, best);
    }
}

TEST(ReduceLr, PlateauAfterSecondEpochCutsRateAtTrigger) {
    std::vector<double> l{1.0, 0.9};
    for (int i = 0; i < 10; ++i) l.push_back(0.9);
    const auto lrs = reduce_lr_schedule(l, 1e-3, 10, 0.2, 1e-6);
    for (int e = 0; e <= 11; ++e) EXPECT_DOUBLE_EQ(lrs[e], 1e-3) << e;
    EXPECT_DOUBLE_EQ(lrs[12], 1e-3 * 0.2);
}

TEST(ReduceLr, FloorsAtMinimum) {
    const std::vector<double> l(200, 1.0);
    const auto lrs = reduce_lr_schedule(l, 1e-5, 10, 0.2, 1e-6);
    EXPECT_DOUBLE_EQ(lrs.back(), 1e-6);
    for (double v : lrs) EXPECT_GE(v, 1e-6);
}

TEST(ReduceLr, MatchesBruteForceScanOnRandomTraces) {
    std::mt19937_64 rng(77);
    for (int t = 0; t < 1000; ++t) {
        const int n = 1 + static_cast<int>(rng() % 60);
        const int patience = 1 + static_cast<int>(rng() % 12);
        std::vector<double> l;
        for (int i = 0; i < n; ++i) l.push_back(static_cast<double>(rng() % 6) / 3.0);
        EXPECT_EQ(reduce_lr_schedule(l, 1e-3, patience, 0.2, 1e-6), testing::brute_lr_trace(l, 1e-3, patience, 0.2, 1e-6));
    }
}

}  // namespace
}  // namespace texsort
