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
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace texsort {

// Both monitors count "improvement" as a strict decrease of validation loss,
// with no minimum delta. State is per training phase.

/// Early stopping on validation loss.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience) : patience_(patience) {}

    /// Records one epoch; returns true when the loss improved on the running best.
    bool update(double val_loss) {
        ++epochs_;
        if (val_loss < best_) {
            best_ = val_loss;
            best_epoch_ = epochs_ - 1;
            wait_ = 0;
            return true;
        }
        ++wait_;
        return false;
    }

    bool should_stop() const noexcept { return wait_ >= patience_; }
    int best_epoch() const noexcept { return best_epoch_; }
    double best_loss() const noexcept { return best_; }

private:
    int patience_;
    int epochs_ = 0;
    int wait_ = 0;
    int best_epoch_ = -1;
    double best_ = std::numeric_limits<double>::infinity();
};

struct EarlyStopDecision {
    bool stop = false;
    int best_epoch = 0;
};

/// Stop iff the last `patience` epochs all failed to beat the running best.
/// best_epoch is the earliest argmin.
inline EarlyStopDecision early_stop_decision(std::span<const double> val_losses, int patience) {
    EarlyStopping es(patience);
    for (double l : val_losses) es.update(l);
    return {es.should_stop(), std::max(es.best_epoch(), 0)};
}

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// improvement, never going below `min_lr`.
class ReduceLrOnPlateau {
public:
    ReduceLrOnPlateau(double initial_lr, int patience, double factor, double min_lr)
        : lr_(initial_lr), patience_(patience), factor_(factor), min_lr_(min_lr) {}

    /// Records one epoch and returns the rate for the next one.
    double update(double val_loss) {
        if (val_loss < best_) {
            best_ = val_loss;
            wait_ = 0;
        } else if (++wait_ >= patience_ && lr_ > min_lr_) {
            lr_ = std::max(lr_ * factor_, min_lr_);
            wait_ = 0;
        }
        return lr_;
    }

    double lr() const noexcept { return lr_; }

private:
    double lr_;
    int patience_;
    double factor_;
    double min_lr_;
    int wait_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

/// Learning rate in effect for each epoch of a loss trace: element i is the rate
/// used during epoch i; the final element is the rate the next epoch would get.
inline std::vector<double> reduce_lr_schedule(std::span<const double> val_losses, double initial_lr, int patience,
                                              double factor, double min_lr) {
    ReduceLrOnPlateau r(initial_lr, patience, factor, min_lr);
    std::vector<double> lrs{r.lr()};
    for (double l : val_losses) lrs.push_back(r.update(l));
    return lrs;
}

}  // namespace texsort
