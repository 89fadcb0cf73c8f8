#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tagkit/common.hpp"

// Shared training-loop plumbing: hyperparameters, per-epoch history, and the
// early-stopping tracker (best validation metric wins, patience in epochs).

namespace tagkit {

struct TrainHyper {
    double lr = 1e-3;
    std::size_t batch = 8;
    std::size_t max_epochs = 30;
    std::size_t patience = 5;
    std::uint64_t seed = 1;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_metric = 0.0;  // macro PR-AUC on the validation split
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
    double best_metric = 0.0;

    std::string to_csv() const {
        std::string out = "epoch,train_loss,val_macro_pr_auc\n";
        for (const auto& e : epochs) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "%zu,%.10f,%.10f\n", e.epoch, e.train_loss,
                          e.val_metric);
            out += buf;
        }
        return out;
    }
};

class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

    // Returns true when this epoch is a new best.
    bool observe(double metric) {
        if (metric > best_) {
            best_ = metric;
            stale_ = 0;
            return true;
        }
        ++stale_;
        return false;
    }

    bool should_stop() const { return stale_ >= patience_; }
    double best() const { return best_; }

private:
    std::size_t patience_;
    std::size_t stale_ = 0;
    double best_ = -1.0;
};

}  // namespace tagkit
