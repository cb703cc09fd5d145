#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "cgraseg/errors.hpp"

// Pure state machine for the four-phase quantization-aware training schedule
// and its step learning-rate rule. No gradients, losses, or data live here;
// the controller only answers "what are the flags and LR at epoch e" so an
// external trainer (or a test) can consume the full table.
//
// Phases over half-open epoch intervals:
//   [0, 50)    phase 1: decoder trainable, aux off, dropout on,  augmentation on
//   [50, 110)  phase 2: decoder frozen,    aux on,  dropout on,  augmentation on
//   [110, 170) phase 3: decoder frozen,    aux on,  dropout off, augmentation off
//   [170, ...) phase 4: decoder trainable, aux on,  dropout on,  augmentation on
// Epochs past the last boundary hold the phase-4 state. The learning rate
// starts at 7e-4 and decays by 0.1 at epochs 110 and 170.

namespace cgraseg {

struct PhaseState {
    int phase = 1;
    bool frozen_decoder = false;
    bool aux_supervision = false;
    bool dropout = true;
    bool augmentation = true;

    bool operator==(const PhaseState&) const = default;
};

struct ScheduleConfig {
    std::array<int, 4> boundaries{50, 110, 170, 218};
    int total_epochs = 240;
    double base_lr = 7e-4;
    std::vector<int> lr_milestones{110, 170};
    double lr_factor = 0.1;
    int batch_size = 2;

    void validate() const {
        for (std::size_t i = 1; i < boundaries.size(); ++i) {
            if (boundaries[i] <= boundaries[i - 1]) {
                throw ScheduleError("phase boundaries must be strictly increasing");
            }
        }
        if (total_epochs < 1) throw ScheduleError("total_epochs must be >= 1");
    }
};

inline PhaseState phase_for_epoch(int epoch, const ScheduleConfig& cfg = {}) {
    cfg.validate();
    if (epoch < 0 || epoch >= cfg.total_epochs) {
        throw ScheduleError("epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(cfg.total_epochs) + ")");
    }
    if (epoch < cfg.boundaries[0]) return PhaseState{1, false, false, true, true};
    if (epoch < cfg.boundaries[1]) return PhaseState{2, true, true, true, true};
    if (epoch < cfg.boundaries[2]) return PhaseState{3, true, true, false, false};
    return PhaseState{4, false, true, true, true};
}

// base_lr * factor^(number of milestones <= epoch).
inline double lr_for_epoch(int epoch, const ScheduleConfig& cfg = {}) {
    if (epoch < 0) throw ScheduleError("epoch must be >= 0");
    int hits = 0;
    for (int m : cfg.lr_milestones) {
        if (m <= epoch) ++hits;
    }
    return cfg.base_lr * std::pow(cfg.lr_factor, hits);
}

// Full table, one row per epoch: epoch,phase,frozen_dec,aux,dropout,aug,lr
inline void write_schedule_csv(std::ostream& os, const ScheduleConfig& cfg = {}) {
    os << "epoch,phase,frozen_dec,aux,dropout,aug,lr\n";
    char buf[128];
    for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
        const PhaseState s = phase_for_epoch(epoch, cfg);
        std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d,%d,%d,%.10g\n", epoch, s.phase,
                      s.frozen_decoder ? 1 : 0, s.aux_supervision ? 1 : 0, s.dropout ? 1 : 0,
                      s.augmentation ? 1 : 0, lr_for_epoch(epoch, cfg));
        os << buf;
    }
}

} // namespace cgraseg
