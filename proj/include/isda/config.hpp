#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "isda/model.hpp"

namespace isda {

/// Flat `key = value` run configuration. Unknown keys are rejected; CLI
/// flags override file values.
struct RunConfig {
    int input_size = 64;

    ModelConfig model;

    real score_threshold = 0.5;
    real lambda_cls = 1.0;
    real lambda_mask = 3.0;
    real noobj_weight = 0.1;

    int epochs = 30;
    real lr = 1e-3;
    std::vector<int> lr_drop_epochs = {22, 27};
    int batch_size = 4;
    std::uint64_t seed = 1;
    int threads = 0;  // 0 = hardware concurrency
    real early_stop_ap50 = 0.0;

    std::string train_dir = "data/train";
    std::string val_dir = "data/val";
    std::string out_dir = "out";

    int ablate_epochs = 12;
    std::vector<int> ablate_lr_drops = {9, 11};
    int ablate_train_count = 240;
    int ablate_val_count = 120;
    int ablate_seeds = 3;

    static RunConfig from_file(const std::string& path);
    void apply(const std::string& key, const std::string& value);
    void validate() const;
};

}  // namespace isda
