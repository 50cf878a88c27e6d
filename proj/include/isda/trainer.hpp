#pragma once

#include <iosfwd>
#include <vector>

#include "isda/dataset.hpp"
#include "isda/model.hpp"

namespace isda {

struct TrainOptions {
    int epochs = 30;
    real lr = 1e-3;
    std::vector<int> lr_drop_epochs = {22, 27};  // 1-based, lr *= 0.1 at each
    int batch_size = 4;
    std::uint64_t seed = 1;
    int threads = 0;  // 0 = hardware concurrency
    real lambda_cls = 1.0;
    real lambda_mask = 3.0;
    real noobj_weight = 0.1;
    real weight_decay = 1e-4;
    real eval_threshold = 0.05;   // confidence floor when scoring AP
    real early_stop_ap50 = 0.0;   // 0 disables
};

struct EpochStats {
    int epoch = 0;
    real loss = 0, cls = 0, mask = 0;
    real ap = 0, ap50 = 0;
    double seconds = 0;
};

/// Run predictions over a dataset (parallel across images, merged by id).
std::vector<std::vector<PredictionInstance>> predict_dataset(const IsdaModel& model,
                                                             const std::vector<Scene>& scenes,
                                                             real score_threshold, int threads);

EvalReport evaluate_model(const IsdaModel& model, const std::vector<Scene>& scenes,
                          real score_threshold, int threads);

/// Per-image losses are evaluated concurrently into private gradient sinks
/// and merged in image order, so a fixed seed reproduces training exactly.
std::vector<EpochStats> train_model(IsdaModel& model, const std::vector<Scene>& train_scenes,
                                    const std::vector<Scene>& val_scenes,
                                    const TrainOptions& opts, std::ostream* log = nullptr);

}  // namespace isda
