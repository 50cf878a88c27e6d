#include "isda/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "isda/optim.hpp"
#include "isda/rng.hpp"

namespace isda {

namespace {

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

struct ImageLoss {
    GradSink sink;
    real total = 0, cls = 0, mask = 0;
};

void image_backward(const IsdaModel& model, const Scene& scene, const TrainOptions& opts,
                    ImageLoss& out) {
    ModelOutput fwd = model.forward(scene.image());
    LossBreakdown lb = set_loss(fwd.class_logits, fwd.masks_full, scene.instances,
                                opts.lambda_cls, opts.lambda_mask, opts.noobj_weight);
    out.total = lb.total.item();
    out.cls = lb.cls_term.item();
    out.mask = lb.mask_term.item();
    backward(lb.total, &out.sink);
}

}  // namespace

std::vector<std::vector<PredictionInstance>> predict_dataset(const IsdaModel& model,
                                                             const std::vector<Scene>& scenes,
                                                             real score_threshold, int threads) {
    const int nt =
        std::min(resolve_threads(threads), static_cast<int>(std::max<size_t>(scenes.size(), 1)));
    std::vector<std::vector<PredictionInstance>> preds(scenes.size());
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int t = 0; t < nt; ++t)
        pool.emplace_back([&] {
            for (size_t i = next.fetch_add(1); i < scenes.size(); i = next.fetch_add(1))
                preds[i] = model.predict(scenes[i].image(), score_threshold);
        });
    for (auto& th : pool) th.join();
    return preds;
}

EvalReport evaluate_model(const IsdaModel& model, const std::vector<Scene>& scenes,
                          real score_threshold, int threads) {
    auto preds = predict_dataset(model, scenes, score_threshold, threads);
    std::vector<std::vector<GroundTruthInstance>> gts;
    gts.reserve(scenes.size());
    for (const auto& s : scenes) gts.push_back(s.instances);
    return evaluate(preds, gts);
}

std::vector<EpochStats> train_model(IsdaModel& model, const std::vector<Scene>& train_scenes,
                                    const std::vector<Scene>& val_scenes,
                                    const TrainOptions& opts, std::ostream* log) {
    if (train_scenes.empty()) throw std::invalid_argument("train: no training scenes");
    AdamW optimizer(model.params(), opts.lr, 0.9, 0.999, 1e-8, opts.weight_decay);
    Rng shuffle_rng(Rng::mix(opts.seed, 0x5affe));
    const int nt = resolve_threads(opts.threads);

    std::vector<EpochStats> history;
    std::vector<size_t> order(train_scenes.size());
    std::iota(order.begin(), order.end(), 0);

    real lr = opts.lr;
    for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        if (std::find(opts.lr_drop_epochs.begin(), opts.lr_drop_epochs.end(), epoch) !=
            opts.lr_drop_epochs.end())
            lr *= 0.1;
        optimizer.set_lr(lr);

        // Fisher-Yates with the run RNG; identical seeds shuffle identically.
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

        EpochStats stats;
        stats.epoch = epoch;
        size_t cursor = 0;
        while (cursor < order.size()) {
            const int batch = static_cast<int>(
                std::min<size_t>(static_cast<size_t>(opts.batch_size), order.size() - cursor));
            std::vector<ImageLoss> losses(static_cast<size_t>(batch));
            const int workers = std::min(nt, batch);
            std::vector<std::thread> pool;
            std::atomic<int> next{0};
            for (int t = 0; t < workers; ++t)
                pool.emplace_back([&] {
                    for (int b = next.fetch_add(1); b < batch; b = next.fetch_add(1))
                        image_backward(model, train_scenes[order[cursor + static_cast<size_t>(b)]],
                                       opts, losses[static_cast<size_t>(b)]);
                });
            for (auto& th : pool) th.join();

            model.params().zero_grads();
            const real inv_b = 1.0 / batch;
            for (auto& [name, p] : model.params().entries()) {
                real* g = p.grad();
                for (int b = 0; b < batch; ++b) {
                    const std::vector<real>* buf = losses[static_cast<size_t>(b)].sink.find(*p.node());
                    if (!buf) continue;
                    for (std::int64_t i = 0; i < p.size(); ++i)
                        g[i] += inv_b * (*buf)[static_cast<size_t>(i)];
                }
            }
            optimizer.step();

            for (const auto& l : losses) {
                if (!std::isfinite(l.total)) throw std::runtime_error("train: non-finite loss");
                stats.loss += l.total;
                stats.cls += l.cls;
                stats.mask += l.mask;
            }
            cursor += static_cast<size_t>(batch);
        }
        stats.loss /= static_cast<real>(order.size());
        stats.cls /= static_cast<real>(order.size());
        stats.mask /= static_cast<real>(order.size());

        if (!val_scenes.empty()) {
            EvalReport rep = evaluate_model(model, val_scenes, opts.eval_threshold, nt);
            stats.ap = rep.ap;
            stats.ap50 = rep.ap50;
        }
        stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.push_back(stats);
        if (log)
            (*log) << "epoch=" << stats.epoch << " loss=" << stats.loss << " cls=" << stats.cls
                   << " mask=" << stats.mask << " val_ap=" << stats.ap
                   << " val_ap50=" << stats.ap50 << " seconds=" << stats.seconds << "\n"
                   << std::flush;
        if (opts.early_stop_ap50 > 0 && stats.ap50 >= opts.early_stop_ap50) break;
    }
    return history;
}

}  // namespace isda
