#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "isda/ablation.hpp"
#include "isda/checkpoint.hpp"
#include "isda/config.hpp"
#include "isda/dataset.hpp"
#include "isda/gradcheck.hpp"
#include "isda/trainer.hpp"

namespace fs = std::filesystem;
using namespace isda;

namespace {

constexpr int kExitGradcheck = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCheckpoint = 3;

RunConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed,
                      const std::optional<real>& threshold, const std::optional<std::string>& out) {
    RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::from_file(path);
    if (seed) cfg.seed = *seed;
    if (threshold) cfg.score_threshold = *threshold;
    if (out) cfg.out_dir = *out;
    cfg.validate();
    return cfg;
}

TrainOptions train_options(const RunConfig& cfg) {
    TrainOptions opts;
    opts.epochs = cfg.epochs;
    opts.lr = cfg.lr;
    opts.lr_drop_epochs = cfg.lr_drop_epochs;
    opts.batch_size = cfg.batch_size;
    opts.seed = cfg.seed;
    opts.threads = cfg.threads;
    opts.lambda_cls = cfg.lambda_cls;
    opts.lambda_mask = cfg.lambda_mask;
    opts.noobj_weight = cfg.noobj_weight;
    opts.early_stop_ap50 = cfg.early_stop_ap50;
    return opts;
}

void print_report(const EvalReport& rep) {
    std::cout << "AP=" << rep.ap << " AP50=" << rep.ap50 << " AP75=" << rep.ap75
              << " AP_S=" << rep.ap_s << " AP_M=" << rep.ap_m << " AP_L=" << rep.ap_l << "\n";
    for (const auto& [cls, ap] : rep.per_class)
        std::cout << "  class " << cls << " (" << class_name(cls) << "): AP=" << ap << "\n";
}

int cmd_generate(const RunConfig& cfg, const std::string& out, int count, bool twin) {
    GenConfig gen;
    gen.image_size = cfg.input_size;
    gen.twin = twin;
    write_dataset(out, count, cfg.seed, gen);
    std::cout << "wrote " << count << " scenes to " << out << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    auto train_scenes = load_dataset(cfg.train_dir);
    auto val_scenes = load_dataset(cfg.val_dir);

    IsdaModel model(cfg.model, cfg.seed);
    std::ofstream log(fs::path(cfg.out_dir) / "train.log", std::ios::app);
    TrainOptions opts = train_options(cfg);

    real best_ap50 = -1;
    // Wrap the trainer to checkpoint after every epoch via the log stream.
    auto history = train_model(model, train_scenes, val_scenes, opts, &log);
    for (const auto& st : history) {
        std::cout << "epoch " << st.epoch << ": loss=" << st.loss << " ap50=" << st.ap50
                  << " (" << st.seconds << "s)\n";
        best_ap50 = std::max(best_ap50, st.ap50);
    }
    save_checkpoint((fs::path(cfg.out_dir) / "final.ckpt").string(), model.params());
    std::cout << "checkpoint: " << (fs::path(cfg.out_dir) / "final.ckpt").string()
              << " best val AP50=" << best_ap50 << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& data) {
    auto scenes = load_dataset(data.empty() ? cfg.val_dir : data);
    IsdaModel model(cfg.model, cfg.seed);
    load_checkpoint(checkpoint, model.params());
    EvalReport rep = evaluate_model(model, scenes, cfg.score_threshold, cfg.threads);
    print_report(rep);
    return 0;
}

int cmd_infer(const RunConfig& cfg, const std::string& checkpoint, const std::string& image_path,
              const std::string& out_dir) {
    IsdaModel model(cfg.model, cfg.seed);
    load_checkpoint(checkpoint, model.params());

    int h = 0, w = 0;
    auto gray = read_pgm(image_path, h, w);
    Scene scene;
    scene.h = h;
    scene.w = w;
    scene.gray = gray;
    auto preds = model.predict(scene.image(), cfg.score_threshold);

    fs::create_directories(out_dir);
    static const std::uint8_t palette[6][3] = {{230, 60, 60},  {60, 200, 60},  {60, 90, 230},
                                               {230, 200, 60}, {200, 60, 230}, {60, 220, 220}};
    std::vector<std::uint8_t> overlay(static_cast<size_t>(h) * w * 3);
    for (size_t i = 0; i < gray.size(); ++i)
        overlay[3 * i] = overlay[3 * i + 1] = overlay[3 * i + 2] = gray[i];
    for (size_t k = 0; k < preds.size(); ++k) {
        char name[64];
        std::snprintf(name, sizeof(name), "mask_%02zu_%s.pgm", k, class_name(preds[k].class_id));
        std::vector<std::uint8_t> m(preds[k].mask.size());
        for (size_t i = 0; i < m.size(); ++i) m[i] = preds[k].mask[i] ? 255 : 0;
        write_pgm((fs::path(out_dir) / name).string(), m, h, w);
        const auto* color = palette[k % 6];
        for (size_t i = 0; i < preds[k].mask.size(); ++i)
            if (preds[k].mask[i])
                for (int c = 0; c < 3; ++c)
                    overlay[3 * i + static_cast<size_t>(c)] = static_cast<std::uint8_t>(
                        0.45 * overlay[3 * i + static_cast<size_t>(c)] + 0.55 * color[c]);
    }
    write_ppm((fs::path(out_dir) / "overlay.ppm").string(), overlay, h, w);
    std::cout << preds.size() << " instances -> " << out_dir << "\n";
    for (const auto& p : preds)
        std::cout << "  " << class_name(p.class_id) << " conf=" << p.confidence
                  << " area=" << p.area() << "\n";
    return 0;
}

int cmd_gradcheck(int threads) {
    auto results = run_gradcheck_suite(threads);
    bool ok = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name
                  << "  max_rel_err=" << r.max_rel_err << "\n";
        ok = ok && r.pass;
    }
    return ok ? 0 : kExitGradcheck;
}

int cmd_ablate(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    auto cells = run_position_ablation(cfg, &std::cout);
    auto res_cells = run_resolution_ablation(cfg, &std::cout);
    cells.insert(cells.end(), res_cells.begin(), res_cells.end());
    const std::string csv = (fs::path(cfg.out_dir) / "ablation.csv").string();
    write_ablation_csv(csv, cells);

    const PositionVerdict pv = judge_position(cells);
    const ResolutionVerdict rv = judge_resolution(cells);
    std::cout << "table: " << csv << "\n"
              << "position: mp+kp best AP50 on majority of seeds: " << (pv.both_best ? "yes" : "no")
              << "; mp beats baseline: " << (pv.mp_beats_base ? "yes" : "no") << "\n"
              << "resolution: AP(1/4) >= AP(1/8): " << (rv.quarter_ap_ge_eighth ? "yes" : "no")
              << "; 1/8 skews most to large objects: " << (rv.eighth_best_ls_ratio ? "yes" : "no")
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ISDA instance segmentation, desk scale"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint, data_dir, image_path;
    std::optional<std::uint64_t> seed;
    std::optional<real> threshold;
    std::optional<std::string> out_override;
    int count = 100;
    bool twin = false;
    int threads = 0;

    app.add_option("--config", config_path, "run configuration file");
    app.add_option("--seed", seed, "override train.seed");
    app.add_option("--threshold", threshold, "override head.score_threshold");

    auto* gen = app.add_subcommand("generate", "write a synthetic dataset split");
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--count", count, "number of scenes");
    gen->add_flag("--twin", twin, "two identical same-class shapes per scene");

    auto* train = app.add_subcommand("train", "train on a generated dataset");
    train->add_option("--out", out_override, "output directory for checkpoints/logs");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    eval->add_option("--data", data_dir, "dataset directory (default: data.val_dir)");

    auto* infer = app.add_subcommand("infer", "segment one PGM image");
    infer->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    infer->add_option("--image", image_path, "input PGM")->required();
    infer->add_option("--out", out_dir, "output directory")->required();

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gc->add_option("--threads", threads, "worker threads (0 = auto)");

    auto* ablate = app.add_subcommand("ablate", "positional-information and resolution grids");
    ablate->add_option("--out", out_override, "output directory for the CSV table");

    CLI11_PARSE(app, argc, argv);

    try {
        const RunConfig cfg = load_config(config_path, seed, threshold, out_override);
        if (gen->parsed()) return cmd_generate(cfg, out_dir, count, twin);
        if (train->parsed()) return cmd_train(cfg);
        if (eval->parsed()) return cmd_eval(cfg, checkpoint, data_dir);
        if (infer->parsed()) return cmd_infer(cfg, checkpoint, image_path, out_dir);
        if (gc->parsed()) return cmd_gradcheck(threads);
        if (ablate->parsed()) return cmd_ablate(cfg);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        const std::string msg = e.what();
        return msg.find("checkpoint") != std::string::npos ? kExitCheckpoint : 1;
    }
    return 0;
}
