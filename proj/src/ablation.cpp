#include "isda/ablation.hpp"

#include <fstream>
#include <map>
#include <ostream>
#include <stdexcept>

#include "isda/trainer.hpp"

namespace isda {

namespace {

TrainOptions ablate_train_options(const RunConfig& cfg, std::uint64_t seed) {
    TrainOptions opts;
    opts.epochs = cfg.ablate_epochs;
    opts.lr = cfg.lr;
    opts.lr_drop_epochs = cfg.ablate_lr_drops;
    opts.batch_size = cfg.batch_size;
    opts.seed = seed;
    opts.threads = cfg.threads;
    opts.lambda_cls = cfg.lambda_cls;
    opts.lambda_mask = cfg.lambda_mask;
    opts.noobj_weight = cfg.noobj_weight;
    return opts;
}

EvalReport train_and_eval(const RunConfig& cfg, const ModelConfig& mcfg, std::uint64_t seed,
                          const std::vector<Scene>& train_scenes,
                          const std::vector<Scene>& val_scenes, std::ostream* log) {
    IsdaModel model(mcfg, seed);
    TrainOptions opts = ablate_train_options(cfg, seed);
    train_model(model, train_scenes, val_scenes, opts, nullptr);
    EvalReport rep = evaluate_model(model, val_scenes, opts.eval_threshold, cfg.threads);
    if (log)
        (*log) << "  seed=" << seed << " ap=" << rep.ap << " ap50=" << rep.ap50
               << " ap_s=" << rep.ap_s << " ap_l=" << rep.ap_l << "\n";
    return rep;
}

}  // namespace

std::vector<AblationCell> run_position_ablation(const RunConfig& cfg, std::ostream* log) {
    std::vector<AblationCell> cells;
    GenConfig gen;
    gen.image_size = cfg.input_size;
    gen.twin = true;
    for (int s = 0; s < cfg.ablate_seeds; ++s) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(s);
        auto train_scenes = generate_scenes(cfg.ablate_train_count, Rng::mix(seed, 101), gen);
        auto val_scenes = generate_scenes(cfg.ablate_val_count, Rng::mix(seed, 202), gen);
        for (int mp = 0; mp <= 1; ++mp)
            for (int kp = 0; kp <= 1; ++kp) {
                ModelConfig mcfg = cfg.model;
                mcfg.mfr_positions = mp != 0;
                mcfg.kernel_positions = kp != 0;
                AblationCell cell;
                cell.axis = "position";
                cell.cell = "mp=" + std::to_string(mp) + ",kp=" + std::to_string(kp);
                cell.seed = seed;
                if (log) (*log) << "position " << cell.cell << " seed " << seed << "\n";
                cell.report = train_and_eval(cfg, mcfg, seed, train_scenes, val_scenes, log);
                cells.push_back(std::move(cell));
            }
    }
    return cells;
}

std::vector<AblationCell> run_resolution_ablation(const RunConfig& cfg, std::ostream* log,
                                                  const std::vector<int>& strides) {
    std::vector<AblationCell> cells;
    GenConfig gen;
    gen.image_size = cfg.input_size;
    for (int s = 0; s < cfg.ablate_seeds; ++s) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(s);
        auto train_scenes = generate_scenes(cfg.ablate_train_count, Rng::mix(seed, 303), gen);
        auto val_scenes = generate_scenes(cfg.ablate_val_count, Rng::mix(seed, 404), gen);
        for (int stride : strides) {
            ModelConfig mcfg = cfg.model;
            mcfg.mfr_stride = stride;
            AblationCell cell;
            cell.axis = "resolution";
            cell.cell = "1/" + std::to_string(stride);
            cell.seed = seed;
            if (log) (*log) << "resolution " << cell.cell << " seed " << seed << "\n";
            cell.report = train_and_eval(cfg, mcfg, seed, train_scenes, val_scenes, log);
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationCell>& cells) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "axis,cell,seed,ap,ap50,ap75,ap_s,ap_m,ap_l\n";
    for (const auto& c : cells)
        os << c.axis << "," << c.cell << "," << c.seed << "," << c.report.ap << ","
           << c.report.ap50 << "," << c.report.ap75 << "," << c.report.ap_s << ","
           << c.report.ap_m << "," << c.report.ap_l << "\n";
}

namespace {

// cell name -> (seed -> report)
std::map<std::string, std::map<std::uint64_t, EvalReport>> index_cells(
    const std::vector<AblationCell>& cells, const std::string& axis) {
    std::map<std::string, std::map<std::uint64_t, EvalReport>> m;
    for (const auto& c : cells)
        if (c.axis == axis) m[c.cell][c.seed] = c.report;
    return m;
}

}  // namespace

PositionVerdict judge_position(const std::vector<AblationCell>& cells) {
    auto by_cell = index_cells(cells, "position");
    PositionVerdict v;
    int n = 0, best_votes = 0, mp_votes = 0;
    for (const auto& [seed, rep11] : by_cell["mp=1,kp=1"]) {
        const auto& r00 = by_cell["mp=0,kp=0"].at(seed);
        const auto& r10 = by_cell["mp=1,kp=0"].at(seed);
        const auto& r01 = by_cell["mp=0,kp=1"].at(seed);
        ++n;
        if (rep11.ap50 > r00.ap50 && rep11.ap50 > r10.ap50 && rep11.ap50 > r01.ap50) ++best_votes;
        if (r10.ap50 > r00.ap50) ++mp_votes;
    }
    v.both_best = n > 0 && 2 * best_votes > n;
    v.mp_beats_base = n > 0 && 2 * mp_votes > n;
    return v;
}

ResolutionVerdict judge_resolution(const std::vector<AblationCell>& cells) {
    auto by_cell = index_cells(cells, "resolution");
    ResolutionVerdict v;
    int n = 0, ap_votes = 0, ratio_votes = 0;
    for (const auto& [seed, rep4] : by_cell["1/4"]) {
        const auto& r8 = by_cell["1/8"].at(seed);
        ++n;
        if (rep4.ap >= r8.ap) ++ap_votes;
        const real eps = 1e-9;
        const real ratio8 = r8.ap_l / (r8.ap_s + eps);
        const real ratio4 = rep4.ap_l / (rep4.ap_s + eps);
        real ratio2 = -1;
        auto it2 = by_cell.find("1/2");
        if (it2 != by_cell.end()) {
            const auto& r2 = it2->second.at(seed);
            ratio2 = r2.ap_l / (r2.ap_s + eps);
        }
        if (ratio8 >= ratio4 && ratio8 >= ratio2) ++ratio_votes;
    }
    v.quarter_ap_ge_eighth = n > 0 && 2 * ap_votes > n;
    v.eighth_best_ls_ratio = n > 0 && 2 * ratio_votes > n;
    return v;
}

}  // namespace isda
