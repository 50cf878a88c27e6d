#pragma once

#include <string>
#include <vector>

#include "isda/config.hpp"
#include "isda/metrics.hpp"

namespace isda {

struct AblationCell {
    std::string axis;  // "position" or "resolution"
    std::string cell;  // e.g. "mp=1,kp=1" or "1/4"
    std::uint64_t seed = 0;
    EvalReport report;
};

/// Four-cell MP/KP grid on twin-object scenes, one short training run per
/// (cell, seed). Datasets are regenerated in memory per seed.
std::vector<AblationCell> run_position_ablation(const RunConfig& cfg, std::ostream* log);

/// Mask-resolution grid on plain scenes; default strides {8,4,2}.
std::vector<AblationCell> run_resolution_ablation(const RunConfig& cfg, std::ostream* log,
                                                  const std::vector<int>& strides = {8, 4, 2});

void write_ablation_csv(const std::string& path, const std::vector<AblationCell>& cells);

/// Per-seed ordering votes, each true when the ordering held for the
/// majority of seeds.
struct PositionVerdict {
    bool both_best = false;     // (MP=1,KP=1) highest AP50 of the four cells
    bool mp_beats_base = false; // (MP=1,KP=0) above (MP=0,KP=0)
};
PositionVerdict judge_position(const std::vector<AblationCell>& cells);

struct ResolutionVerdict {
    bool quarter_ap_ge_eighth = false;  // AP(1/4) >= AP(1/8)
    bool eighth_best_ls_ratio = false;  // AP_L/AP_S highest at 1/8
};
ResolutionVerdict judge_resolution(const std::vector<AblationCell>& cells);

}  // namespace isda
