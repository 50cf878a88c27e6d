#include "isda/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace isda {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer for " + key + ": '" + v + "'");
    }
}

real to_real(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const real r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad number for " + key + ": '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": '" + v + "'");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const std::uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad seed for " + key + ": '" + v + "'");
    }
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(to_int(key, item));
    }
    return out;
}

int parse_mfr_scale(const std::string& v) {
    if (v == "1/2" || v == "0.5") return 2;
    if (v == "1/4" || v == "0.25") return 4;
    if (v == "1/8" || v == "0.125") return 8;
    throw std::invalid_argument("config: mfr.scale must be one of 1/2, 1/4, 1/8");
}

}  // namespace

void RunConfig::apply(const std::string& key, const std::string& value) {
    if (key == "input.size") input_size = to_int(key, value);
    else if (key == "backbone.base_width") model.base_width = to_int(key, value);
    else if (key == "neck.width") model.width = to_int(key, value);
    else if (key == "transformer.heads") model.heads = to_int(key, value);
    else if (key == "transformer.points") model.points = to_int(key, value);
    else if (key == "transformer.enc_layers") model.enc_layers = to_int(key, value);
    else if (key == "transformer.dec_layers") model.dec_layers = to_int(key, value);
    else if (key == "transformer.num_queries") model.num_queries = to_int(key, value);
    else if (key == "mfr.scale") model.mfr_stride = parse_mfr_scale(value);
    else if (key == "head.score_threshold") score_threshold = to_real(key, value);
    else if (key == "head.mfr_positions") model.mfr_positions = to_bool(key, value);
    else if (key == "head.kernel_positions") model.kernel_positions = to_bool(key, value);
    else if (key == "loss.lambda_cls") lambda_cls = to_real(key, value);
    else if (key == "loss.lambda_mask") lambda_mask = to_real(key, value);
    else if (key == "loss.noobj_weight") noobj_weight = to_real(key, value);
    else if (key == "train.epochs") epochs = to_int(key, value);
    else if (key == "train.lr") lr = to_real(key, value);
    else if (key == "train.lr_drop_epochs") lr_drop_epochs = to_int_list(key, value);
    else if (key == "train.batch_size") batch_size = to_int(key, value);
    else if (key == "train.seed") seed = to_u64(key, value);
    else if (key == "train.threads") threads = to_int(key, value);
    else if (key == "train.early_stop_ap50") early_stop_ap50 = to_real(key, value);
    else if (key == "data.train_dir") train_dir = value;
    else if (key == "data.val_dir") val_dir = value;
    else if (key == "out.dir") out_dir = value;
    else if (key == "ablate.epochs") ablate_epochs = to_int(key, value);
    else if (key == "ablate.lr_drop_epochs") ablate_lr_drops = to_int_list(key, value);
    else if (key == "ablate.train_count") ablate_train_count = to_int(key, value);
    else if (key == "ablate.val_count") ablate_val_count = to_int(key, value);
    else if (key == "ablate.seeds") ablate_seeds = to_int(key, value);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open " + path);
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: missing '=' at line " + std::to_string(lineno));
        cfg.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    model.validate();
    if (input_size < 32 || input_size % 32 != 0)
        throw std::invalid_argument("config: input.size must be a positive multiple of 32");
    if (score_threshold < 0 || score_threshold > 1)
        throw std::invalid_argument("config: head.score_threshold must lie in [0,1]");
    if (lambda_cls < 0 || lambda_mask < 0)
        throw std::invalid_argument("config: loss weights must be non-negative");
    if (noobj_weight <= 0) throw std::invalid_argument("config: loss.noobj_weight must be > 0");
    if (epochs < 1) throw std::invalid_argument("config: train.epochs must be >= 1");
    if (lr <= 0) throw std::invalid_argument("config: train.lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("config: train.batch_size must be >= 1");
    if (threads < 0) throw std::invalid_argument("config: train.threads must be >= 0");
    if (ablate_epochs < 1 || ablate_train_count < 1 || ablate_val_count < 1 || ablate_seeds < 1)
        throw std::invalid_argument("config: ablate.* values must be >= 1");
}

}  // namespace isda
