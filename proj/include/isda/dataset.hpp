#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "isda/matching.hpp"
#include "isda/tensor.hpp"

namespace isda {

constexpr int kNumClasses = 3;  // 0 circle, 1 rectangle, 2 triangle
const char* class_name(int class_id);

struct Scene {
    int id = 0;
    int h = 0, w = 0;
    std::vector<std::uint8_t> gray;  // 8-bit pixels, row-major
    std::vector<GroundTruthInstance> instances;
    std::vector<int> z_order;  // draw order per instance (occlusion record)

    Tensor image() const;  // [3,H,W] in [0,1], gray channel replicated
};

struct GenConfig {
    int image_size = 64;
    int min_instances = 1;
    int max_instances = 5;
    bool twin = false;  // two identical same-class shapes per image
};

/// Deterministic in (seed, image_id); independent of generation order.
Scene generate_scene(std::uint64_t seed, int image_id, const GenConfig& cfg);
std::vector<Scene> generate_scenes(int count, std::uint64_t seed, const GenConfig& cfg);

/// Writes images/img_NNNNNN.pgm plus annotations.json into `dir`.
void write_dataset(const std::string& dir, int count, std::uint64_t seed, const GenConfig& cfg);
std::vector<Scene> load_dataset(const std::string& dir);

/// Column-major run-length string; the first count is the leading zero run.
std::string rle_encode(const std::vector<std::uint8_t>& mask, int h, int w);
std::vector<std::uint8_t> rle_decode(const std::string& rle, int h, int w);

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& gray, int h, int w);
std::vector<std::uint8_t> read_pgm(const std::string& path, int& h, int& w);
void write_ppm(const std::string& path, const std::vector<std::uint8_t>& rgb, int h, int w);

}  // namespace isda
