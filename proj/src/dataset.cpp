#include "isda/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "isda/rng.hpp"

namespace isda {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

const char* class_name(int class_id) {
    switch (class_id) {
        case 0: return "circle";
        case 1: return "rectangle";
        case 2: return "triangle";
        default: throw std::invalid_argument("unknown class id");
    }
}

Tensor Scene::image() const {
    Tensor t = Tensor::zeros({3, h, w});
    real* p = t.data();
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (std::int64_t i = 0; i < plane; ++i) {
        const real v = gray[static_cast<size_t>(i)] / 255.0;
        p[i] = v;
        p[plane + i] = v;
        p[2 * plane + i] = v;
    }
    return t;
}

namespace {

struct ShapeDef {
    int class_id = 0;
    real size = 5.0;    // radius / half-extent scale
    real aspect = 1.0;  // rectangles only
    int orientation = 0;  // triangles only, 0..3
    real intensity = 0.6;
};

std::vector<std::uint8_t> rasterize(const ShapeDef& s, real cx, real cy, int h, int w) {
    std::vector<std::uint8_t> mask(static_cast<size_t>(h) * w, 0);
    if (s.class_id == 0) {
        const real r2 = s.size * s.size;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const real dx = x - cx, dy = y - cy;
                if (dx * dx + dy * dy <= r2) mask[static_cast<size_t>(y * w + x)] = 1;
            }
    } else if (s.class_id == 1) {
        const real ax = s.size * s.aspect, ay = s.size / s.aspect;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (std::abs(x - cx) <= ax && std::abs(y - cy) <= ay)
                    mask[static_cast<size_t>(y * w + x)] = 1;
    } else {
        // Isoceles triangle pointing up/right/down/left.
        real vx[3], vy[3];
        const real sz = s.size;
        switch (s.orientation) {
            case 0: vx[0] = cx; vy[0] = cy - sz; vx[1] = cx - sz; vy[1] = cy + sz; vx[2] = cx + sz; vy[2] = cy + sz; break;
            case 1: vx[0] = cx + sz; vy[0] = cy; vx[1] = cx - sz; vy[1] = cy - sz; vx[2] = cx - sz; vy[2] = cy + sz; break;
            case 2: vx[0] = cx; vy[0] = cy + sz; vx[1] = cx - sz; vy[1] = cy - sz; vx[2] = cx + sz; vy[2] = cy - sz; break;
            default: vx[0] = cx - sz; vy[0] = cy; vx[1] = cx + sz; vy[1] = cy - sz; vx[2] = cx + sz; vy[2] = cy + sz; break;
        }
        auto edge = [](real ax, real ay, real bx, real by, real px, real py) {
            return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
        };
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const real e0 = edge(vx[0], vy[0], vx[1], vy[1], x, y);
                const real e1 = edge(vx[1], vy[1], vx[2], vy[2], x, y);
                const real e2 = edge(vx[2], vy[2], vx[0], vy[0], x, y);
                if ((e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0))
                    mask[static_cast<size_t>(y * w + x)] = 1;
            }
    }
    return mask;
}

int mask_area(const std::vector<std::uint8_t>& m) {
    int a = 0;
    for (auto v : m) a += v ? 1 : 0;
    return a;
}

int overlap(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    int o = 0;
    for (size_t i = 0; i < a.size(); ++i) o += (a[i] && b[i]) ? 1 : 0;
    return o;
}

ShapeDef sample_shape(Rng& rng, int image_size) {
    ShapeDef s;
    s.class_id = static_cast<int>(rng.uniform_int(0, kNumClasses - 1));
    const real max_size = image_size / 5.0;
    s.size = rng.uniform(3.0, max_size);
    s.aspect = rng.uniform(0.6, 1.6);
    s.orientation = static_cast<int>(rng.uniform_int(0, 3));
    s.intensity = rng.uniform(0.35, 0.95);
    return s;
}

real shape_extent(const ShapeDef& s) {
    if (s.class_id == 1) return s.size * std::max(s.aspect, 1.0 / s.aspect);
    return s.size;
}

}  // namespace

Scene generate_scene(std::uint64_t seed, int image_id, const GenConfig& cfg) {
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(image_id)));
    const int n = cfg.image_size;
    Scene scene;
    scene.id = image_id;
    scene.h = n;
    scene.w = n;

    struct Placed {
        ShapeDef def;
        std::vector<std::uint8_t> mask;
    };
    std::vector<Placed> placed;

    auto place = [&](const ShapeDef& def, bool allow_overlap) -> bool {
        const real ext = shape_extent(def) + 1.0;
        if (2 * ext >= n - 2) return false;
        for (int attempt = 0; attempt < 40; ++attempt) {
            const real cx = rng.uniform(ext, n - 1 - ext);
            const real cy = rng.uniform(ext, n - 1 - ext);
            auto mask = rasterize(def, cx, cy, n, n);
            const int area = mask_area(mask);
            if (area < 16) continue;
            bool ok = true;
            for (const auto& p : placed) {
                const int ov = overlap(mask, p.mask);
                if (allow_overlap) {
                    // Cap occlusion so both twins stay mostly visible.
                    if (ov > 0.3 * std::min(area, mask_area(p.mask))) ok = false;
                } else if (ov > 0) {
                    ok = false;
                }
            }
            if (!ok) continue;
            placed.push_back({def, std::move(mask)});
            return true;
        }
        return false;
    };

    if (cfg.twin) {
        // Two identical shapes; appearance carries no cue to tell them apart.
        for (int attempt = 0; attempt < 50 && placed.size() != 2; ++attempt) {
            placed.clear();
            ShapeDef def = sample_shape(rng, n);
            if (!place(def, true)) continue;
            place(def, true);
        }
        if (placed.size() != 2) throw std::runtime_error("twin scene generation failed");
    } else {
        const int want = static_cast<int>(rng.uniform_int(cfg.min_instances, cfg.max_instances));
        for (int i = 0; i < want; ++i) place(sample_shape(rng, n), false);
        if (placed.empty()) {
            // Guarantee at least one instance with a small centered shape.
            ShapeDef def = sample_shape(rng, n);
            def.size = 4.0;
            auto mask = rasterize(def, n / 2.0, n / 2.0, n, n);
            placed.push_back({def, std::move(mask)});
        }
    }

    // Render with later instances on top, then quantize once.
    std::vector<real> canvas(static_cast<size_t>(n) * n, 0.08);
    for (const auto& p : placed)
        for (size_t i = 0; i < canvas.size(); ++i)
            if (p.mask[i]) canvas[i] = p.def.intensity;
    scene.gray.resize(canvas.size());
    for (size_t i = 0; i < canvas.size(); ++i) {
        const real noisy = std::clamp(canvas[i] + 0.015 * rng.normal(), 0.0, 1.0);
        scene.gray[i] = static_cast<std::uint8_t>(std::lround(noisy * 255.0));
    }

    for (size_t i = 0; i < placed.size(); ++i) {
        GroundTruthInstance gt;
        gt.class_id = placed[i].def.class_id;
        gt.h = n;
        gt.w = n;
        gt.mask = placed[i].mask;
        scene.instances.push_back(std::move(gt));
        scene.z_order.push_back(static_cast<int>(i));
    }
    return scene;
}

std::vector<Scene> generate_scenes(int count, std::uint64_t seed, const GenConfig& cfg) {
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) scenes.push_back(generate_scene(seed, i, cfg));
    return scenes;
}

std::string rle_encode(const std::vector<std::uint8_t>& mask, int h, int w) {
    if (static_cast<int>(mask.size()) != h * w)
        throw std::invalid_argument("rle_encode: mask size mismatch");
    std::ostringstream os;
    int run = 0;
    std::uint8_t cur = 0;  // runs alternate starting from zero
    bool first = true;
    for (int x = 0; x < w; ++x)
        for (int y = 0; y < h; ++y) {
            const std::uint8_t v = mask[static_cast<size_t>(y * w + x)] ? 1 : 0;
            if (v == cur) {
                ++run;
            } else {
                os << (first ? "" : " ") << run;
                first = false;
                cur = v;
                run = 1;
            }
        }
    os << (first ? "" : " ") << run;
    return os.str();
}

std::vector<std::uint8_t> rle_decode(const std::string& rle, int h, int w) {
    std::vector<std::uint8_t> mask(static_cast<size_t>(h) * w, 0);
    std::istringstream is(rle);
    long long total = 0, run = 0;
    std::uint8_t cur = 0;
    std::string token;
    while (is >> token) {
        size_t pos = 0;
        try {
            run = std::stoll(token, &pos);
        } catch (const std::exception&) {
            throw std::invalid_argument("rle_decode: malformed count '" + token + "'");
        }
        if (pos != token.size() || run < 0)
            throw std::invalid_argument("rle_decode: malformed count '" + token + "'");
        for (long long i = 0; i < run; ++i) {
            const long long idx = total + i;
            if (idx >= static_cast<long long>(h) * w)
                throw std::invalid_argument("rle_decode: runs exceed mask size");
            const int x = static_cast<int>(idx / h), y = static_cast<int>(idx % h);
            mask[static_cast<size_t>(y * w + x)] = cur;
        }
        total += run;
        cur = cur ? 0 : 1;
    }
    if (total != static_cast<long long>(h) * w)
        throw std::invalid_argument("rle_decode: runs do not cover the mask");
    return mask;
}

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& gray, int h, int w) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

std::vector<std::uint8_t> read_pgm(const std::string& path, int& h, int& w) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::string magic;
    int maxval = 0;
    is >> magic >> w >> h >> maxval;
    if (magic != "P5" || maxval != 255) throw std::runtime_error("unsupported PGM: " + path);
    is.get();  // single whitespace after header
    std::vector<std::uint8_t> gray(static_cast<size_t>(h) * w);
    is.read(reinterpret_cast<char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
    if (!is) throw std::runtime_error("truncated PGM: " + path);
    return gray;
}

void write_ppm(const std::string& path, const std::vector<std::uint8_t>& rgb, int h, int w) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

void write_dataset(const std::string& dir, int count, std::uint64_t seed, const GenConfig& cfg) {
    if (count < 1) throw std::invalid_argument("write_dataset: count must be >= 1");
    fs::create_directories(fs::path(dir) / "images");

    ordered_json root;
    root["seed"] = seed;
    root["twin"] = cfg.twin;
    root["image_size"] = cfg.image_size;
    root["images"] = ordered_json::array();
    for (int i = 0; i < count; ++i) {
        Scene s = generate_scene(seed, i, cfg);
        char name[32];
        std::snprintf(name, sizeof(name), "img_%06d.pgm", i);
        write_pgm((fs::path(dir) / "images" / name).string(), s.gray, s.h, s.w);

        ordered_json img;
        img["id"] = s.id;
        img["file"] = std::string("images/") + name;
        img["size"] = {s.h, s.w};
        img["instances"] = ordered_json::array();
        for (size_t k = 0; k < s.instances.size(); ++k) {
            const auto& inst = s.instances[k];
            ordered_json j;
            j["class_id"] = inst.class_id;
            j["rle"] = rle_encode(inst.mask, inst.h, inst.w);
            j["area"] = inst.area();
            j["z"] = s.z_order[k];
            img["instances"].push_back(std::move(j));
        }
        root["images"].push_back(std::move(img));
    }
    std::ofstream os(fs::path(dir) / "annotations.json");
    if (!os) throw std::runtime_error("cannot write annotations in " + dir);
    os << root.dump(1) << "\n";
}

std::vector<Scene> load_dataset(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "annotations.json");
    if (!is) throw std::runtime_error("cannot open annotations in " + dir);
    ordered_json root = ordered_json::parse(is);

    std::vector<Scene> scenes;
    for (const auto& img : root.at("images")) {
        Scene s;
        s.id = img.at("id").get<int>();
        s.h = img.at("size")[0].get<int>();
        s.w = img.at("size")[1].get<int>();
        int h = 0, w = 0;
        s.gray = read_pgm((fs::path(dir) / img.at("file").get<std::string>()).string(), h, w);
        if (h != s.h || w != s.w) throw std::runtime_error("dataset: image size mismatch");
        for (const auto& j : img.at("instances")) {
            GroundTruthInstance gt;
            gt.class_id = j.at("class_id").get<int>();
            gt.h = s.h;
            gt.w = s.w;
            gt.mask = rle_decode(j.at("rle").get<std::string>(), gt.h, gt.w);
            if (gt.area() != j.at("area").get<int>())
                throw std::runtime_error("dataset: area mismatch in annotations");
            s.instances.push_back(std::move(gt));
            s.z_order.push_back(j.value("z", static_cast<int>(s.z_order.size())));
        }
        scenes.push_back(std::move(s));
    }
    return scenes;
}

}  // namespace isda
