#include "isda/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

namespace isda {

namespace {

constexpr char kMagic[4] = {'I', 'S', 'D', 'A'};
constexpr unsigned char kVersion = 1;
constexpr unsigned char kTagF32 = 1;
constexpr unsigned char kTagF64 = 2;

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
}

double get_f64(std::istream& is) {
    std::uint64_t bits = get_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

float get_f32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, 4);
    os.put(static_cast<char>(kVersion));
    put_u64(os, params.entries().size());
    for (const auto& [name, t] : params.entries()) {
        put_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(kTagF64));
        put_u64(os, t.shape().size());
        for (int d : t.shape()) put_u64(os, static_cast<std::uint64_t>(d));
        for (real v : t.vec()) put_f64(os, v);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

void load_checkpoint(const std::string& path, ParamStore& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    const int version = is.get();
    if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version");

    const std::uint64_t count = get_u64(is);
    std::set<std::string> seen;
    for (std::uint64_t r = 0; r < count; ++r) {
        const std::uint64_t name_len = get_u64(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!is) throw std::runtime_error("checkpoint: truncated name");
        const int tag = is.get();
        if (tag != kTagF32 && tag != kTagF64)
            throw std::runtime_error("checkpoint: unknown dtype tag");
        const std::uint64_t rank = get_u64(is);
        std::vector<int> shape;
        std::uint64_t n = 1;
        for (std::uint64_t i = 0; i < rank; ++i) {
            const std::uint64_t d = get_u64(is);
            shape.push_back(static_cast<int>(d));
            n *= d;
        }
        Tensor* dst = params.find(name);
        if (!dst) throw std::runtime_error("checkpoint: unknown parameter: " + name);
        if (dst->shape() != shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        real* out = dst->data();
        for (std::uint64_t i = 0; i < n; ++i)
            out[i] = tag == kTagF64 ? get_f64(is) : static_cast<real>(get_f32(is));
        seen.insert(name);
    }
    if (seen.size() != params.entries().size())
        throw std::runtime_error("checkpoint: parameter set mismatch");
}

}  // namespace isda
