#include "gradiseg/scene_io.hpp"

#include "gradiseg/error.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace gradiseg {

namespace {

constexpr char kMagic[5] = {'G', 'S', 'E', 'G', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
        }
    }
    void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
    void i32(std::int32_t v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
    const std::vector<char>& bytes() const { return bytes_; }

private:
    std::vector<char> bytes_;
};

class Reader {
public:
    explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) {
            throw ValidationError("GSEG1 file truncated payload");
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }
    double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
    std::int32_t i32() { return std::bit_cast<std::int32_t>(u32()); }
    bool starts_with_magic() {
        if (bytes_.size() < sizeof(kMagic) || std::memcmp(bytes_.data(), kMagic, sizeof(kMagic)) != 0) {
            return false;
        }
        pos_ = sizeof(kMagic);
        return true;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_scene(const GaussianCloud& cloud, const ClassifierHead& head,
                const std::filesystem::path& path) {
    cloud.validate();
    if (head.dim != cloud.dim()) {
        throw ValidationError("head dimension does not match the cloud encodings");
    }
    if (head.weights.size() != head.classes * head.dim || head.biases.size() != head.classes) {
        throw ValidationError("head arrays do not match its shape");
    }
    if (!head.finite()) {
        throw ValidationError("head has non-finite entries");
    }
    const std::size_t n = cloud.size();
    Writer w;
    w.raw(kMagic, sizeof(kMagic));
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(n));
    w.u32(static_cast<std::uint32_t>(cloud.dim()));
    w.u32(static_cast<std::uint32_t>(head.classes));
    for (std::size_t i = 0; i < n; ++i) for (int k = 0; k < 3; ++k) w.f32(cloud.positions[i][k]);
    for (std::size_t i = 0; i < n; ++i) for (int k = 0; k < 3; ++k) w.f32(cloud.scales[i][k]);
    for (std::size_t i = 0; i < n; ++i) for (int k = 0; k < 4; ++k) w.f32(cloud.rotations[i][k]);
    for (std::size_t i = 0; i < n; ++i) w.f32(cloud.opacities[i]);
    for (std::size_t i = 0; i < n; ++i) for (int k = 0; k < 3; ++k) w.f32(cloud.colors[i][k]);
    for (double e : cloud.encodings) w.f32(e);
    for (std::int32_t g : cloud.group_id) w.i32(g);
    for (double v : head.weights) w.f32(v);
    for (double v : head.biases) w.f32(v);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

std::pair<GaussianCloud, ClassifierHead> load_scene(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));
    if (!r.starts_with_magic()) {
        throw ValidationError("bad magic: not a GSEG1 file");
    }
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw ValidationError("unsupported GSEG1 version " + std::to_string(version));
    }
    const std::size_t n = r.u32();
    const std::size_t dim = r.u32();
    const std::size_t classes = r.u32();
    if (dim == 0 || classes == 0) {
        throw ValidationError("GSEG1 header has a zero encoding dimension or class count");
    }
    const std::size_t expected = 4 * (n * (3 + 3 + 4 + 1 + 3 + dim + 1) + classes * dim + classes);
    if (r.remaining() < expected) {
        throw ValidationError("GSEG1 file truncated payload");
    }

    GaussianCloud cloud(dim);
    std::vector<Gaussian> rows(n);
    for (auto& g : rows) for (int k = 0; k < 3; ++k) g.position[k] = r.f32();
    for (auto& g : rows) for (int k = 0; k < 3; ++k) g.scale[k] = r.f32();
    for (auto& g : rows) for (int k = 0; k < 4; ++k) g.rotation[k] = r.f32();
    for (auto& g : rows) g.opacity = r.f32();
    for (auto& g : rows) for (int k = 0; k < 3; ++k) g.color[k] = r.f32();
    for (auto& g : rows) {
        g.encoding.resize(dim);
        for (auto& e : g.encoding) e = r.f32();
    }
    for (std::size_t i = 0; i < n; ++i) {
        Gaussian& g = rows[i];
        const double len = g.rotation.norm();
        const double drift = std::abs(len - 1.0);
        if (!(drift <= 1e-4)) {
            throw ValidationError("rotation quaternion of gaussian " + std::to_string(i) +
                                  " is not unit length");
        }
        // Values already inside the unit-norm invariant are kept bit-exact.
        if (drift > 1e-6) {
            g.rotation /= len;
        }
        cloud.push_back(g);
    }
    for (std::size_t i = 0; i < n; ++i) {
        cloud.group_id[i] = r.i32();
        if (cloud.group_id[i] < -1 || cloud.group_id[i] >= static_cast<std::int32_t>(classes)) {
            throw ValidationError("group id out of range (gaussian " + std::to_string(i) + ")");
        }
    }
    ClassifierHead head(classes, dim);
    for (auto& v : head.weights) v = r.f32();
    for (auto& v : head.biases) v = r.f32();
    if (!head.finite()) {
        throw ValidationError("head has non-finite entries");
    }
    cloud.validate();
    return {std::move(cloud), std::move(head)};
}

}  // namespace gradiseg
