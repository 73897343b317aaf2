#include "gradiseg/image.hpp"

#include "gradiseg/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace gradiseg {

std::uint8_t quantize_channel(double v) {
    const double c = std::clamp(std::isnan(v) ? 0.0 : v, 0.0, 1.0);
    // nearbyint honours the default round-half-to-even mode.
    return static_cast<std::uint8_t>(std::nearbyint(c * 255.0));
}

namespace {

struct Header {
    std::string magic;
    int width = 0;
    int height = 0;
    int maxval = 0;
    std::size_t data_offset = 0;
};

Header parse_header(const std::vector<char>& bytes, const std::string& path) {
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto token = [&] {
        skip_space();
        std::string t;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) &&
               bytes[pos] != '#') {
            t.push_back(bytes[pos++]);
        }
        if (t.empty()) {
            throw ValidationError("truncated PNM header in " + path);
        }
        return t;
    };
    auto number = [&] {
        const std::string t = token();
        if (!std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
            throw ValidationError("bad PNM header field '" + t + "' in " + path);
        }
        return std::stoi(t);
    };
    Header h;
    h.magic = token();
    h.width = number();
    h.height = number();
    h.maxval = number();
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw ValidationError("truncated PNM header in " + path);
    }
    h.data_offset = pos + 1;
    if (h.width < 1 || h.height < 1 || h.maxval < 1 || h.maxval > 255) {
        throw ValidationError("unsupported PNM geometry or maxval in " + path);
    }
    return h;
}

std::vector<char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& path, const std::string& header, const std::uint8_t* data,
          std::size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << header;
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

}  // namespace

void write_ppm(const Image& img, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes(img.data.size());
    std::transform(img.data.begin(), img.data.end(), bytes.begin(), quantize_channel);
    spit(path, "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n",
         bytes.data(), bytes.size());
}

Image read_ppm(const std::filesystem::path& path) {
    const std::vector<char> bytes = slurp(path);
    const Header h = parse_header(bytes, path.string());
    if (h.magic != "P6") {
        throw ValidationError(path.string() + " is not a binary PPM (P6)");
    }
    Image img(h.width, h.height);
    if (bytes.size() - h.data_offset < img.data.size()) {
        throw ValidationError("truncated PPM payload in " + path.string());
    }
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        img.data[i] = static_cast<unsigned char>(bytes[h.data_offset + i]) / static_cast<double>(h.maxval);
    }
    return img;
}

void write_pgm(const Mask& mask, const std::filesystem::path& path) {
    spit(path, "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n",
         mask.data.data(), mask.data.size());
}

Mask read_pgm(const std::filesystem::path& path) {
    const std::vector<char> bytes = slurp(path);
    const Header h = parse_header(bytes, path.string());
    if (h.magic != "P5") {
        throw ValidationError(path.string() + " is not a binary PGM (P5)");
    }
    Mask mask(h.width, h.height);
    if (bytes.size() - h.data_offset < mask.data.size()) {
        throw ValidationError("truncated PGM payload in " + path.string());
    }
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
        mask.data[i] = static_cast<std::uint8_t>(bytes[h.data_offset + i]);
    }
    return mask;
}

}  // namespace gradiseg
