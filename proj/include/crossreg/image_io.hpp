#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "crossreg/types.hpp"

namespace crossreg {

// Grayscale raster in world orientation: row 0 is the SOUTH (lowest-y) row. Image
// files store the top row first, so readers/writers flip vertically.
struct GrayImage {
    int cols = 0;
    int rows = 0;
    std::vector<std::uint8_t> values;  // row-major, row 0 south

    std::uint8_t at(int col, int row) const {
        return values[static_cast<std::size_t>(row) * cols + col];
    }
    std::uint8_t& at(int col, int row) {
        return values[static_cast<std::size_t>(row) * cols + col];
    }
};

namespace detail {

inline int pnm_next_token(std::istream& in) {
    // Skips whitespace and '#' comments, returns the next integer.
    while (true) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v;
    if (!(in >> v)) throw std::runtime_error("malformed PGM header");
    return v;
}

}  // namespace detail

inline GrayImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5" && magic != "P2") throw std::runtime_error("not a PGM file: " + path);
    const int cols = detail::pnm_next_token(in);
    const int rows = detail::pnm_next_token(in);
    const int maxval = detail::pnm_next_token(in);
    if (cols <= 0 || rows <= 0 || maxval <= 0 || maxval > 255)
        throw std::runtime_error("unsupported PGM geometry: " + path);

    GrayImage img;
    img.cols = cols;
    img.rows = rows;
    img.values.resize(static_cast<std::size_t>(cols) * rows);
    if (magic == "P5") {
        in.get();  // single whitespace after maxval
        std::vector<std::uint8_t> raw(img.values.size());
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (!in) throw std::runtime_error("truncated PGM: " + path);
        for (int r = 0; r < rows; ++r)
            std::memcpy(&img.values[static_cast<std::size_t>(rows - 1 - r) * cols],
                        &raw[static_cast<std::size_t>(r) * cols], cols);
    } else {
        for (int r = rows - 1; r >= 0; --r)
            for (int c = 0; c < cols; ++c)
                img.at(c, r) = static_cast<std::uint8_t>(detail::pnm_next_token(in));
    }
    return img;
}

inline void write_pgm(const GrayImage& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "P5\n" << img.cols << " " << img.rows << "\n255\n";
    for (int r = img.rows - 1; r >= 0; --r)
        out.write(reinterpret_cast<const char*>(&img.values[static_cast<std::size_t>(r) * img.cols]),
                  img.cols);
    if (!out) throw std::runtime_error("write failed: " + path);
}

// Minimal PNG reader for 8-bit grayscale or palette images, non-interlaced. Palette
// entries map to their index, which is how labeled masks are stored. Anything fancier
// is rejected with a clear error.
inline GrayImage read_png_gray(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0)
        throw std::runtime_error("not a PNG file: " + path);

    auto be32 = [&](std::size_t off) {
        return (static_cast<std::uint32_t>(file[off]) << 24) |
               (static_cast<std::uint32_t>(file[off + 1]) << 16) |
               (static_cast<std::uint32_t>(file[off + 2]) << 8) |
               static_cast<std::uint32_t>(file[off + 3]);
    };

    std::uint32_t width = 0, height = 0;
    int bit_depth = 0, color_type = -1;
    std::vector<std::uint8_t> idat;
    std::size_t off = 8;
    while (off + 8 <= file.size()) {
        const std::uint32_t len = be32(off);
        const std::string type(reinterpret_cast<const char*>(&file[off + 4]), 4);
        const std::size_t data = off + 8;
        if (data + len > file.size()) throw std::runtime_error("truncated PNG: " + path);
        if (type == "IHDR") {
            width = be32(data);
            height = be32(data + 4);
            bit_depth = file[data + 8];
            color_type = file[data + 9];
            if (file[data + 12] != 0)
                throw std::runtime_error("interlaced PNG not supported: " + path);
        } else if (type == "IDAT") {
            idat.insert(idat.end(), file.begin() + data, file.begin() + data + len);
        } else if (type == "IEND") {
            break;
        }
        off = data + len + 4;  // skip CRC
    }
    if (width == 0 || height == 0) throw std::runtime_error("missing IHDR: " + path);
    if (bit_depth != 8 || (color_type != 0 && color_type != 3))
        throw std::runtime_error("only 8-bit gray or palette PNG supported: " + path);

    const std::size_t stride = width;  // one byte per pixel for both supported types
    std::vector<std::uint8_t> raw(height * (stride + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw std::runtime_error("PNG inflate failed: " + path);

    GrayImage img;
    img.cols = static_cast<int>(width);
    img.rows = static_cast<int>(height);
    img.values.resize(static_cast<std::size_t>(width) * height);
    std::vector<std::uint8_t> prev(stride, 0), cur(stride, 0);
    for (std::uint32_t r = 0; r < height; ++r) {
        const std::uint8_t filter = raw[r * (stride + 1)];
        const std::uint8_t* src = &raw[r * (stride + 1) + 1];
        for (std::uint32_t c = 0; c < stride; ++c) {
            const int a = c > 0 ? cur[c - 1] : 0;
            const int b = prev[c];
            const int cc = c > 0 ? prev[c - 1] : 0;
            int v = src[c];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: {
                    const int p = a + b - cc;
                    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - cc);
                    v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : cc);
                    break;
                }
                default: throw std::runtime_error("bad PNG filter byte: " + path);
            }
            cur[c] = static_cast<std::uint8_t>(v & 0xff);
        }
        // Flip vertically into world orientation.
        std::memcpy(&img.values[static_cast<std::size_t>(height - 1 - r) * width], cur.data(),
                    stride);
        std::swap(prev, cur);
    }
    return img;
}

inline GrayImage read_mask_image(const std::string& path) {
    const auto dot = path.find_last_of('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "png" || ext == "PNG") return read_png_gray(path);
    return read_pgm(path);
}

}  // namespace crossreg
