#include "chardiff/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "chardiff/nn.hpp"

namespace chardiff {

void write_u32(std::ostream& os, uint32_t x) {
    os.write(reinterpret_cast<const char*>(&x), 4);
}

uint32_t read_u32(std::istream& is) {
    uint32_t x = 0;
    is.read(reinterpret_cast<char*>(&x), 4);
    if (!is) throw std::runtime_error("read_u32: truncated stream");
    return x;
}

void write_f32_array(std::ostream& os, const std::vector<double>& v) {
    std::vector<float> buf(v.size());
    for (size_t i = 0; i < v.size(); ++i) buf[i] = static_cast<float>(v[i]);
    os.write(reinterpret_cast<const char*>(buf.data()), buf.size() * sizeof(float));
}

void read_f32_array(std::istream& is, std::vector<double>& v, size_t n) {
    std::vector<float> buf(n);
    is.read(reinterpret_cast<char*>(buf.data()), n * sizeof(float));
    if (!is) throw std::runtime_error("read_f32_array: truncated stream");
    v.resize(n);
    for (size_t i = 0; i < n; ++i) v[i] = buf[i];
}

void write_f64_array(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

void read_f64_array(std::istream& is, std::vector<double>& v, size_t n) {
    v.resize(n);
    is.read(reinterpret_cast<char*>(v.data()), n * sizeof(double));
    if (!is) throw std::runtime_error("read_f64_array: truncated stream");
}

void save_tensor_blob(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    write_f64_array(os, t.v);
    if (!os) throw std::runtime_error("write failed: " + path);
}

Tensor load_tensor_blob(const std::string& path, const std::vector<int>& shape) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("missing tensor blob: " + path);
    Tensor t(shape);
    read_f64_array(is, t.v, Tensor::numel_of(shape));
    return t;
}

namespace {

void png_chunk(std::string& out, const char* type, const std::string& data) {
    uint32_t len = static_cast<uint32_t>(data.size());
    unsigned char lenb[4] = {static_cast<unsigned char>(len >> 24),
                             static_cast<unsigned char>(len >> 16),
                             static_cast<unsigned char>(len >> 8),
                             static_cast<unsigned char>(len)};
    out.append(reinterpret_cast<char*>(lenb), 4);
    std::string body(type, 4);
    body += data;
    out += body;
    uint32_t crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                         static_cast<uInt>(body.size()));
    unsigned char crcb[4] = {static_cast<unsigned char>(crc >> 24),
                             static_cast<unsigned char>(crc >> 16),
                             static_cast<unsigned char>(crc >> 8),
                             static_cast<unsigned char>(crc)};
    out.append(reinterpret_cast<char*>(crcb), 4);
}

unsigned char to_byte(double x) {
    double c = std::clamp(x, 0.0, 1.0);
    return static_cast<unsigned char>(std::lround(c * 255.0));
}

void write_png(const std::string& path, int w, int h, int channels,
               const std::vector<unsigned char>& pixels) {
    std::string raw;
    raw.reserve(static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * channels));
    for (int y = 0; y < h; ++y) {
        raw.push_back('\0');  // filter type 0
        raw.append(reinterpret_cast<const char*>(&pixels[static_cast<size_t>(y) * w * channels]),
                   static_cast<size_t>(w) * channels);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw std::runtime_error("png: zlib compression failed");

    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    auto push_be32 = [&](uint32_t x) {
        ihdr.push_back(static_cast<char>(x >> 24));
        ihdr.push_back(static_cast<char>(x >> 16));
        ihdr.push_back(static_cast<char>(x >> 8));
        ihdr.push_back(static_cast<char>(x));
    };
    push_be32(static_cast<uint32_t>(w));
    push_be32(static_cast<uint32_t>(h));
    ihdr.push_back(8);                                    // bit depth
    ihdr.push_back(channels == 3 ? 2 : 0);                // color type
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    png_chunk(out, "IHDR", ihdr);
    png_chunk(out, "IDAT", std::string(reinterpret_cast<char*>(comp.data()), comp_len));
    png_chunk(out, "IEND", "");

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace

void write_png_rgb(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.shape[0] != 3)
        throw std::invalid_argument("write_png_rgb: (3,H,W) expected");
    int h = img.shape[1], w = img.shape[2];
    std::vector<unsigned char> px(static_cast<size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                px[(static_cast<size_t>(y) * w + x) * 3 + c] = to_byte(img.at3(c, y, x));
    write_png(path, w, h, 3, px);
}

void write_png_gray(const std::string& path, const Tensor& img) {
    if (img.rank() != 2) throw std::invalid_argument("write_png_gray: (H,W) expected");
    int h = img.shape[0], w = img.shape[1];
    std::vector<unsigned char> px(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) px[static_cast<size_t>(y) * w + x] = to_byte(img.at(y, x));
    write_png(path, w, h, 1, px);
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
}

uint64_t file_checksum(const std::string& path) {
    std::string data = read_text_file(path);
    return fnv1a(data.data(), data.size());
}

}  // namespace chardiff
