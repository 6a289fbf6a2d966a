#ifndef CHARDIFF_IO_HPP
#define CHARDIFF_IO_HPP

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "chardiff/tensor.hpp"

namespace chardiff {

// All binary formats are little-endian (native on every supported target).

void write_u32(std::ostream& os, uint32_t x);
uint32_t read_u32(std::istream& is);
void write_f32_array(std::ostream& os, const std::vector<double>& v);
void read_f32_array(std::istream& is, std::vector<double>& v, size_t n);
void write_f64_array(std::ostream& os, const std::vector<double>& v);
void read_f64_array(std::istream& is, std::vector<double>& v, size_t n);

// Raw f64 tensor blob; shape is tracked externally (checkpoint manifest).
void save_tensor_blob(const std::string& path, const Tensor& t);
Tensor load_tensor_blob(const std::string& path, const std::vector<int>& shape);

// 8-bit PNG output. rgb: (3,H,W) in [0,1]; gray: (H,W) in [0,1].
void write_png_rgb(const std::string& path, const Tensor& img);
void write_png_gray(const std::string& path, const Tensor& img);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

uint64_t file_checksum(const std::string& path);

}  // namespace chardiff

#endif
