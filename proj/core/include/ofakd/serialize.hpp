#pragma once

#include <filesystem>
#include <iosfwd>

#include "ofakd/tensor.hpp"

// OFAT tensor files: magic "OFAT", u8 dtype (0 = f32, 1 = f64), u8 rank,
// rank x u32 extents, then row-major element data. All little-endian.
namespace ofakd {

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t);

// Reads either dtype and converts to T.
template <typename T>
Tensor<T> read_tensor(std::istream& is);

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

DType stored_dtype(const std::filesystem::path& path);

// Little-endian primitives shared with the dataset format.
namespace io {
void write_u8(std::ostream& os, std::uint8_t v);
void write_u16(std::ostream& os, std::uint16_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
std::uint8_t read_u8(std::istream& is, const char* what);
std::uint16_t read_u16(std::istream& is, const char* what);
std::uint32_t read_u32(std::istream& is, const char* what);
float read_f32(std::istream& is, const char* what);
double read_f64(std::istream& is, const char* what);
// Bulk variants; one stream call per array.
void read_f32_array(std::istream& is, float* out, std::size_t n, const char* what);
void read_f64_array(std::istream& is, double* out, std::size_t n, const char* what);
void read_u16_array(std::istream& is, std::uint16_t* out, std::size_t n, const char* what);
void write_f32_array(std::ostream& os, const float* v, std::size_t n);
void write_f64_array(std::ostream& os, const double* v, std::size_t n);
void expect_magic(std::istream& is, const char (&magic)[5]);
}  // namespace io

}  // namespace ofakd
