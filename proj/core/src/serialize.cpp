#include "ofakd/serialize.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

namespace ofakd {

namespace io {

namespace {

template <typename U>
void write_le(std::ostream& os, U v) {
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    }
    os.write(bytes.data(), bytes.size());
}

template <typename U>
U read_le(std::istream& is, const char* what) {
    std::array<unsigned char, sizeof(U)> bytes{};
    is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (is.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw FormatError(std::string("truncated file while reading ") + what);
    }
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
    return v;
}

template <typename U>
void read_le_array(std::istream& is, U* out, std::size_t n, const char* what) {
    std::vector<unsigned char> bytes(n * sizeof(U));
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (is.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw FormatError(std::string("truncated file while reading ") + what);
    }
    for (std::size_t k = 0; k < n; ++k) {
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[k * sizeof(U) + i]) << (8 * i);
        out[k] = v;
    }
}

template <typename U>
void write_le_array(std::ostream& os, const U* v, std::size_t n) {
    std::vector<char> bytes(n * sizeof(U));
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            bytes[k * sizeof(U) + i] = static_cast<char>((v[k] >> (8 * i)) & 0xFF);
        }
    }
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

void read_f32_array(std::istream& is, float* out, std::size_t n, const char* what) {
    std::vector<std::uint32_t> raw(n);
    read_le_array(is, raw.data(), n, what);
    for (std::size_t k = 0; k < n; ++k) out[k] = std::bit_cast<float>(raw[k]);
}
void read_f64_array(std::istream& is, double* out, std::size_t n, const char* what) {
    std::vector<std::uint64_t> raw(n);
    read_le_array(is, raw.data(), n, what);
    for (std::size_t k = 0; k < n; ++k) out[k] = std::bit_cast<double>(raw[k]);
}
void read_u16_array(std::istream& is, std::uint16_t* out, std::size_t n, const char* what) {
    read_le_array(is, out, n, what);
}
void write_f32_array(std::ostream& os, const float* v, std::size_t n) {
    std::vector<std::uint32_t> raw(n);
    for (std::size_t k = 0; k < n; ++k) raw[k] = std::bit_cast<std::uint32_t>(v[k]);
    write_le_array(os, raw.data(), n);
}
void write_f64_array(std::ostream& os, const double* v, std::size_t n) {
    std::vector<std::uint64_t> raw(n);
    for (std::size_t k = 0; k < n; ++k) raw[k] = std::bit_cast<std::uint64_t>(v[k]);
    write_le_array(os, raw.data(), n);
}

void write_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }
void write_u16(std::ostream& os, std::uint16_t v) { write_le(os, v); }
void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_f32(std::ostream& os, float v) { write_le(os, std::bit_cast<std::uint32_t>(v)); }
void write_f64(std::ostream& os, double v) { write_le(os, std::bit_cast<std::uint64_t>(v)); }

std::uint8_t read_u8(std::istream& is, const char* what) { return read_le<std::uint8_t>(is, what); }
std::uint16_t read_u16(std::istream& is, const char* what) { return read_le<std::uint16_t>(is, what); }
std::uint32_t read_u32(std::istream& is, const char* what) { return read_le<std::uint32_t>(is, what); }
float read_f32(std::istream& is, const char* what) {
    return std::bit_cast<float>(read_le<std::uint32_t>(is, what));
}
double read_f64(std::istream& is, const char* what) {
    return std::bit_cast<double>(read_le<std::uint64_t>(is, what));
}

void expect_magic(std::istream& is, const char (&magic)[5]) {
    char got[4] = {};
    is.read(got, 4);
    if (is.gcount() != 4) throw FormatError(std::string("truncated file: missing magic ") + magic);
    if (std::string_view(got, 4) != std::string_view(magic, 4)) {
        throw FormatError("bad magic '" + std::string(got, 4) + "', expected '" + magic + "'");
    }
}

}  // namespace io

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
    if (t.rank() > 255) throw DimensionError("OFAT supports rank <= 255");
    os.write("OFAT", 4);
    io::write_u8(os, static_cast<std::uint8_t>(dtype_of<T>()));
    io::write_u8(os, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) io::write_u32(os, static_cast<std::uint32_t>(d));
    if constexpr (std::is_same_v<T, float>) {
        io::write_f32_array(os, t.data().data(), t.numel());
    } else {
        io::write_f64_array(os, t.data().data(), t.numel());
    }
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
    io::expect_magic(is, "OFAT");
    const auto code = io::read_u8(is, "OFAT dtype");
    if (code > 1) throw FormatError("OFAT: unknown dtype code " + std::to_string(code));
    const auto rank = io::read_u8(is, "OFAT rank");
    Shape shape(rank);
    for (auto& d : shape) {
        d = io::read_u32(is, "OFAT extents");
        if (d == 0) throw FormatError("OFAT: zero extent");
    }
    const std::size_t n = numel_of(shape);
    std::vector<T> data(n);
    if (code == 0) {
        std::vector<float> raw(n);
        io::read_f32_array(is, raw.data(), n, "OFAT payload");
        std::copy(raw.begin(), raw.end(), data.begin());
    } else {
        std::vector<double> raw(n);
        io::read_f64_array(is, raw.data(), n, "OFAT payload");
        std::copy(raw.begin(), raw.end(), data.begin());
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw_io("cannot open for writing", path.string());
    write_tensor(os, t);
    if (!os) throw_io("write failed", path.string());
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw_io("cannot open", path.string());
    try {
        return read_tensor<T>(is);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

DType stored_dtype(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw_io("cannot open", path.string());
    io::expect_magic(is, "OFAT");
    const auto code = io::read_u8(is, "OFAT dtype");
    if (code > 1) throw FormatError("OFAT: unknown dtype code " + std::to_string(code));
    return static_cast<DType>(code);
}

template void write_tensor<float>(std::ostream&, const Tensor<float>&);
template void write_tensor<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor<float>(std::istream&);
template Tensor<double> read_tensor<double>(std::istream&);
template void save_tensor<float>(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor<double>(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor<float>(const std::filesystem::path&);
template Tensor<double> load_tensor<double>(const std::filesystem::path&);

}  // namespace ofakd
