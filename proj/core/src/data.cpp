#include "ofakd/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "ofakd/rng.hpp"
#include "ofakd/serialize.hpp"

namespace ofakd {

void SyntheticSpec::validate() const {
    if (class_count < 2) throw ConfigError("data spec: class_count must be at least 2");
    if (class_count > 65535) throw ConfigError("data spec: class_count must fit in 16 bits");
    if (train_per_class == 0 || test_per_class == 0) {
        throw ConfigError("data spec: samples per class must be positive");
    }
    if (channels != 3) throw ConfigError("data spec: only 3-channel images are supported");
    if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0) {
        throw ConfigError("data spec: height and width must be positive multiples of 8 (patch sizes 4 and 8)");
    }
    if (height < 16 || width < 16) throw ConfigError("data spec: images must be at least 16x16");
    if (texture_scale < 2) throw ConfigError("data spec: texture_scale must be at least 2 pixels");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
        throw ConfigError("data spec: noise_std must be finite and non-negative");
    }
}

nlohmann::json spec_to_json(const SyntheticSpec& s) {
    return {{"class_count", s.class_count}, {"train_per_class", s.train_per_class},
            {"test_per_class", s.test_per_class}, {"channels", s.channels},
            {"height", s.height}, {"width", s.width},
            {"texture_scale", s.texture_scale}, {"noise_std", s.noise_std},
            {"seed", s.seed}};
}

SyntheticSpec spec_from_json(const nlohmann::json& j) {
    static const std::array<const char*, 9> known{"class_count", "train_per_class", "test_per_class",
                                                  "channels", "height", "width",
                                                  "texture_scale", "noise_std", "seed"};
    SyntheticSpec s;
    try {
        for (const auto& item : j.items()) {
            if (std::find_if(known.begin(), known.end(), [&](const char* k) { return item.key() == k; }) ==
                known.end()) {
                throw ConfigError("data spec: unknown field '" + item.key() + "'");
            }
        }
        s.class_count = j.value("class_count", s.class_count);
        s.train_per_class = j.value("train_per_class", s.train_per_class);
        s.test_per_class = j.value("test_per_class", s.test_per_class);
        s.channels = j.value("channels", s.channels);
        s.height = j.value("height", s.height);
        s.width = j.value("width", s.width);
        s.texture_scale = j.value("texture_scale", s.texture_scale);
        s.noise_std = j.value("noise_std", s.noise_std);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("data spec: ") + e.what());
    }
    s.validate();
    return s;
}

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

namespace {

bool inside_shape(std::size_t shape, double u, double v, double r) {
    switch (shape) {
        case 0: return u * u + v * v <= r * r;
        case 1: return std::max(std::abs(u), std::abs(v)) <= 0.8 * r;
        case 2: return v <= 0.5 * r && v >= -r + std::sqrt(3.0) * std::abs(u);
        default: {
            const double arm = 0.3 * r;
            return (std::abs(u) <= arm && std::abs(v) <= r) || (std::abs(v) <= arm && std::abs(u) <= r);
        }
    }
}

bool texture_on(std::size_t texture, std::size_t x, std::size_t y, std::size_t px, std::size_t py,
                std::size_t half) {
    const std::size_t a = (x + px) / half;
    const std::size_t b = (y + py) / half;
    switch (texture) {
        case 0: return b % 2 == 0;
        case 1: return a % 2 == 0;
        case 2: return (a + b) % 2 == 0;
        default: return ((x + y + px) / half) % 2 == 0;
    }
}

void render(const SyntheticSpec& spec, std::size_t cls, Rng& rng, float* out) {
    const std::size_t h = spec.height;
    const std::size_t w = spec.width;
    const std::size_t plane = h * w;
    const double extent = static_cast<double>(std::min(h, w));

    std::array<double, 3> background{};
    std::array<double, 3> bright{};
    for (auto& c : background) c = rng.uniform(0.0, 0.35);
    for (auto& c : bright) c = rng.uniform(0.55, 1.0);
    const double radius = extent * rng.uniform(0.25, 0.34);
    const double cx = static_cast<double>(w) / 2.0 + rng.uniform(-0.125, 0.125) * extent;
    const double cy = static_cast<double>(h) / 2.0 + rng.uniform(-0.125, 0.125) * extent;
    const double angle = rng.uniform(-0.35, 0.35);
    const std::size_t px = rng.index(spec.texture_scale);
    const std::size_t py = rng.index(spec.texture_scale);
    const std::size_t half = spec.texture_scale / 2;
    const double cs = std::cos(angle);
    const double sn = std::sin(angle);

    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double dx = static_cast<double>(x) + 0.5 - cx;
            const double dy = static_cast<double>(y) + 0.5 - cy;
            const double u = cs * dx + sn * dy;
            const double v = -sn * dx + cs * dy;
            const bool in = inside_shape(spec.shape_of(cls), u, v, radius);
            const bool on = in && texture_on(spec.texture_of(cls), x, y, px, py, half);
            for (std::size_t c = 0; c < 3; ++c) {
                double value = background[c];
                if (in) value = on ? bright[c] : 0.35 * bright[c];
                value += rng.normal(0.0, spec.noise_std);
                out[c * plane + y * w + x] = static_cast<float>(std::clamp(value, 0.0, 1.0));
            }
        }
    }
}

}  // namespace

Dataset generate_split(const SyntheticSpec& spec, Split split) {
    spec.validate();
    const std::size_t per_class = split == Split::train ? spec.train_per_class : spec.test_per_class;
    const std::size_t n = per_class * spec.class_count;
    const std::size_t sample = 3 * spec.height * spec.width;
    const std::uint64_t base = substream_seed(spec.seed, "data");

    std::vector<float> pixels(n * sample);
    Dataset ds;
    ds.labels.resize(n);
    ds.class_count = spec.class_count;
    ds.split = split;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = i % spec.class_count;
        ds.labels[i] = cls;
        Rng rng = Rng::stream(base, to_string(split), i);
        render(spec, cls, rng, pixels.data() + i * sample);
    }
    ds.images = Tensor<float>({n, 3, spec.height, spec.width}, std::move(pixels));
    return ds;
}

DatasetPair generate(const SyntheticSpec& spec) {
    return {generate_split(spec, Split::train), generate_split(spec, Split::test)};
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch, bool shuffle) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (!shuffle || n < 2) return order;
    Rng rng = Rng::stream(seed, "shuffle", epoch);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
    return order;
}

Dataset shuffle_labels(const Dataset& ds, std::uint64_t seed) {
    Dataset out = ds;
    const auto order = epoch_order(ds.size(), substream_seed(seed, "label-shuffle"), 0, true);
    for (std::size_t i = 0; i < ds.size(); ++i) out.labels[i] = ds.labels[order[i]];
    return out;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    if (!ds.images.defined() || ds.images.rank() != 4 || ds.images.dim(1) != 3) {
        throw DimensionError("save_dataset: images must be [N x 3 x H x W]");
    }
    if (ds.labels.size() != ds.images.dim(0)) throw DimensionError("save_dataset: label count mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw_io("cannot open for writing", path.string());
    os.write("OFAD", 4);
    io::write_u32(os, 1);
    io::write_u32(os, static_cast<std::uint32_t>(ds.size()));
    io::write_u32(os, static_cast<std::uint32_t>(ds.class_count));
    io::write_u32(os, static_cast<std::uint32_t>(ds.height()));
    io::write_u32(os, static_cast<std::uint32_t>(ds.width()));
    io::write_f32_array(os, ds.images.data().data(), ds.images.numel());
    for (auto y : ds.labels) {
        if (y >= ds.class_count) throw DomainError("save_dataset: label out of range");
        io::write_u16(os, static_cast<std::uint16_t>(y));
    }
    if (!os) throw_io("write failed", path.string());
}

Dataset load_dataset(const std::filesystem::path& path, Split split) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw_io("cannot open dataset", path.string());
    try {
        io::expect_magic(is, "OFAD");
        const auto version = io::read_u32(is, "OFAD version");
        if (version != 1) throw FormatError("OFAD: unsupported version " + std::to_string(version));
        const std::size_t n = io::read_u32(is, "OFAD header");
        const std::size_t c = io::read_u32(is, "OFAD header");
        const std::size_t h = io::read_u32(is, "OFAD header");
        const std::size_t w = io::read_u32(is, "OFAD header");
        if (n == 0 || c < 2 || h == 0 || w == 0) throw FormatError("OFAD: invalid header values");
        // Check the payload length before allocating anything proportional to it.
        const auto header_end = is.tellg();
        is.seekg(0, std::ios::end);
        const auto available = static_cast<std::uint64_t>(is.tellg() - header_end);
        is.seekg(header_end);
        const std::uint64_t needed = static_cast<std::uint64_t>(n) * 3 * h * w * 4 + static_cast<std::uint64_t>(n) * 2;
        if (available < needed) {
            throw FormatError("truncated file: OFAD payload has " + std::to_string(available) + " bytes, expected " +
                              std::to_string(needed));
        }
        std::vector<float> pixels(n * 3 * h * w);
        io::read_f32_array(is, pixels.data(), pixels.size(), "OFAD pixels");
        for (const float v : pixels) {
            if (!std::isfinite(v)) throw FormatError("OFAD: non-finite pixel value");
        }
        Dataset ds;
        ds.labels.resize(n);
        std::vector<std::uint16_t> raw_labels(n);
        io::read_u16_array(is, raw_labels.data(), n, "OFAD labels");
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t y = raw_labels[i];
            ds.labels[i] = y;
            if (y >= c) {
                throw FormatError("OFAD: label " + std::to_string(y) + " out of range for " + std::to_string(c) +
                                  " classes");
            }
        }
        ds.images = Tensor<float>({n, 3, h, w}, std::move(pixels));
        ds.class_count = c;
        ds.split = split;
        return ds;
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

template <typename T>
Batch<T> gather_batch(const Dataset& ds, std::span<const std::size_t> indices) {
    const std::size_t sample = ds.images.numel() / ds.size();
    const auto src = ds.images.data();
    std::vector<T> pixels(indices.size() * sample);
    Batch<T> b;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t k = indices[i];
        if (k >= ds.size()) throw DomainError("gather_batch: index " + std::to_string(k) + " out of range");
        std::copy(src.begin() + static_cast<std::ptrdiff_t>(k * sample),
                  src.begin() + static_cast<std::ptrdiff_t>((k + 1) * sample),
                  pixels.begin() + static_cast<std::ptrdiff_t>(i * sample));
        b.labels.push_back(ds.labels[k]);
    }
    Shape shape = ds.images.shape();
    shape[0] = indices.size();
    b.images = Tensor<T>(std::move(shape), std::move(pixels));
    b.indices.assign(indices.begin(), indices.end());
    return b;
}

template <typename T>
BatchStream<T>::BatchStream(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, bool shuffle,
                            std::size_t epoch)
    : ds_(&ds), batch_size_(batch_size), order_(epoch_order(ds.size(), seed, epoch, shuffle)) {
    if (batch_size == 0) throw DomainError("batch_size must be at least 1");
}

template <typename T>
bool BatchStream<T>::next(Batch<T>& out) {
    if (cursor_ >= order_.size()) return false;
    const std::size_t len = std::min(batch_size_, order_.size() - cursor_);
    out = gather_batch<T>(*ds_, std::span<const std::size_t>(order_.data() + cursor_, len));
    cursor_ += len;
    return true;
}

template Batch<float> gather_batch<float>(const Dataset&, std::span<const std::size_t>);
template Batch<double> gather_batch<double>(const Dataset&, std::span<const std::size_t>);
template class BatchStream<float>;
template class BatchStream<double>;

}  // namespace ofakd
