#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ofakd/tensor.hpp"

namespace ofakd {

// Procedural classification data. Class c draws global shape c % 4
// (disk, square, triangle, cross) filled with local texture (c + c / 4) % 4
// (horizontal, vertical, checker, diagonal), so for C > 4 neither cue
// alone separates the classes.
struct SyntheticSpec {
    std::size_t class_count = 8;
    std::size_t train_per_class = 256;
    std::size_t test_per_class = 64;
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t texture_scale = 4;  // stripe period in pixels
    double noise_std = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t shape_of(std::size_t cls) const { return cls % 4; }
    std::size_t texture_of(std::size_t cls) const { return (cls + cls / 4) % 4; }
};

nlohmann::json spec_to_json(const SyntheticSpec& spec);
SyntheticSpec spec_from_json(const nlohmann::json& j);

enum class Split { train, test };
std::string to_string(Split split);

struct Dataset {
    Tensor<float> images;  // [N x 3 x H x W], values in [0, 1]
    std::vector<std::size_t> labels;
    std::size_t class_count = 0;
    Split split = Split::train;

    std::size_t size() const { return labels.size(); }
    std::size_t height() const { return images.dim(2); }
    std::size_t width() const { return images.dim(3); }
};

struct DatasetPair {
    Dataset train;
    Dataset test;
};

DatasetPair generate(const SyntheticSpec& spec);
// One split only; samples are keyed by (seed, split, index).
Dataset generate_split(const SyntheticSpec& spec, Split split);

// Same images with labels permuted by a seeded shuffle (learnability control).
Dataset shuffle_labels(const Dataset& ds, std::uint64_t seed);

// OFAD: magic "OFAD", u32 version = 1, u32 N, u32 C, u32 H, u32 W,
// N x 3HW f32 pixels, N u16 labels, little-endian.
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path, Split split = Split::train);

// Sample order for one epoch; a seeded Fisher-Yates permutation per
// (seed, epoch) when shuffling, identity otherwise.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch, bool shuffle);

template <typename T>
struct Batch {
    Tensor<T> images;
    std::vector<std::size_t> labels;
    std::vector<std::size_t> indices;
};

template <typename T>
Batch<T> gather_batch(const Dataset& ds, std::span<const std::size_t> indices);

// Iterates one epoch in batch_size chunks; the last short batch is kept.
template <typename T>
class BatchStream {
public:
    BatchStream(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, bool shuffle,
                std::size_t epoch = 0);

    bool next(Batch<T>& out);
    std::size_t batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

private:
    const Dataset* ds_;
    std::size_t batch_size_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

}  // namespace ofakd
