#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dgrl/tensor.hpp"

namespace dgrl {

inline constexpr int kCifarExtent = 32;
inline constexpr std::size_t kCifarPixels = 3 * 32 * 32;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarPixels;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

/// Images stored as one contiguous NCHW float block.
struct Dataset {
    int channels = 3;
    int height = kCifarExtent;
    int width = kCifarExtent;
    int classes = 10;
    std::vector<float> pixels;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t sample_size() const { return static_cast<std::size_t>(channels) * height * width; }
    Shape batch_shape(std::size_t n) const { return {static_cast<int>(n), channels, height, width}; }

    /// The first n samples (all when n == 0 or n >= size).
    Dataset head(std::size_t n) const;
    Tensor gather(std::span<const std::size_t> indices) const;
    std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
};

/// Byte v maps to v / 127.5 - 1.
inline float cifar_pixel(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

/// Parses 3073-byte records. Throws DataError on a trailing partial record
/// (with its byte offset), on a label above 9, or, when expected_records is
/// nonzero, on a different record count.
Dataset parse_cifar10(std::span<const std::uint8_t> bytes, const std::string& source,
                      std::size_t expected_records = 0);
Dataset load_cifar10_file(const std::filesystem::path& path, std::size_t expected_records = kCifarRecordsPerFile);

enum class Split { train, test };
/// data_batch_1..5.bin (50000) or test_batch.bin (10000) under dir.
/// Missing files are DataError.
Dataset load_cifar10(const std::filesystem::path& dir, Split split);

/// Class-conditional patterns plus noise; learnable by small nets. The
/// patterns depend on seed only, the noise and order on (seed, stream), so
/// streams of one seed are splits of one task.
Dataset make_synthetic(std::size_t count, int classes, int channels, int extent, std::uint64_t seed,
                       std::uint64_t stream = 0);

/// Pad-4 random crop and random horizontal flip, in place on a batch.
/// Padding is 0 in the normalized range.
void augment_batch(Tensor& batch, std::mt19937_64& rng, int pad = 4);

/// Shuffled minibatch order; the last partial batch is kept.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size, std::mt19937_64& rng,
                                                    bool shuffle = true);

}  // namespace dgrl
