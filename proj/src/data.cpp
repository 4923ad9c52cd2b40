#include "dgrl/data.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>

#include "dgrl/errors.hpp"

namespace dgrl {

Dataset Dataset::head(std::size_t n) const {
    if (n == 0 || n >= size()) return *this;
    Dataset d = *this;
    d.labels.resize(n);
    d.pixels.resize(n * sample_size());
    return d;
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
    Tensor out(batch_shape(indices.size()));
    const std::size_t ss = sample_size();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size()) throw UsageError("sample index out of range");
        std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(indices[i] * ss), ss, out.data() + i * ss);
    }
    return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(labels.at(i));
    return out;
}

Dataset parse_cifar10(std::span<const std::uint8_t> bytes, const std::string& source, std::size_t expected_records) {
    const std::size_t records = bytes.size() / kCifarRecordBytes;
    if (bytes.size() % kCifarRecordBytes != 0) {
        throw DataError(source + ": truncated record at byte offset " + std::to_string(records * kCifarRecordBytes) +
                        " (" + std::to_string(bytes.size()) + " bytes total)");
    }
    if (expected_records != 0 && records != expected_records) {
        throw DataError(source + ": expected " + std::to_string(expected_records) + " records, found " +
                        std::to_string(records));
    }
    Dataset d;
    d.labels.resize(records);
    d.pixels.resize(records * kCifarPixels);
    for (std::size_t r = 0; r < records; ++r) {
        const std::size_t off = r * kCifarRecordBytes;
        if (bytes[off] > 9) {
            throw DataError(source + ": label " + std::to_string(bytes[off]) + " out of range at byte offset " +
                            std::to_string(off));
        }
        d.labels[r] = bytes[off];
        float* dst = d.pixels.data() + r * kCifarPixels;
        for (std::size_t i = 0; i < kCifarPixels; ++i) dst[i] = cifar_pixel(bytes[off + 1 + i]);
    }
    return d;
}

Dataset load_cifar10_file(const std::filesystem::path& path, std::size_t expected_records) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_cifar10(bytes, path.string(), expected_records);
}

Dataset load_cifar10(const std::filesystem::path& dir, Split split) {
    std::vector<std::string> files;
    if (split == Split::train) {
        for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
    } else {
        files.push_back("test_batch.bin");
    }
    Dataset all;
    for (const auto& f : files) {
        const auto path = dir / f;
        if (!std::filesystem::exists(path)) throw DataError("missing CIFAR-10 file " + path.string());
        Dataset part = load_cifar10_file(path);
        all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
        all.pixels.insert(all.pixels.end(), part.pixels.begin(), part.pixels.end());
    }
    return all;
}

Dataset make_synthetic(std::size_t count, int classes, int channels, int extent, std::uint64_t seed,
                       std::uint64_t stream) {
    if (classes < 1 || channels < 1 || extent < 1) throw ConfigError("synthetic dataset needs positive dimensions");
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> noise(0.0f, 0.5f);
    std::uniform_real_distribution<float> unit(-1.0f, 1.0f);
    Dataset d;
    d.channels = channels;
    d.height = d.width = extent;
    d.classes = classes;
    const std::size_t ss = d.sample_size();
    // one smooth prototype per class
    std::vector<std::vector<float>> proto(static_cast<std::size_t>(classes), std::vector<float>(ss));
    for (auto& p : proto) {
        std::vector<float> coarse(static_cast<std::size_t>(channels) * 4);
        for (auto& v : coarse) v = unit(rng);
        for (int c = 0; c < channels; ++c)
            for (int h = 0; h < extent; ++h)
                for (int w = 0; w < extent; ++w) {
                    const int q = (2 * h / extent) * 2 + (2 * w / extent);
                    p[(static_cast<std::size_t>(c) * extent + h) * extent + w] = coarse[static_cast<std::size_t>(c) * 4 + q];
                }
    }
    std::seed_seq sample_seed{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                              static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    rng.seed(sample_seed);
    d.labels.resize(count);
    d.pixels.resize(count * ss);
    for (std::size_t i = 0; i < count; ++i) {
        const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
        d.labels[i] = label;
        float* dst = d.pixels.data() + i * ss;
        for (std::size_t k = 0; k < ss; ++k) dst[k] = std::clamp(proto[label][k] + noise(rng), -1.0f, 1.0f);
    }
    // interleave classes in a seed-dependent order
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Dataset shuffled = d;
    for (std::size_t i = 0; i < count; ++i) {
        shuffled.labels[i] = d.labels[order[i]];
        std::copy_n(d.pixels.begin() + static_cast<std::ptrdiff_t>(order[i] * ss), ss,
                    shuffled.pixels.begin() + static_cast<std::ptrdiff_t>(i * ss));
    }
    return shuffled;
}

void augment_batch(Tensor& batch, std::mt19937_64& rng, int pad) {
    const Shape s = batch.shape();
    std::uniform_int_distribution<int> shift(-pad, pad);
    std::bernoulli_distribution flip(0.5);
    std::vector<float> plane(static_cast<std::size_t>(s.h) * s.w);
    for (int n = 0; n < s.n; ++n) {
        const int dy = shift(rng), dx = shift(rng);
        const bool mirror = flip(rng);
        for (int c = 0; c < s.c; ++c) {
            float* p = batch.data() + batch.offset(n, c, 0, 0);
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w) {
                    const int sy = h + dy;
                    const int sx0 = w + dx;
                    const int sx = mirror ? s.w - 1 - sx0 : sx0;
                    const bool inside = sy >= 0 && sy < s.h && sx0 >= 0 && sx0 < s.w;
                    plane[static_cast<std::size_t>(h) * s.w + w] = inside ? p[sy * s.w + sx] : 0.0f;
                }
            std::copy(plane.begin(), plane.end(), p);
        }
    }
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size, std::mt19937_64& rng,
                                                    bool shuffle) {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < count; i += batch_size) {
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + batch_size)));
    }
    return out;
}

}  // namespace dgrl
