#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ksnet/rng.hpp"
#include "ksnet/tensor.hpp"

namespace ksnet {

template <Scalar T>
struct Dataset {
    Tensor<T> images;  // (N,3,H,W), values in [0,1]
    std::vector<int> labels;
    std::size_t num_classes = 10;
    std::string split;

    std::size_t size() const { return labels.size(); }
};

enum class CifarVariant { cifar10, cifar100 };
enum class Split { train, test };

namespace detail {

inline std::vector<std::filesystem::path> cifar_files(const std::string& path, CifarVariant v,
                                                      Split split) {
    namespace fs = std::filesystem;
    const fs::path p(path);
    if (fs::is_regular_file(p)) return {p};
    KSNET_CHECK(fs::is_directory(p), IoError, "dataset path '", path,
                "' is neither a file nor a directory");
    std::vector<fs::path> files;
    if (v == CifarVariant::cifar10) {
        if (split == Split::train)
            for (int i = 1; i <= 5; ++i) files.push_back(p / msg("data_batch_", i, ".bin"));
        else
            files.push_back(p / "test_batch.bin");
    } else {
        files.push_back(p / (split == Split::train ? "train.bin" : "test.bin"));
    }
    for (const auto& f : files)
        KSNET_CHECK(fs::is_regular_file(f), IoError, "missing dataset file '", f.string(), "'");
    return files;
}

}  // namespace detail

/// Official CIFAR binary layout: CIFAR-10 records are 3073 bytes (label +
/// 3072 RGB plane bytes), CIFAR-100 records are 3074 (coarse label, fine
/// label, pixels); the fine label is used. Pixels scale to [0,1].
template <Scalar T>
Dataset<T> load_cifar(const std::string& path, CifarVariant variant, Split split) {
    const std::size_t record = variant == CifarVariant::cifar10 ? 3073 : 3074;
    const std::size_t num_classes = variant == CifarVariant::cifar10 ? 10 : 100;
    const auto files = detail::cifar_files(path, variant, split);

    std::size_t total = 0;
    std::vector<std::vector<char>> blobs;
    for (const auto& f : files) {
        const std::uintmax_t bytes = std::filesystem::file_size(f);
        KSNET_CHECK(bytes > 0 && bytes % record == 0, IoError, "'", f.string(), "': expected a ",
                    "positive multiple of ", record, " bytes, got ", bytes, " (", bytes / record,
                    " whole records + ", bytes % record, " leftover bytes)");
        std::ifstream in(f, std::ios::binary);
        KSNET_CHECK(in.good(), IoError, "cannot open '", f.string(), "'");
        std::vector<char> blob(static_cast<std::size_t>(bytes));
        in.read(blob.data(), static_cast<std::streamsize>(blob.size()));
        KSNET_CHECK(in.gcount() == static_cast<std::streamsize>(blob.size()), IoError,
                    "short read on '", f.string(), "'");
        total += blob.size() / record;
        blobs.push_back(std::move(blob));
    }

    Dataset<T> ds;
    ds.images = Tensor<T>({total, 3, 32, 32});
    ds.labels.reserve(total);
    ds.num_classes = num_classes;
    ds.split = split == Split::train ? "train" : "test";
    std::size_t n = 0;
    for (const auto& blob : blobs) {
        for (std::size_t off = 0; off < blob.size(); off += record, ++n) {
            const unsigned char* rec = reinterpret_cast<const unsigned char*>(blob.data() + off);
            const int label = variant == CifarVariant::cifar10 ? rec[0] : rec[1];
            KSNET_CHECK(label < static_cast<int>(num_classes), IoError, "record ", n, ": label ",
                        label, " out of range for ", num_classes, " classes");
            ds.labels.push_back(label);
            const unsigned char* px = rec + (variant == CifarVariant::cifar10 ? 1 : 2);
            T* dst = ds.images.data() + n * 3 * 32 * 32;
            for (std::size_t i = 0; i < 3072; ++i)
                dst[i] = static_cast<T>(px[i]) / T(255);
        }
    }
    return ds;
}

/// Writes a dataset back out in the official binary layout (pixels quantized
/// to bytes). Lets tests round-trip the loader without the real archives.
template <Scalar T>
void write_cifar(const Dataset<T>& ds, const std::string& file, CifarVariant variant) {
    std::ofstream out(file, std::ios::binary);
    KSNET_CHECK(out.good(), IoError, "cannot write '", file, "'");
    const std::size_t per = 3 * 32 * 32;
    KSNET_CHECK(ds.images.rank() == 4 && ds.images.dim(1) == 3 && ds.images.dim(2) == 32 &&
                    ds.images.dim(3) == 32,
                ShapeError, "write_cifar: images must be (N,3,32,32)");
    for (std::size_t n = 0; n < ds.size(); ++n) {
        unsigned char label = static_cast<unsigned char>(ds.labels[n]);
        if (variant == CifarVariant::cifar100) {
            unsigned char coarse = 0;
            out.write(reinterpret_cast<const char*>(&coarse), 1);
        }
        out.write(reinterpret_cast<const char*>(&label), 1);
        const T* src = ds.images.data() + n * per;
        for (std::size_t i = 0; i < per; ++i) {
            const double v = std::clamp(static_cast<double>(src[i]), 0.0, 1.0);
            const unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
            out.write(reinterpret_cast<const char*>(&b), 1);
        }
    }
}

/// Class-conditional oriented frequency patterns plus light noise: separable
/// enough that a linear probe on raw pixels works and a small CNN trains to
/// high accuracy within a few epochs. Labels cycle through the classes so
/// every class count is within 1 of n/classes.
template <Scalar T>
Dataset<T> synthetic_dataset(std::uint64_t seed, std::size_t n, std::size_t classes,
                             std::size_t height = 16, std::size_t width = 16) {
    KSNET_CHECK(classes >= 2, ConfigError, "synthetic_dataset: need at least 2 classes");
    KSNET_CHECK(n >= classes, ConfigError, "synthetic_dataset: n=", n, " < classes=", classes);
    Dataset<T> ds;
    ds.images = Tensor<T>({n, 3, height, width});
    ds.labels.resize(n);
    ds.num_classes = classes;
    ds.split = "synthetic";
    Rng rng(seed);
    constexpr double two_pi = 6.283185307179586476925286766559;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = i % classes;
        ds.labels[i] = static_cast<int>(k);
        const double angle = M_PI * static_cast<double>(k) / static_cast<double>(classes);
        const double freq = 1.0 + static_cast<double>(k % 3);
        const double phase = 0.9 * static_cast<double>(k);
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double amp = rng.uniform(0.85, 1.15);
        for (std::size_t c = 0; c < 3; ++c) {
            T* img = ds.images.data() + ((i * 3 + c) * height) * width;
            const double gain = (0.34 + 0.04 * static_cast<double>(c)) * amp;
            for (std::size_t h = 0; h < height; ++h)
                for (std::size_t w = 0; w < width; ++w) {
                    const double u = (ca * static_cast<double>(h) + sa * static_cast<double>(w)) /
                                     static_cast<double>(height);
                    double v = 0.5 + gain * std::sin(two_pi * freq * u + phase) +
                               0.03 * rng.normal();
                    img[h * width + w] = static_cast<T>(std::clamp(v, 0.0, 1.0));
                }
        }
    }
    return ds;
}

/// Augmentation behavior of a batch stream. Evaluation applies normalization
/// only.
struct AugmentPolicy {
    bool random_crop = false;
    std::size_t crop_pad = 4;
    bool hflip = false;
    double hflip_p = 0.5;
    bool normalize = false;
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> stdev{1.0, 1.0, 1.0};

    static AugmentPolicy cifar_train() {
        return {true, 4, true, 0.5, true, {0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}};
    }
    static AugmentPolicy cifar_eval() {
        return {false, 4, false, 0.5, true, {0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}};
    }
};

/// Deterministic epoch stream: Fisher-Yates shuffle keyed by the stream seed,
/// last partial batch kept, augmentation applied in training mode only. All
/// randomness comes from the stream-owned engine, drawn in image order.
template <Scalar T>
class BatchStream {
public:
    BatchStream(const Dataset<T>& ds, std::size_t batch_size, std::uint64_t seed,
                AugmentPolicy policy, bool training)
        : ds_(&ds), batch_size_(batch_size), policy_(policy), training_(training),
          rng_(Rng(seed).fork(0x6175671ULL)) {
        KSNET_CHECK(batch_size_ >= 1, ConfigError, "batch size must be >= 1");
        order_.resize(ds.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        if (training_) {
            Rng shuffle_rng = Rng(seed).fork(0x73687566ULL);
            for (std::size_t i = order_.size(); i > 1; --i)
                std::swap(order_[i - 1], order_[shuffle_rng.next_below(i)]);
        }
    }

    std::size_t num_batches() const {
        return (ds_->size() + batch_size_ - 1) / batch_size_;
    }

    /// Fills the next batch; returns false when the epoch is exhausted.
    bool next(Tensor<T>& images, std::vector<int>& labels) {
        if (cursor_ >= ds_->size()) return false;
        const std::size_t count = std::min(batch_size_, ds_->size() - cursor_);
        const std::size_t C = ds_->images.dim(1), H = ds_->images.dim(2), W = ds_->images.dim(3);
        images = Tensor<T>({count, C, H, W});
        labels.resize(count);
        for (std::size_t b = 0; b < count; ++b) {
            const std::size_t src = order_[cursor_ + b];
            labels[b] = ds_->labels[src];
            const T* sp = ds_->images.data() + src * C * H * W;
            T* dp = images.data() + b * C * H * W;
            std::copy(sp, sp + C * H * W, dp);
            if (training_) augment_one(dp, C, H, W);
            if (policy_.normalize) {
                for (std::size_t c = 0; c < C; ++c) {
                    const T m = static_cast<T>(policy_.mean[c % 3]);
                    const T s = static_cast<T>(policy_.stdev[c % 3]);
                    T* pc = dp + c * H * W;
                    for (std::size_t i = 0; i < H * W; ++i) pc[i] = (pc[i] - m) / s;
                }
            }
        }
        cursor_ += count;
        return true;
    }

private:
    void augment_one(T* img, std::size_t C, std::size_t H, std::size_t W) {
        if (policy_.random_crop) {
            const std::size_t p = policy_.crop_pad;
            const std::size_t dy = static_cast<std::size_t>(rng_.next_below(2 * p + 1));
            const std::size_t dx = static_cast<std::size_t>(rng_.next_below(2 * p + 1));
            if (dy != p || dx != p) {
                scratch_.assign(C * H * W, T(0));
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t h = 0; h < H; ++h) {
                        // Source row in the zero-padded image.
                        const std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(h + dy) -
                                                  static_cast<std::ptrdiff_t>(p);
                        if (sh < 0 || sh >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t w = 0; w < W; ++w) {
                            const std::ptrdiff_t sw = static_cast<std::ptrdiff_t>(w + dx) -
                                                      static_cast<std::ptrdiff_t>(p);
                            if (sw < 0 || sw >= static_cast<std::ptrdiff_t>(W)) continue;
                            scratch_[(c * H + h) * W + w] =
                                img[(c * H + static_cast<std::size_t>(sh)) * W +
                                    static_cast<std::size_t>(sw)];
                        }
                    }
                std::copy(scratch_.begin(), scratch_.end(), img);
            }
        }
        if (policy_.hflip && rng_.next_double() < policy_.hflip_p) {
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t h = 0; h < H; ++h) {
                    T* row = img + (c * H + h) * W;
                    std::reverse(row, row + W);
                }
        }
    }

    const Dataset<T>* ds_;
    std::size_t batch_size_;
    AugmentPolicy policy_;
    bool training_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::vector<T> scratch_;
    std::size_t cursor_ = 0;
};

}  // namespace ksnet
