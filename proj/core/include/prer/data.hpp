#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "prer/tensor.hpp"

namespace prer::data {

/// Labelled image collection, images flattened row-major with values in [0, 1].
struct Dataset {
    std::vector<double> images;  // n * height * width
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<int> labels;
    int num_classes = 0;
    std::string provenance;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t features() const noexcept { return height * width; }
    std::span<const double> image(std::size_t i) const;

    /// Rows `index` as a [k x features] tensor.
    Tensor batch(std::span<const std::size_t> index) const;
    Tensor all() const;
    std::vector<int> labels_of(std::span<const std::size_t> index) const;
    Dataset subset(std::span<const std::size_t> index) const;
    std::vector<std::size_t> class_counts() const;

    /// Throws DataError if labels, sizes, or pixel ranges are inconsistent.
    void validate() const;
};

/// Reads an IDX image/label file pair, transparently inflating gzip.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Raw bytes of a file, gunzipped when it starts with 0x1f 0x8b.
std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path);

struct BlobSpec {
    int classes = 2;
    std::size_t samples_per_class = 100;
    std::size_t dim = 2;
    /// One mean vector per class; each of length `dim`.
    std::vector<std::vector<double>> means;
    double std = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Isotropic Gaussian clusters clipped to [0, 1], stored as 1 x dim images.
Dataset make_blobs(const BlobSpec& spec);

/// Class means spread over [0.2, 0.8]^dim, deterministic in `seed`.
std::vector<std::vector<double>> spread_means(int classes, std::size_t dim, std::uint64_t seed);

struct Split {
    Dataset train;
    Dataset test;
};

/// Per-class split; train gets round-half-up(ratio * n_c), clamped so both
/// sides keep at least one sample.
Split stratified_split(const Dataset& dataset, double ratio, std::uint64_t seed);

}  // namespace prer::data
