#include "prer/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "prer/error.hpp"
#include "prer/rng.hpp"

namespace prer::data {

std::span<const double> Dataset::image(std::size_t i) const {
    if (i >= size()) throw ContractError("image index out of range");
    return std::span<const double>(images).subspan(i * features(), features());
}

Tensor Dataset::batch(std::span<const std::size_t> index) const {
    if (index.empty()) throw ContractError("empty batch");
    const std::size_t f = features();
    std::vector<double> v(index.size() * f);
    for (std::size_t r = 0; r < index.size(); ++r) {
        const auto img = image(index[r]);
        std::copy(img.begin(), img.end(), v.begin() + static_cast<std::ptrdiff_t>(r * f));
    }
    return Tensor({index.size(), f}, std::move(v));
}

Tensor Dataset::all() const {
    std::vector<std::size_t> idx(size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return batch(idx);
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> index) const {
    std::vector<int> out;
    out.reserve(index.size());
    for (std::size_t i : index) out.push_back(labels.at(i));
    return out;
}

Dataset Dataset::subset(std::span<const std::size_t> index) const {
    Dataset out;
    out.height = height;
    out.width = width;
    out.num_classes = num_classes;
    out.provenance = provenance;
    out.images.reserve(index.size() * features());
    for (std::size_t i : index) {
        const auto img = image(i);
        out.images.insert(out.images.end(), img.begin(), img.end());
        out.labels.push_back(labels[i]);
    }
    return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
    for (int y : labels) {
        if (y < 0 || y >= num_classes) throw DataError("label " + std::to_string(y) + " outside [0, C)");
        ++counts[static_cast<std::size_t>(y)];
    }
    return counts;
}

void Dataset::validate() const {
    if (features() == 0) throw DataError("dataset has zero-sized images");
    if (images.size() != labels.size() * features()) throw DataError("image buffer does not match label count");
    for (std::size_t c : class_counts())
        if (c == 0) throw DataError("dataset has an empty class");
    for (double v : images)
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("pixel value outside [0, 1]");
}

// --- IDX --------------------------------------------------------------------

std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (raw.size() < 2 || raw[0] != 0x1f || raw[1] != 0x8b) return raw;

    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw DataError("zlib init failed");
    zs.next_in = raw.data();
    zs.avail_in = static_cast<uInt>(raw.size());
    std::vector<std::uint8_t> out;
    std::uint8_t chunk[1 << 16];
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = chunk;
        zs.avail_out = sizeof chunk;
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            const auto at = zs.total_in;
            inflateEnd(&zs);
            throw FormatError(at, path.string() + ": corrupt gzip stream");
        }
        out.insert(out.end(), chunk, chunk + (sizeof chunk - zs.avail_out));
        if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
            const auto at = zs.total_in;
            inflateEnd(&zs);
            throw FormatError(at, path.string() + ": truncated gzip stream");
        }
    }
    inflateEnd(&zs);
    return out;
}

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t offset, const std::string& what) {
    if (offset + 4 > b.size()) throw FormatError(offset, what + ": truncated header");
    return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
           (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = read_maybe_gzip(images_path);
    const auto lab = read_maybe_gzip(labels_path);
    const std::string in = images_path.string(), ln = labels_path.string();

    if (read_be32(img, 0, in) != 0x803) throw FormatError(0, in + ": bad magic, expected 0x00000803");
    if (read_be32(lab, 0, ln) != 0x801) throw FormatError(0, ln + ": bad magic, expected 0x00000801");
    const std::size_t n = read_be32(img, 4, in);
    const std::size_t h = read_be32(img, 8, in);
    const std::size_t w = read_be32(img, 12, in);
    const std::size_t nl = read_be32(lab, 4, ln);
    if (n != nl)
        throw FormatError(4, "image count " + std::to_string(n) + " != label count " + std::to_string(nl));
    if (h == 0 || w == 0) throw FormatError(8, in + ": zero image dimension");
    const std::size_t pixels = n * h * w;
    if (img.size() < 16 + pixels) throw FormatError(img.size(), in + ": truncated payload");
    if (lab.size() < 8 + n) throw FormatError(lab.size(), ln + ": truncated payload");

    Dataset ds;
    ds.height = h;
    ds.width = w;
    ds.provenance = "idx:" + images_path.filename().string();
    ds.images.resize(pixels);
    for (std::size_t i = 0; i < pixels; ++i) ds.images[i] = img[16 + i] / 255.0;
    ds.labels.resize(n);
    int max_label = -1;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = lab[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = max_label + 1;
    ds.validate();
    return ds;
}

// --- blobs ------------------------------------------------------------------

void BlobSpec::validate() const {
    if (classes < 1) throw ContractError("blob spec needs at least one class");
    if (samples_per_class == 0 || dim == 0) throw ContractError("blob spec sizes must be positive");
    if (!(std::isfinite(std) && std >= 0.0)) throw ContractError("blob std must be finite and non-negative");
    if (means.size() != static_cast<std::size_t>(classes)) throw ContractError("one mean per class required");
    for (const auto& m : means)
        if (m.size() != dim) throw ContractError("mean vector length != dim");
    for (std::size_t a = 0; a < means.size(); ++a)
        for (std::size_t b = a + 1; b < means.size(); ++b)
            if (means[a] == means[b]) throw ContractError("class means must be pairwise distinct");
}

Dataset make_blobs(const BlobSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Dataset ds;
    ds.height = 1;
    ds.width = spec.dim;
    ds.num_classes = spec.classes;
    ds.provenance = "blobs:seed=" + std::to_string(spec.seed);
    ds.images.reserve(spec.samples_per_class * spec.dim * static_cast<std::size_t>(spec.classes));
    for (int c = 0; c < spec.classes; ++c) {
        const auto& mu = spec.means[static_cast<std::size_t>(c)];
        for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
            for (std::size_t k = 0; k < spec.dim; ++k)
                ds.images.push_back(std::clamp(mu[k] + spec.std * rng.normal(), 0.0, 1.0));
            ds.labels.push_back(c);
        }
    }
    return ds;
}

std::vector<std::vector<double>> spread_means(int classes, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<double>> means(static_cast<std::size_t>(classes), std::vector<double>(dim));
    for (auto& m : means)
        for (auto& v : m) v = rng.uniform(0.2, 0.8);
    return means;
}

// --- split ------------------------------------------------------------------

Split stratified_split(const Dataset& dataset, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError("split ratio must lie in (0, 1)");
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(dataset.num_classes));
    for (std::size_t i = 0; i < dataset.size(); ++i)
        by_class.at(static_cast<std::size_t>(dataset.labels[i])).push_back(i);

    Rng rng(seed);
    std::vector<std::size_t> train, test;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& idx = by_class[c];
        if (idx.size() < 2)
            throw DataError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                            " samples; a split needs at least 2");
        rng.shuffle(idx);
        const double n = static_cast<double>(idx.size());
        auto k = static_cast<std::size_t>(std::floor(ratio * n + 0.5));
        k = std::clamp<std::size_t>(k, 1, idx.size() - 1);
        train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
        test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {dataset.subset(train), dataset.subset(test)};
}

}  // namespace prer::data
