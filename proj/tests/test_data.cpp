#include <gtest/gtest.h>

#include <zlib.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "prer/data.hpp"
#include "prer/error.hpp"

using namespace prer;
using namespace prer::data;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("prer_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

void write_gzip(const fs::path& p, const std::vector<std::uint8_t>& b) {
    gzFile f = gzopen(p.string().c_str(), "wb");
    gzwrite(f, b.data(), static_cast<unsigned>(b.size()));
    gzclose(f);
}

// Two 2x3 images and their labels, authored byte by byte.
const std::vector<std::uint8_t> kPixels{0, 255, 128, 1, 2, 3, 200, 100, 50, 25, 12, 6};

std::vector<std::uint8_t> image_file(std::uint32_t n = 2) {
    std::vector<std::uint8_t> b;
    put_be32(b, 0x803);
    put_be32(b, n);
    put_be32(b, 2);
    put_be32(b, 3);
    b.insert(b.end(), kPixels.begin(), kPixels.end());
    return b;
}

std::vector<std::uint8_t> label_file(std::vector<std::uint8_t> labels = {1, 0}) {
    std::vector<std::uint8_t> b;
    put_be32(b, 0x801);
    put_be32(b, static_cast<std::uint32_t>(labels.size()));
    b.insert(b.end(), labels.begin(), labels.end());
    return b;
}

}  // namespace

TEST(Idx, HandBuiltFixtureRoundTrip) {
    TempDir dir;
    write_bytes(dir.path / "img", image_file());
    write_bytes(dir.path / "lab", label_file());
    Dataset ds = load_idx(dir.path / "img", dir.path / "lab");
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.height, 2u);
    EXPECT_EQ(ds.width, 3u);
    EXPECT_EQ(ds.num_classes, 2);
    EXPECT_EQ(ds.labels, (std::vector<int>{1, 0}));
    for (std::size_t i = 0; i < kPixels.size(); ++i) {
        EXPECT_DOUBLE_EQ(ds.images[i], kPixels[i] / 255.0);
        EXPECT_EQ(static_cast<int>(std::lround(ds.images[i] * 255.0)), kPixels[i]);
    }
}

TEST(Idx, GzipIsDetectedByMagic) {
    TempDir dir;
    write_gzip(dir.path / "img.gz", image_file());
    write_gzip(dir.path / "lab.gz", label_file());
    Dataset ds = load_idx(dir.path / "img.gz", dir.path / "lab.gz");
    EXPECT_EQ(ds.size(), 2u);
    EXPECT_DOUBLE_EQ(ds.images[1], 1.0);
}

TEST(Idx, EmptyFileFailsAtOffsetZero) {
    TempDir dir;
    write_bytes(dir.path / "img", {});
    write_bytes(dir.path / "lab", label_file());
    try {
        load_idx(dir.path / "img", dir.path / "lab");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
}

TEST(Idx, BadMagicTruncationAndCountMismatch) {
    TempDir dir;
    auto bad = image_file();
    bad[3] = 0x01;
    write_bytes(dir.path / "bad", bad);
    write_bytes(dir.path / "lab", label_file());
    EXPECT_THROW(load_idx(dir.path / "bad", dir.path / "lab"), FormatError);

    auto trunc = image_file();
    trunc.resize(trunc.size() - 3);
    write_bytes(dir.path / "trunc", trunc);
    try {
        load_idx(dir.path / "trunc", dir.path / "lab");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), trunc.size());
    }

    write_bytes(dir.path / "img", image_file());
    write_bytes(dir.path / "lab3", label_file({0, 1, 1}));
    EXPECT_THROW(load_idx(dir.path / "img", dir.path / "lab3"), FormatError);
    EXPECT_THROW(load_idx(dir.path / "missing", dir.path / "lab"), DataError);
}

TEST(Idx, BundledMnistSubset) {
    const fs::path dir = fs::path(PRER_SOURCE_DIR) / "data" / "mnist10k";
    Dataset ds = load_idx(dir / "images-idx3-ubyte.gz", dir / "labels-idx1-ubyte.gz");
    EXPECT_EQ(ds.size(), 10000u);
    EXPECT_EQ(ds.height, 28u);
    EXPECT_EQ(ds.width, 28u);
    EXPECT_EQ(ds.num_classes, 10);
    // Per-digit counts of the bundled subset.
    EXPECT_EQ(ds.class_counts(),
              (std::vector<std::size_t>{1001, 1127, 991, 1032, 980, 863, 1014, 1070, 944, 978}));
}

TEST(Idx, FullMnistTrainWhenAvailable) {
    const char* root = std::getenv("PRER_DATA_DIR");
    if (!root) GTEST_SKIP() << "PRER_DATA_DIR not set";
    const fs::path dir = fs::path(root) / "mnist";
    fs::path img = dir / "train-images-idx3-ubyte", lab = dir / "train-labels-idx1-ubyte";
    if (!fs::exists(img)) img += ".gz";
    if (!fs::exists(lab)) lab += ".gz";
    if (!fs::exists(img) || !fs::exists(lab)) GTEST_SKIP() << "full MNIST not found under " << dir;
    Dataset ds = load_idx(img, lab);
    EXPECT_EQ(ds.size(), 60000u);
    EXPECT_EQ(ds.height, 28u);
    EXPECT_EQ(ds.width, 28u);
    EXPECT_EQ(ds.num_classes, 10);
}

TEST(Blobs, ZeroStdGivesClassMeans) {
    BlobSpec s;
    s.classes = 3;
    s.samples_per_class = 5;
    s.dim = 2;
    s.std = 0.0;
    s.means = {{0.1, 0.2}, {0.5, 0.5}, {0.9, 0.3}};
    Dataset ds = make_blobs(s);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& m = s.means[static_cast<std::size_t>(ds.labels[i])];
        EXPECT_EQ(ds.image(i)[0], m[0]);
        EXPECT_EQ(ds.image(i)[1], m[1]);
    }
}

TEST(Blobs, SampleMeanWithinCltBound) {
    BlobSpec s;
    s.classes = 2;
    s.samples_per_class = 4000;
    s.dim = 3;
    s.std = 0.05;
    s.means = {{0.3, 0.5, 0.7}, {0.6, 0.4, 0.2}};
    s.seed = 9;
    Dataset ds = make_blobs(s);
    for (int c = 0; c < 2; ++c)
        for (std::size_t k = 0; k < 3; ++k) {
            double m = 0;
            for (std::size_t i = 0; i < ds.size(); ++i)
                if (ds.labels[i] == c) m += ds.image(i)[k];
            m /= 4000.0;
            EXPECT_LT(std::abs(m - s.means[static_cast<std::size_t>(c)][k]), 3 * 0.05 / std::sqrt(4000.0));
        }
}

TEST(Blobs, SameSeedSameDataAndValidation) {
    BlobSpec s;
    s.classes = 2;
    s.samples_per_class = 10;
    s.dim = 2;
    s.means = spread_means(2, 2, 4);
    s.seed = 3;
    EXPECT_EQ(make_blobs(s).images, make_blobs(s).images);
    s.means = {{0.5, 0.5}, {0.5, 0.5}};
    EXPECT_THROW(make_blobs(s), ContractError);
    s.means = {{2.0, 2.0}, {-1.0, -1.0}};
    s.std = 0.5;
    Dataset clipped = make_blobs(s);
    for (double v : clipped.images) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Split, EightyTwentyPerClass) {
    BlobSpec s;
    s.classes = 3;
    s.samples_per_class = 100;
    s.dim = 2;
    s.means = spread_means(3, 2, 1);
    Dataset ds = make_blobs(s);
    auto sp = stratified_split(ds, 0.8, 5);
    for (std::size_t c : sp.train.class_counts()) EXPECT_EQ(c, 80u);
    for (std::size_t c : sp.test.class_counts()) EXPECT_EQ(c, 20u);
}

TEST(Split, TwoSampleClassAndRoundHalfUp) {
    BlobSpec s;
    s.classes = 2;
    s.samples_per_class = 2;
    s.dim = 1;
    s.means = {{0.2}, {0.8}};
    auto sp = stratified_split(make_blobs(s), 0.5, 1);
    EXPECT_EQ(sp.train.class_counts(), (std::vector<std::size_t>{1, 1}));
    EXPECT_EQ(sp.test.class_counts(), (std::vector<std::size_t>{1, 1}));

    s.samples_per_class = 5;
    auto odd = stratified_split(make_blobs(s), 0.5, 1);
    EXPECT_EQ(odd.train.class_counts(), (std::vector<std::size_t>{3, 3}));

    s.samples_per_class = 1;
    EXPECT_THROW(stratified_split(make_blobs(s), 0.5, 1), DataError);
    EXPECT_THROW(stratified_split(make_blobs(s), 1.0, 1), ContractError);
}

TEST(Split, PartitionProperty) {
    BlobSpec s;
    s.classes = 4;
    s.samples_per_class = 37;
    s.dim = 3;
    s.std = 0.2;
    s.means = spread_means(4, 3, 2);
    s.seed = 11;
    Dataset ds = make_blobs(s);
    // Tag each sample with its index in the first coordinate so membership is checkable.
    for (std::size_t i = 0; i < ds.size(); ++i) ds.images[i * 3] = static_cast<double>(i) / 1000.0;
    auto sp = stratified_split(ds, 0.8, 3);
    std::multiset<double> all, parts;
    for (std::size_t i = 0; i < ds.size(); ++i) all.insert(ds.images[i * 3]);
    for (const auto* d : {&sp.train, &sp.test})
        for (std::size_t i = 0; i < d->size(); ++i) parts.insert(d->images[i * 3]);
    EXPECT_EQ(all, parts);
    EXPECT_EQ(sp.train.size() + sp.test.size(), ds.size());
}
