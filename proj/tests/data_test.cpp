#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "test_util.hpp"

namespace sfmu {
namespace {

namespace fs = std::filesystem;

class DataFileTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("sfmu_data_test_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

FeatureDataset small_dataset() {
  FeatureDataset ds;
  ds.n = 2;
  ds.d = 3;
  ds.k = 2;
  ds.features.resize(2, 3);
  ds.features << 1, 2, 3, 4, 5, 6;
  ds.labels = {0, 1};
  return ds;
}

TEST_F(DataFileTest, SmallRoundTrip) {
  const FeatureDataset ds = small_dataset();
  save_features(dir_ / "f.bin", ds);
  const FeatureDataset back = load_features(dir_ / "f.bin");
  EXPECT_EQ(back.n, 2u);
  EXPECT_EQ(back.d, 3u);
  EXPECT_EQ(back.k, 2u);
  EXPECT_EQ(back.features, ds.features);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(fs::file_size(dir_ / "f.bin"), 8u + 12u + 2 * 3 * 4u + 2 * 4u);
}

TEST_F(DataFileTest, LayoutIsLittleEndian) {
  const std::string bytes = encode_features(small_dataset());
  EXPECT_EQ(bytes.substr(0, 8), "SFUFEAT1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);  // n low byte
  EXPECT_EQ(bytes[9], 0);
  // first feature 1.0f = 0x3f800000
  EXPECT_EQ(static_cast<unsigned char>(bytes[20 + 3]), 0x3f);
  EXPECT_EQ(static_cast<unsigned char>(bytes[20 + 2]), 0x80);
  // last label (1) is the final u32
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 4]), 1);
}

TEST_F(DataFileTest, RandomRoundTripIsBitExact) {
  SyntheticSpec spec;
  spec.n = 57;
  spec.d = 9;
  spec.k = 4;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const FeatureDataset ds = make_synthetic_classification(spec, seed);
    const std::string bytes = encode_features(ds);
    const FeatureDataset back = decode_features(bytes);
    EXPECT_EQ(back.features, ds.features);
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(encode_features(back), bytes);
  }
}

TEST_F(DataFileTest, LabelOutOfRange) {
  FeatureDataset ds = small_dataset();
  std::string bytes = encode_features(ds);
  bytes[bytes.size() - 4] = 7;
  EXPECT_THROW(decode_features(bytes), LabelOutOfRange);
}

TEST_F(DataFileTest, EmptyFileIsBadMagic) {
  detail::write_file(dir_ / "empty.bin", "");
  EXPECT_THROW(load_features(dir_ / "empty.bin"), BadMagic);
  EXPECT_THROW(decode_features("SFUMODL1xxxxxxxxxxxx"), BadMagic);
}

TEST_F(DataFileTest, Truncated) {
  std::string bytes = encode_features(small_dataset());
  bytes.resize(bytes.size() - 1);
  EXPECT_THROW(decode_features(bytes), TruncatedFile);
  EXPECT_THROW(decode_features(bytes.substr(0, 14)), TruncatedFile);
}

TEST_F(DataFileTest, MissingFileNamesPath) {
  try {
    load_features(dir_ / "nope.bin");
    FAIL();
  } catch (const FileNotFound& e) {
    EXPECT_NE(std::string(e.what()).find("nope.bin"), std::string::npos);
  }
}

TEST_F(DataFileTest, NormalizeFlag) {
  FeatureDataset ds = small_dataset();
  save_features(dir_ / "f.bin", ds);
  const FeatureDataset n = load_features(dir_ / "f.bin", true);
  EXPECT_TRUE(n.normalized);
  EXPECT_NEAR(n.max_row_norm(), 1.0, 1e-12);
  EXPECT_NEAR(n.scale, 1.0 / std::sqrt(16.0 + 25.0 + 36.0), 1e-15);
  EXPECT_FALSE(load_features(dir_ / "f.bin").normalized);
}

TEST_F(DataFileTest, ModelAndHessianRoundTrip) {
  std::mt19937_64 rng(1);
  const Vector w = testing::random_vector(13, rng);
  save_model(dir_ / "m.bin", w);
  EXPECT_EQ(load_model(dir_ / "m.bin"), w);
  const SymMatrix h = testing::random_symmetric(5, rng);
  save_hessian(dir_ / "h.bin", h);
  EXPECT_EQ(load_hessian(dir_ / "h.bin").dense(), h.dense());
  EXPECT_THROW(decode_model(encode_hessian(h)), BadMagic);
}

TEST(SplitTest, ForgetCount) {
  IndexList train(100);
  std::iota(train.begin(), train.end(), Index{0});
  const SplitSpec s = make_split(train, {}, 0.10, 42);
  EXPECT_EQ(s.forget_idx.size(), 10u);
  EXPECT_EQ(s.retain_idx.size(), 90u);
}

TEST(SplitTest, FifteenPercentOfThousand) {
  IndexList train(1000);
  std::iota(train.begin(), train.end(), Index{0});
  EXPECT_EQ(make_split(train, {}, 0.15, 1).forget_idx.size(), 150u);
}

TEST(SplitTest, TiesRoundUp) {
  EXPECT_EQ(forget_count(10, 0.25), 3u);
  EXPECT_EQ(forget_count(10, 0.24), 2u);
}

TEST(SplitTest, DeterministicPerSeed) {
  IndexList train(300);
  std::iota(train.begin(), train.end(), Index{0});
  const SplitSpec a = make_split(train, {}, 0.2, 9);
  const SplitSpec b = make_split(train, {}, 0.2, 9);
  const SplitSpec c = make_split(train, {}, 0.2, 10);
  EXPECT_EQ(a.forget_idx, b.forget_idx);
  EXPECT_NE(a.forget_idx, c.forget_idx);
}

TEST(SplitTest, PartitionProperty) {
  SyntheticSpec spec;
  spec.n = 211;
  const FeatureDataset ds = make_synthetic_classification(spec, 0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SplitSpec s = make_split(ds, 0.05 + 0.01 * static_cast<double>(seed), seed, 0.25);
    std::multiset<Index> seen(s.forget_idx.begin(), s.forget_idx.end());
    seen.insert(s.retain_idx.begin(), s.retain_idx.end());
    EXPECT_EQ(seen, std::multiset<Index>(s.train_idx.begin(), s.train_idx.end()));
    std::set<Index> all(s.train_idx.begin(), s.train_idx.end());
    for (Index t : s.test_idx) EXPECT_EQ(all.count(t), 0u);
    EXPECT_EQ(s.train_idx.size() + s.test_idx.size(), ds.n);
  }
}

TEST(SplitTest, FractionOutOfRange) {
  IndexList train(20);
  std::iota(train.begin(), train.end(), Index{0});
  EXPECT_THROW(make_split(train, {}, 0.0, 0), FractionOutOfRange);
  EXPECT_THROW(make_split(train, {}, 1.0, 0), FractionOutOfRange);
  EXPECT_THROW(make_split(train, {}, 0.01, 0), FractionOutOfRange);  // rounds to 0 samples
  EXPECT_THROW(make_split(train, {}, 0.99, 0), FractionOutOfRange);  // rounds to all samples
}

TEST_F(DataFileTest, SplitFilesRoundTrip) {
  SyntheticSpec spec;
  spec.n = 50;
  const FeatureDataset ds = make_synthetic_classification(spec, 3);
  const SplitSpec s = make_split(ds, 0.2, 3, 0.2);
  save_split(dir_ / "split", s);
  const SplitSpec back = load_split(dir_ / "split", ds.n);
  EXPECT_EQ(back.forget_idx, s.forget_idx);
  EXPECT_EQ(back.retain_idx, s.retain_idx);
  EXPECT_EQ(back.test_idx, s.test_idx);
  detail::write_file(dir_ / "split" / "forget.idx", "0\n1\n");
  EXPECT_THROW(load_split(dir_ / "split", ds.n), DataError);
}

}  // namespace
}  // namespace sfmu
