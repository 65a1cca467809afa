#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "stcvae/datasets.hpp"

using namespace stcvae;

TEST(GenDspritesMini, DefaultSpecHasEveryCombinationOnce) {
  const FactorDataset ds = gen_dsprites_mini();
  EXPECT_EQ(ds.size(), 216u);
  EXPECT_EQ(ds.input_dim, 256u);
  EXPECT_EQ(ds.cardinalities, (std::vector<std::size_t>{2, 6, 6, 3}));
  EXPECT_NO_THROW(ds.validate());
  std::set<std::vector<std::size_t>> seen;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    seen.insert({ds.factor(i, 0), ds.factor(i, 1), ds.factor(i, 2), ds.factor(i, 3)});
  }
  EXPECT_EQ(seen.size(), 216u);
}

TEST(GenDspritesMini, LexicographicOrder) {
  const FactorDataset ds = gen_dsprites_mini();
  for (std::size_t i = 1; i < ds.size(); ++i) {
    const std::vector<std::size_t> a(ds.factors.begin() + 4 * (i - 1), ds.factors.begin() + 4 * i);
    const std::vector<std::size_t> b(ds.factors.begin() + 4 * i, ds.factors.begin() + 4 * (i + 1));
    EXPECT_TRUE(std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end()));
  }
  EXPECT_EQ(ds.factor(1, 3), 1u);
  EXPECT_EQ(ds.factor(3, 2), 1u);
}

TEST(GenDspritesMini, DeterministicAndInRange) {
  SyntheticFactorSpec noisy;
  noisy.noise_stddev = 0.1;
  for (const auto& spec : {SyntheticFactorSpec{}, noisy}) {
    const auto a = gen_dsprites_mini(spec, 5);
    const auto b = gen_dsprites_mini(spec, 5);
    EXPECT_EQ(a.samples, b.samples);
    for (double v : a.samples) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_NE(gen_dsprites_mini(noisy, 5).samples, gen_dsprites_mini(noisy, 6).samples);
}

TEST(GenDspritesMini, ImagesDifferExactlyWhenFactorsDiffer) {
  const FactorDataset ds = gen_dsprites_mini();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = i + 1; j < ds.size(); ++j) {
      const auto a = ds.sample(i), b = ds.sample(j);
      ASSERT_FALSE(std::equal(a.begin(), a.end(), b.begin())) << i << " vs " << j;
    }
  }
  // Each sprite actually covers some pixels.
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto s = ds.sample(i);
    EXPECT_GT(*std::max_element(s.begin(), s.end()), 0.5);
  }
}

TEST(GenDspritesMini, RejectsOversizedShapes) {
  SyntheticFactorSpec spec;
  spec.image_side = 8;
  EXPECT_THROW(gen_dsprites_mini(spec), std::invalid_argument);
  spec = {};
  spec.scales = 0;
  EXPECT_THROW(gen_dsprites_mini(spec), std::invalid_argument);
}

TEST(FactorDatasetOps, BinarizeGatherSubset) {
  const FactorDataset ds = gen_dsprites_mini();
  const FactorDataset bin = ds.binarized();
  for (double v : bin.samples) EXPECT_TRUE(v == 0.0 || v == 1.0);
  const std::vector<std::size_t> idx{5, 0, 215};
  const ad::Tensor t = ds.gather(idx);
  EXPECT_EQ(t.shape(), (ad::Shape{3, 256}));
  EXPECT_EQ(t[256], ds.sample(0)[0]);
  const FactorDataset sub = ds.subset(idx);
  EXPECT_EQ(sub.size(), 3u);
  EXPECT_EQ(sub.factor(2, 0), 1u);
  EXPECT_NO_THROW(sub.validate());
}

TEST(FactorDatasetOps, CheckpointExportRoundTrip) {
  const FactorDataset ds = gen_dsprites_mini();
  std::stringstream ss;
  const auto named = dataset_to_named(ds);
  write_checkpoint(ss, named);
  const FactorDataset back = dataset_from_named(read_checkpoint(ss));
  EXPECT_EQ(back.samples, ds.samples);
  EXPECT_EQ(back.factors, ds.factors);
  EXPECT_EQ(back.cardinalities, ds.cardinalities);
  EXPECT_EQ(back.image_side, 16u);
}

// ---- IDX -------------------------------------------------------------------

TEST(Idx, HandBuiltImageFile) {
  const std::vector<std::uint8_t> bytes{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
                                        1, 2, 3, 4, 250, 251, 252, 253};
  const IdxArray a = read_idx(bytes);
  EXPECT_EQ(a.magic, kIdxImages);
  EXPECT_EQ(a.dims, (std::vector<std::uint32_t>{2, 2, 2}));
  EXPECT_EQ(a.data, (std::vector<std::uint8_t>{1, 2, 3, 4, 250, 251, 252, 253}));
  EXPECT_EQ(write_idx(a), bytes);
}

TEST(Idx, HandBuiltLabelFile) {
  const std::vector<std::uint8_t> bytes{0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9};
  const IdxArray a = read_idx(bytes);
  EXPECT_EQ(a.magic, kIdxLabels);
  ASSERT_EQ(a.data.size(), 3u);
  EXPECT_EQ(a.data[2], 9);
}

TEST(Idx, BigEndianDimensions) {
  const std::vector<std::uint8_t> bytes{0, 0, 8, 1, 0, 0, 1, 0};
  std::vector<std::uint8_t> full = bytes;
  full.resize(8 + 256, 0);
  EXPECT_EQ(read_idx(full).dims[0], 256u);
}

TEST(Idx, Errors) {
  EXPECT_THROW(read_idx(std::vector<std::uint8_t>{}), FormatError);
  EXPECT_THROW(read_idx(std::vector<std::uint8_t>{0, 0, 8, 2, 0, 0, 0, 1, 5}), FormatError);
  EXPECT_THROW(read_idx(std::vector<std::uint8_t>{0, 0, 8, 1, 0, 0}), FormatError);
  EXPECT_THROW(read_idx(std::vector<std::uint8_t>{0, 0, 8, 1, 0, 0, 0, 3, 7, 0}), LengthError);
  EXPECT_THROW(write_idx(IdxArray{kIdxImages, {2, 2}, {1, 2, 3, 4}}), ShapeError);
}

TEST(Idx, RandomRoundTrips) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 50; ++t) {
    IdxArray a;
    a.magic = t % 2 == 0 ? kIdxImages : kIdxLabels;
    if (a.magic == kIdxImages) {
      a.dims = {static_cast<std::uint32_t>(1 + rng() % 4), static_cast<std::uint32_t>(1 + rng() % 5),
                static_cast<std::uint32_t>(1 + rng() % 5)};
    } else {
      a.dims = {static_cast<std::uint32_t>(1 + rng() % 30)};
    }
    std::size_t total = 1;
    for (auto d : a.dims) total *= d;
    for (std::size_t i = 0; i < total; ++i) a.data.push_back(static_cast<std::uint8_t>(rng()));
    EXPECT_EQ(read_idx(write_idx(a)), a);
  }
}

TEST(Idx, LabelledDatasetFromFiles) {
  const IdxArray images{kIdxImages, {3, 2, 2}, {0, 255, 0, 255, 255, 255, 0, 0, 51, 51, 51, 51}};
  const IdxArray labels{kIdxLabels, {3}, {1, 4, 1}};
  const FactorDataset ds = dataset_from_idx(images, labels);
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.input_dim, 4u);
  EXPECT_EQ(ds.cardinalities, (std::vector<std::size_t>{5}));
  EXPECT_DOUBLE_EQ(ds.sample(2)[0], 0.2);
}

// ---- batches ---------------------------------------------------------------

TEST(BatchIterator, EpochCoversDatasetOnce) {
  BatchIterator it(23, 5, 3);
  const auto batches = it.epoch();
  ASSERT_EQ(batches.size(), 5u);
  EXPECT_EQ(batches.back().size(), 3u);
  std::vector<std::size_t> all;
  for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 23; ++i) EXPECT_EQ(all[i], i);
}

TEST(BatchIterator, SeededAndDropsPartialBatch) {
  BatchIterator a(23, 5, 3), b(23, 5, 3), c(23, 5, 4);
  EXPECT_EQ(a.epoch(), b.epoch());
  EXPECT_NE(a.epoch(), c.epoch());
  BatchIterator d(23, 5, 3, true);
  const auto batches = d.epoch();
  EXPECT_EQ(batches.size(), 4u);
  for (const auto& batch : batches) EXPECT_EQ(batch.size(), 5u);
  for (int k = 0; k < 20; ++k) EXPECT_EQ(d.next().size(), 5u);
}

TEST(BatchIterator, EpochsArePermutationsThatChange) {
  BatchIterator it(10, 10, 1);
  const auto first = it.next();
  const auto second = it.next();
  EXPECT_NE(first, second);
  EXPECT_EQ(it.epochs_started(), 2u);
}

TEST(BatchIterator, RejectsBadBatchSizes) {
  EXPECT_THROW(BatchIterator(10, 0, 1), std::invalid_argument);
  EXPECT_THROW(BatchIterator(10, 11, 1), std::invalid_argument);
}
