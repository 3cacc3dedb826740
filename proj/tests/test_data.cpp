#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "shakedrop/data.hpp"
#include "shakedrop/metrics.hpp"

namespace shakedrop {
namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TEST(CifarReader, TwoRecordFile) {
  const std::string path = temp_path("cifar_two.bin");
  {
    std::ofstream f(path, std::ios::binary);
    f.put(3);
    for (int i = 0; i < 3072; ++i) f.put(static_cast<char>(255));
    f.put(7);
    for (int i = 0; i < 3072; ++i) f.put(static_cast<char>(255));
  }
  const LabeledImageSet set = load_cifar_binary(path, CifarVariant::Cifar10);
  ASSERT_EQ(set.size(), 2);
  EXPECT_EQ(set.labels[0], 3);
  EXPECT_EQ(set.labels[1], 7);
  for (Real p : set.pixels) EXPECT_EQ(p, 1.0);
  std::filesystem::remove(path);
}

TEST(CifarReader, EmptyFileIsValidEmptySet) {
  const std::string path = temp_path("cifar_empty.bin");
  { std::ofstream f(path, std::ios::binary); }
  const LabeledImageSet set = load_cifar_binary(path, CifarVariant::Cifar10);
  EXPECT_EQ(set.size(), 0);
  std::filesystem::remove(path);
}

TEST(CifarReader, TruncatedFileIsAnError) {
  const std::string path = temp_path("cifar_trunc.bin");
  {
    std::ofstream f(path, std::ios::binary);
    for (int i = 0; i < 3073 * 2 + 1; ++i) f.put(0);
  }
  EXPECT_THROW(load_cifar_binary(path, CifarVariant::Cifar10), std::runtime_error);
  std::filesystem::remove(path);
}

TEST(CifarReader, Cifar100UsesFineLabel) {
  const std::string path = temp_path("cifar100_one.bin");
  {
    std::ofstream f(path, std::ios::binary);
    f.put(5);   // coarse
    f.put(42);  // fine
    for (int i = 0; i < 3072; ++i) f.put(static_cast<char>(128));
  }
  const LabeledImageSet set = load_cifar_binary(path, CifarVariant::Cifar100);
  ASSERT_EQ(set.size(), 1);
  EXPECT_EQ(set.labels[0], 42);
  EXPECT_NEAR(set.pixels[0], 128.0 / 255.0, 1e-15);
  std::filesystem::remove(path);
}

TEST(CifarReader, WriterReaderRoundTripIsExact) {
  RngStream rng(10);
  LabeledImageSet set;
  set.channels = 3;
  set.height = 32;
  set.width = 32;
  set.num_classes = 10;
  const int n = 5;
  set.labels.resize(n);
  set.pixels.resize(static_cast<std::size_t>(n) * 3 * 32 * 32);
  for (int i = 0; i < n; ++i) set.labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.next_below(10));
  for (Real& p : set.pixels) p = static_cast<Real>(rng.next_below(256)) / 255.0;

  for (CifarVariant v : {CifarVariant::Cifar10, CifarVariant::Cifar100}) {
    const std::string path = temp_path("cifar_rt.bin");
    LabeledImageSet src = set;
    src.num_classes = v == CifarVariant::Cifar10 ? 10 : 100;
    write_cifar_binary(src, path, v);
    const LabeledImageSet back = load_cifar_binary(path, v);
    ASSERT_EQ(back.size(), n);
    EXPECT_EQ(back.labels, src.labels);
    for (std::size_t i = 0; i < src.pixels.size(); ++i) ASSERT_EQ(back.pixels[i], src.pixels[i]);
    std::filesystem::remove(path);
  }
}

TEST(Augment, NormalizeOnlyWhenEverythingElseDisabled) {
  Tensor batch(Shape{1, 2, 2, 2}, std::vector<Real>{0.0, 0.5, 1.0, 0.25, 0.5, 0.5, 0.5, 0.5});
  AugmentConfig cfg;
  cfg.flip_enabled = false;
  cfg.pad_crop_enabled = false;
  cfg.channel_mean = {0.25, 0.5};
  cfg.channel_std = {0.5, 2.0};
  RngStream rng(1);
  const std::uint64_t before = rng.state();
  const Tensor out = augment(batch, cfg, rng);
  EXPECT_EQ(rng.state(), before);  // no draws consumed
  EXPECT_EQ(out[0], (0.0 - 0.25) / 0.5);
  EXPECT_EQ(out[1], (0.5 - 0.25) / 0.5);
  EXPECT_EQ(out[4], 0.0);
}

TEST(Augment, CertainFlipReversesColumns) {
  Tensor batch(Shape{1, 1, 2, 3}, std::vector<Real>{1, 2, 3, 4, 5, 6});
  AugmentConfig cfg;
  cfg.normalize = false;
  cfg.flip_probability = 1.0;
  cfg.pad_crop_enabled = false;
  RngStream rng(1);
  const Tensor out = augment(batch, cfg, rng);
  const std::vector<Real> expect{3, 2, 1, 6, 5, 4};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(out[i], expect[static_cast<std::size_t>(i)]);
}

TEST(Augment, FlipFrequencyIsHalf) {
  Tensor batch(Shape{1, 1, 1, 2}, std::vector<Real>{0.0, 1.0});
  AugmentConfig cfg;
  cfg.normalize = false;
  cfg.pad_crop_enabled = false;
  RngStream rng(2);
  int flips = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const Tensor out = augment(batch, cfg, rng);
    if (out[0] == 1.0) ++flips;
  }
  EXPECT_NEAR(flips / static_cast<Real>(draws), 0.5, 0.015);
}

TEST(Augment, PadAndCropKeepShapeAndStayInZeroBorder) {
  Tensor batch(Shape{2, 1, 4, 4}, 1.0);
  AugmentConfig cfg;
  cfg.normalize = false;
  cfg.flip_enabled = false;
  cfg.pad = 2;
  cfg.crop = 4;
  RngStream rng(3);
  const Tensor out = augment(batch, cfg, rng);
  EXPECT_EQ(out.shape(), (Shape{2, 1, 4, 4}));
  for (int i = 0; i < out.numel(); ++i) EXPECT_TRUE(out[i] == 0.0 || out[i] == 1.0);
  AugmentConfig bad = cfg;
  bad.crop = 10;  // larger than 4 + 2*2
  EXPECT_THROW(augment(batch, bad, rng), std::invalid_argument);
}

TEST(Augment, NormalizationIsInvertible) {
  RngStream rng(4);
  Tensor batch(Shape{2, 3, 4, 4});
  for (int i = 0; i < batch.numel(); ++i) batch[i] = rng.next_uniform();
  const std::vector<Real> mean{0.3, 0.6, 0.1};
  const std::vector<Real> stdv{0.5, 0.25, 2.0};
  const Tensor norm = normalize_images(batch, mean, stdv);
  const int HW = 16;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < HW; ++i) {
        const int idx = (n * 3 + c) * HW + i;
        EXPECT_NEAR(norm[idx] * stdv[static_cast<std::size_t>(c)] +
                        mean[static_cast<std::size_t>(c)],
                    batch[idx], 1e-12);
      }
}

TEST(Mixup, FrozenLambdaOneIsIdentity) {
  Tensor images(Shape{2, 1, 1, 2}, std::vector<Real>{1, 2, 3, 4});
  Tensor labels = one_hot({0, 1}, 2);
  const auto [mi, ml] = mixup_with(images, labels, 1.0, {1, 0});
  EXPECT_TRUE(bitwise_equal(mi, images));
  EXPECT_TRUE(bitwise_equal(ml, labels));
}

TEST(Mixup, HalfLambdaMutualPairAverages) {
  Tensor images(Shape{2, 1, 1, 2}, std::vector<Real>{0.0, 0.0, 1.0, 1.0});
  Tensor labels = one_hot({0, 1}, 2);
  const auto [mi, ml] = mixup_with(images, labels, 0.5, {1, 0});
  for (int i = 0; i < 4; ++i) EXPECT_EQ(mi[i], 0.5);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(ml[i], 0.5);
}

TEST(Mixup, LabelsStayConvex) {
  RngStream rng(5);
  Tensor images(Shape{8, 1, 2, 2});
  for (int i = 0; i < images.numel(); ++i) images[i] = rng.next_uniform();
  std::vector<int> raw(8);
  for (int i = 0; i < 8; ++i) raw[static_cast<std::size_t>(i)] = static_cast<int>(rng.next_below(3));
  Tensor labels = one_hot(raw, 3);
  for (int rep = 0; rep < 50; ++rep) {
    const auto [mi, ml] = mixup(images, labels, 0.4, rng);
    for (int n = 0; n < 8; ++n) {
      Real row = 0.0;
      for (int k = 0; k < 3; ++k) {
        EXPECT_GE(ml[n * 3 + k], 0.0);
        row += ml[n * 3 + k];
      }
      EXPECT_NEAR(row, 1.0, 1e-12);
    }
  }
}

TEST(Mixup, TinyBatchPassesThrough) {
  Tensor images(Shape{1, 1, 1, 2}, std::vector<Real>{1, 2});
  Tensor labels = one_hot({0}, 2);
  RngStream rng(6);
  const std::uint64_t before = rng.state();
  const auto [mi, ml] = mixup(images, labels, 1.0, rng);
  EXPECT_TRUE(bitwise_equal(mi, images));
  EXPECT_EQ(rng.state(), before);
  EXPECT_THROW(mixup(images, labels, 0.0, rng), std::invalid_argument);
}

TEST(Synth, BlobsAreNearestCentroidSeparableAtZeroNoise) {
  const LabeledImageSet set =
      synth_dataset(SynthKind::Blobs, 40, 4, 0.0, 3, 8, 8, RngStream(42));
  const int sz = set.image_numel();
  // Class centroids from the data itself.
  std::vector<std::vector<Real>> centroid(4, std::vector<Real>(static_cast<std::size_t>(sz), 0.0));
  std::vector<int> count(4, 0);
  for (int i = 0; i < set.size(); ++i) {
    const int k = set.labels[static_cast<std::size_t>(i)];
    ++count[static_cast<std::size_t>(k)];
    for (int j = 0; j < sz; ++j)
      centroid[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] +=
          set.pixels[static_cast<std::size_t>(i) * sz + static_cast<std::size_t>(j)];
  }
  for (int k = 0; k < 4; ++k)
    for (Real& v : centroid[static_cast<std::size_t>(k)]) v /= count[static_cast<std::size_t>(k)];
  int wrong = 0;
  for (int i = 0; i < set.size(); ++i) {
    int best = -1;
    Real best_d = 1e300;
    for (int k = 0; k < 4; ++k) {
      Real d = 0.0;
      for (int j = 0; j < sz; ++j) {
        const Real diff = set.pixels[static_cast<std::size_t>(i) * sz + static_cast<std::size_t>(j)] -
                          centroid[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (best != set.labels[static_cast<std::size_t>(i)]) ++wrong;
  }
  EXPECT_EQ(wrong, 0);
}

TEST(Synth, DeterministicAndBalanced) {
  for (SynthKind kind : {SynthKind::Blobs, SynthKind::Spiral, SynthKind::StripedImages}) {
    const LabeledImageSet a = synth_dataset(kind, 41, 4, 0.2, 3, 8, 8, RngStream(9));
    const LabeledImageSet b = synth_dataset(kind, 41, 4, 0.2, 3, 8, 8, RngStream(9));
    EXPECT_EQ(a.pixels, b.pixels);
    EXPECT_EQ(a.labels, b.labels);
    std::vector<int> hist(4, 0);
    for (int l : a.labels) ++hist[static_cast<std::size_t>(l)];
    for (int k = 0; k < 4; ++k) EXPECT_LE(std::abs(hist[static_cast<std::size_t>(k)] - 41 / 4), 1);
    for (Real p : a.pixels) {
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
    }
  }
  EXPECT_THROW(synth_dataset(SynthKind::Blobs, 2, 4, 0.0, 3, 8, 8, RngStream(9)),
               std::invalid_argument);
}

TEST(MetricsCsv, HeaderOnlyForEmptyRecords) {
  EXPECT_EQ(metrics_csv_string({}), std::string(kMetricsCsvHeader) + "\n");
}

TEST(MetricsCsv, TwoRecordsMakeThreeLines) {
  std::vector<MetricsRecord> rec(2);
  rec[0].epoch = 0;
  rec[1].epoch = 1;
  const std::string text = metrics_csv_string(rec);
  int lines = 0;
  for (char ch : text)
    if (ch == '\n') ++lines;
  EXPECT_EQ(lines, 3);
  EXPECT_EQ(text.find('\r'), std::string::npos);  // LF endings only
}

TEST(MetricsCsv, RoundTripUpToPrintedPrecision) {
  std::vector<MetricsRecord> rec(3);
  RngStream rng(12);
  for (int i = 0; i < 3; ++i) {
    rec[static_cast<std::size_t>(i)].epoch = i;
    rec[static_cast<std::size_t>(i)].train_loss = rng.next_uniform(0.0, 3.0);
    rec[static_cast<std::size_t>(i)].train_top1 = rng.next_uniform(0.0, 100.0);
    rec[static_cast<std::size_t>(i)].eval_loss = rng.next_uniform(0.0, 3.0);
    rec[static_cast<std::size_t>(i)].eval_top1 = rng.next_uniform(0.0, 100.0);
    rec[static_cast<std::size_t>(i)].lr = 0.1;
    rec[static_cast<std::size_t>(i)].wall_time_s = rng.next_uniform(0.0, 10.0);
  }
  const std::string once = metrics_csv_string(rec);
  const std::string twice = metrics_csv_string(parse_metrics_csv_string(once));
  EXPECT_EQ(once, twice);

  const std::string path = temp_path("metrics_rt.csv");
  write_metrics_csv(rec, path);
  EXPECT_EQ(metrics_csv_string(parse_metrics_csv(path)), once);
  std::filesystem::remove(path);
  EXPECT_THROW(parse_metrics_csv_string("bogus\n1,2\n"), std::runtime_error);
}

}  // namespace
}  // namespace shakedrop
