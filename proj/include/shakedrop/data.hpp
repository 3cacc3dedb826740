#ifndef SHAKEDROP_DATA_HPP_
#define SHAKEDROP_DATA_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "shakedrop/rng.hpp"
#include "shakedrop/tensor.hpp"

namespace shakedrop {

// Image dataset with pixels in [0, 1] before normalization, stored flat in
// NCHW order so that the empty set is representable. channel_mean/std hold
// the normalization constants resolved from the training split (identity
// until compute_normalization runs).
struct LabeledImageSet {
  int channels = 0, height = 0, width = 0;
  std::vector<Real> pixels;  // size() * channels * height * width values
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<Real> channel_mean, channel_std;

  int size() const { return static_cast<int>(labels.size()); }
  int image_numel() const { return channels * height * width; }

  void validate() const {
    if (channels < 1 || height < 1 || width < 1)
      throw std::invalid_argument("dataset: image dimensions must be >= 1");
    if (pixels.size() != labels.size() * static_cast<std::size_t>(image_numel()))
      throw std::invalid_argument("dataset: pixel buffer does not match label count");
    for (int l : labels)
      if (l < 0 || l >= num_classes)
        throw std::invalid_argument("dataset: label " + std::to_string(l) + " out of range [0," +
                                    std::to_string(num_classes) + ")");
  }

  // Gathers rows into an N x C x H x W tensor.
  Tensor gather(const std::vector<int>& indices) const {
    if (indices.empty()) throw std::invalid_argument("dataset: cannot gather an empty batch");
    const int sz = image_numel();
    Tensor out(Shape{static_cast<int>(indices.size()), channels, height, width});
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const int idx = indices[i];
      if (idx < 0 || idx >= size()) throw std::invalid_argument("dataset: gather index out of range");
      std::copy_n(pixels.data() + static_cast<std::size_t>(idx) * sz, sz,
                  out.data() + static_cast<std::size_t>(i) * sz);
    }
    return out;
  }

  std::vector<int> gather_labels(const std::vector<int>& indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (int idx : indices) out.push_back(labels[static_cast<std::size_t>(idx)]);
    return out;
  }
};

// Fills channel_mean/std from the set's own images (population std; a floor
// avoids division by zero on constant channels).
inline void compute_normalization(LabeledImageSet& set) {
  const int C = set.channels;
  const int HW = set.height * set.width;
  set.channel_mean.assign(static_cast<std::size_t>(C), 0.0);
  set.channel_std.assign(static_cast<std::size_t>(C), 1.0);
  if (set.size() == 0) return;
  const Real M = static_cast<Real>(set.size()) * HW;
  for (int c = 0; c < C; ++c) {
    Real s = 0.0;
    for (int n = 0; n < set.size(); ++n) {
      const Real* p = set.pixels.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      for (int i = 0; i < HW; ++i) s += p[i];
    }
    const Real mean = s / M;
    Real v = 0.0;
    for (int n = 0; n < set.size(); ++n) {
      const Real* p = set.pixels.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      for (int i = 0; i < HW; ++i) v += (p[i] - mean) * (p[i] - mean);
    }
    set.channel_mean[static_cast<std::size_t>(c)] = mean;
    set.channel_std[static_cast<std::size_t>(c)] = std::max(std::sqrt(v / M), 1e-8);
  }
}

// ---------------------------------------------------------------------------
// CIFAR binary format
// ---------------------------------------------------------------------------

enum class CifarVariant { Cifar10, Cifar100 };

// Record layout: cifar10 = 1 label byte + 3072 pixel bytes; cifar100 =
// coarse + fine label bytes + 3072 pixel bytes (the fine label is used).
// Pixels are three 1024-byte row-major planes in R, G, B order, scaled to
// [0, 1] on load. A file whose size is not a record multiple is an error;
// an empty file yields a valid empty set.
inline LabeledImageSet load_cifar_binary(const std::string& path, CifarVariant variant) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cifar: cannot open " + path);
  const std::streamoff size = f.tellg();
  f.seekg(0);
  const int label_bytes = variant == CifarVariant::Cifar10 ? 1 : 2;
  const int record = label_bytes + 3 * 32 * 32;
  if (size % record != 0)
    throw std::runtime_error("cifar: " + path + " is " + std::to_string(size) +
                             " bytes, not a multiple of the " + std::to_string(record) +
                             "-byte record length");
  const int n = static_cast<int>(size / record);
  LabeledImageSet set;
  set.channels = 3;
  set.height = 32;
  set.width = 32;
  set.num_classes = variant == CifarVariant::Cifar10 ? 10 : 100;
  set.labels.resize(static_cast<std::size_t>(n));
  set.pixels.resize(static_cast<std::size_t>(n) * 3 * 32 * 32);
  std::vector<unsigned char> buf(static_cast<std::size_t>(record));
  for (int i = 0; i < n; ++i) {
    f.read(reinterpret_cast<char*>(buf.data()), record);
    if (!f) throw std::runtime_error("cifar: truncated read in " + path);
    set.labels[static_cast<std::size_t>(i)] = buf[static_cast<std::size_t>(label_bytes - 1)];
    Real* img = set.pixels.data() + static_cast<std::size_t>(i) * 3 * 32 * 32;
    for (int j = 0; j < 3 * 32 * 32; ++j)
      img[j] = static_cast<Real>(buf[static_cast<std::size_t>(label_bytes + j)]) / 255.0;
  }
  set.validate();
  return set;
}

// Inverse of load_cifar_binary (pixels rounded back to bytes). cifar100
// records carry a zero coarse label.
inline void write_cifar_binary(const LabeledImageSet& set, const std::string& path,
                               CifarVariant variant) {
  if (set.size() > 0 && (set.channels != 3 || set.height != 32 || set.width != 32))
    throw std::invalid_argument("cifar: writer requires 3x32x32 images");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cifar: cannot open " + path + " for writing");
  for (int i = 0; i < set.size(); ++i) {
    if (variant == CifarVariant::Cifar100) f.put(0);
    f.put(static_cast<char>(set.labels[static_cast<std::size_t>(i)]));
    const Real* img = set.pixels.data() + static_cast<std::size_t>(i) * 3 * 32 * 32;
    for (int j = 0; j < 3 * 32 * 32; ++j) {
      const int b = static_cast<int>(std::lround(img[j] * 255.0));
      f.put(static_cast<char>(std::clamp(b, 0, 255)));
    }
  }
  if (!f) throw std::runtime_error("cifar: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
  bool normalize = true;
  bool flip_enabled = true;
  Real flip_probability = 0.5;
  bool pad_crop_enabled = true;
  int pad = 4;
  int crop = 32;
  Real mixup_alpha = 0.0;  // 0 = off
  std::vector<Real> channel_mean, channel_std;  // resolved from the train split

  void validate(int h, int w) const {
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0))
      throw std::invalid_argument("augment: flip_probability must lie in [0, 1]");
    if (pad < 0) throw std::invalid_argument("augment: pad must be >= 0");
    if (mixup_alpha < 0.0) throw std::invalid_argument("augment: mixup parameter must be >= 0");
    if (pad_crop_enabled && pad > 0) {
      if (crop < 1) throw std::invalid_argument("augment: crop must be >= 1");
      if (crop > h + 2 * pad || crop > w + 2 * pad)
        throw std::invalid_argument("augment: crop larger than the padded image");
    }
  }
};

inline Tensor normalize_images(const Tensor& batch, const std::vector<Real>& mean,
                               const std::vector<Real>& std) {
  const int N = batch.dim(0), C = batch.dim(1);
  const int HW = batch.dim(2) * batch.dim(3);
  if (static_cast<int>(mean.size()) != C || static_cast<int>(std.size()) != C)
    throw std::invalid_argument("normalize: constants do not match channel count");
  Tensor out = batch;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      Real* p = out.data() + ((n * C + c) * HW);
      const Real m = mean[static_cast<std::size_t>(c)], s = std[static_cast<std::size_t>(c)];
      for (int i = 0; i < HW; ++i) p[i] = (p[i] - m) / s;
    }
  return out;
}

// Per image and in order: color normalization, horizontal flip with the
// configured probability, zero padding (in normalized space) and uniform
// random crop back to the target size. Disabled steps consume no draws.
inline Tensor augment(const Tensor& batch, const AugmentConfig& cfg, RngStream& rng) {
  const int N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  cfg.validate(H, W);
  Tensor work = cfg.normalize ? normalize_images(batch, cfg.channel_mean, cfg.channel_std) : batch;

  const bool flip = cfg.flip_enabled && cfg.flip_probability > 0.0;
  const bool crop = cfg.pad_crop_enabled && cfg.pad > 0;
  if (!flip && !crop) return work;

  const int Ho = crop ? cfg.crop : H;
  const int Wo = crop ? cfg.crop : W;
  Tensor out(Shape{N, C, Ho, Wo});
  for (int n = 0; n < N; ++n) {
    const bool do_flip = flip && rng.next_bernoulli(cfg.flip_probability);
    int dy = 0, dx = 0;
    if (crop) {
      dy = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(2 * cfg.pad + 1)));
      dx = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(2 * cfg.pad + 1)));
    }
    for (int c = 0; c < C; ++c) {
      for (int ho = 0; ho < Ho; ++ho) {
        const int hi = crop ? ho + dy - cfg.pad : ho;
        for (int wo = 0; wo < Wo; ++wo) {
          int wi = crop ? wo + dx - cfg.pad : wo;
          if (do_flip && wi >= 0 && wi < W) wi = W - 1 - wi;
          out.at(n, c, ho, wo) =
              (hi >= 0 && hi < H && wi >= 0 && wi < W) ? work.at(n, c, hi, wi) : 0.0;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// mixup
// ---------------------------------------------------------------------------

inline Tensor one_hot(const std::vector<int>& labels, int num_classes) {
  Tensor out(Shape{static_cast<int>(labels.size()), num_classes});
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] < 0 || labels[n] >= num_classes)
      throw std::invalid_argument("one_hot: label out of range");
    out[static_cast<int>(n) * num_classes + labels[n]] = 1.0;
  }
  return out;
}

// Deterministic mixup core: x_i' = lambda*x_i + (1-lambda)*x_{perm(i)} and
// the same combination on labels.
inline std::pair<Tensor, Tensor> mixup_with(const Tensor& images, const Tensor& labels_onehot,
                                            Real lambda, const std::vector<int>& perm) {
  const int N = images.dim(0);
  if (labels_onehot.dim(0) != N) throw std::invalid_argument("mixup: label batch mismatch");
  if (static_cast<int>(perm.size()) != N) throw std::invalid_argument("mixup: bad permutation");
  const int img_sz = images.numel() / N;
  const int lab_sz = labels_onehot.numel() / N;
  Tensor mixed_images = Tensor::zeros_like(images);
  Tensor mixed_labels = Tensor::zeros_like(labels_onehot);
  for (int n = 0; n < N; ++n) {
    const int m = perm[static_cast<std::size_t>(n)];
    if (m < 0 || m >= N) throw std::invalid_argument("mixup: permutation index out of range");
    for (int i = 0; i < img_sz; ++i)
      mixed_images[n * img_sz + i] =
          lambda * images[n * img_sz + i] + (1.0 - lambda) * images[m * img_sz + i];
    for (int i = 0; i < lab_sz; ++i)
      mixed_labels[n * lab_sz + i] =
          lambda * labels_onehot[n * lab_sz + i] + (1.0 - lambda) * labels_onehot[m * lab_sz + i];
  }
  return {std::move(mixed_images), std::move(mixed_labels)};
}

// Draws lambda ~ Beta(a, a) once per batch, pairs every sample with a random
// permutation partner and convexly combines both images and one-hot labels.
// Batches of size < 2 pass through unchanged.
inline std::pair<Tensor, Tensor> mixup(const Tensor& images, const Tensor& labels_onehot, Real a,
                                       RngStream& rng) {
  if (!(a > 0.0)) throw std::invalid_argument("mixup: Beta parameter must be positive");
  const int N = images.dim(0);
  if (labels_onehot.dim(0) != N) throw std::invalid_argument("mixup: label batch mismatch");
  if (N < 2) return {images, labels_onehot};
  const Real lambda = rng.next_beta(a, a);
  std::vector<int> perm(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) perm[static_cast<std::size_t>(i)] = i;
  for (int i = N - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(rng.next_below(static_cast<std::uint64_t>(i + 1)))]);
  return mixup_with(images, labels_onehot, lambda, perm);
}

// ---------------------------------------------------------------------------
// Synthetic datasets
// ---------------------------------------------------------------------------

enum class SynthKind { Blobs, Spiral, StripedImages };

// Deterministic class-separable image sets for desk-scale runs. Labels are
// assigned round-robin, so class counts are balanced within one. The class
// structure (blob templates) depends only on rng, not on split, so distinct
// splits of the same generator share classes while drawing their own samples.
inline LabeledImageSet synth_dataset(SynthKind kind, int n, int num_classes, Real noise, int C,
                                     int H, int W, RngStream rng, std::uint64_t split = 0) {
  if (n < num_classes) throw std::invalid_argument("synth: need at least one sample per class");
  LabeledImageSet set;
  set.channels = C;
  set.height = H;
  set.width = W;
  set.num_classes = num_classes;
  set.pixels.resize(static_cast<std::size_t>(n) * C * H * W);
  set.labels.resize(static_cast<std::size_t>(n));
  const int img_sz = C * H * W;

  std::vector<Real> templates;
  RngStream template_rng = rng.child("templates");
  if (kind == SynthKind::Blobs) {
    templates.resize(static_cast<std::size_t>(num_classes) * img_sz);
    for (Real& v : templates) v = template_rng.next_uniform();
  }

  RngStream sample_rng = rng.child("samples", split);
  for (int i = 0; i < n; ++i) {
    const int k = i % num_classes;
    set.labels[static_cast<std::size_t>(i)] = k;
    Real* img = set.pixels.data() + static_cast<std::size_t>(i) * img_sz;
    switch (kind) {
      case SynthKind::Blobs:
        for (int j = 0; j < img_sz; ++j)
          img[j] = templates[static_cast<std::size_t>(k) * img_sz + j];
        break;
      case SynthKind::StripedImages: {
        // Class-specific grating frequency/orientation, random phase.
        const Real freq = 1.0 + k / 2;
        const bool horizontal = k % 2 == 0;
        const Real phase = sample_rng.next_uniform(0.0, 6.283185307179586);
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
              const Real coord = horizontal ? static_cast<Real>(h) / H : static_cast<Real>(w) / W;
              img[(c * H + h) * W + w] =
                  0.5 + 0.5 * std::sin(6.283185307179586 * freq * coord + phase);
            }
        break;
      }
      case SynthKind::Spiral: {
        // Point on the class's spiral arm, rendered as two orthogonal
        // intensity gradients.
        const Real tmax = 2.5 * 3.141592653589793;
        const Real tv = sample_rng.next_uniform(0.25, 1.0) * tmax;
        const Real angle = tv + 6.283185307179586 * k / num_classes;
        const Real r = tv / tmax;
        const Real x = r * std::cos(angle), y = r * std::sin(angle);
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
              const Real u = W > 1 ? static_cast<Real>(w) / (W - 1) - 0.5 : 0.0;
              const Real v = H > 1 ? static_cast<Real>(h) / (H - 1) - 0.5 : 0.0;
              img[(c * H + h) * W + w] = std::clamp(0.5 + 0.45 * (x * u + y * v), 0.0, 1.0);
            }
        break;
      }
    }
    if (noise > 0.0)
      for (int j = 0; j < img_sz; ++j)
        img[j] = std::clamp(img[j] + noise * sample_rng.next_normal(), 0.0, 1.0);
  }
  set.validate();
  return set;
}

}  // namespace shakedrop

#endif  // SHAKEDROP_DATA_HPP_
