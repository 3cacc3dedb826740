#ifndef SHAKEDROP_TRAINING_HPP_
#define SHAKEDROP_TRAINING_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "shakedrop/data.hpp"
#include "shakedrop/metrics.hpp"
#include "shakedrop/network.hpp"
#include "shakedrop/optimizer.hpp"

namespace shakedrop {

struct EvalResult {
  Real loss = 0.0;
  Real top1_error = 0.0;  // percent
};

namespace detail {

// Argmax with ties broken toward the lowest class index.
inline int argmax_row(const Tensor& logits, int row) {
  const int K = logits.dim(1);
  int best = 0;
  for (int k = 1; k < K; ++k)
    if (logits[row * K + k] > logits[row * K + best]) best = k;
  return best;
}

}  // namespace detail

// Eval-phase pass over a dataset: mean cross entropy and top-1 error percent.
// Takes no random generator; the Eval phase draws nothing by construction.
inline EvalResult evaluate(Network& net, const LabeledImageSet& dataset, int batch_size = 256) {
  if (dataset.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be >= 1");
  const std::vector<Real> mean = dataset.channel_mean.empty()
                                     ? std::vector<Real>(static_cast<std::size_t>(dataset.channels), 0.0)
                                     : dataset.channel_mean;
  const std::vector<Real> stdv = dataset.channel_std.empty()
                                     ? std::vector<Real>(static_cast<std::size_t>(dataset.channels), 1.0)
                                     : dataset.channel_std;
  Real loss_sum = 0.0;
  int wrong = 0;
  for (int start = 0; start < dataset.size(); start += batch_size) {
    const int n = std::min(batch_size, dataset.size() - start);
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), start);
    Tensor images = normalize_images(dataset.gather(idx), mean, stdv);
    const std::vector<int> labels = dataset.gather_labels(idx);
    Tape tape;
    Value logits = net.forward(tape, images, Phase::Eval);
    Value loss = softmax_cross_entropy(tape, logits, labels);
    loss_sum += tape.value(loss)[0] * n;
    const Tensor& lv = tape.value(logits);
    for (int i = 0; i < n; ++i)
      if (detail::argmax_row(lv, i) != labels[static_cast<std::size_t>(i)]) ++wrong;
  }
  EvalResult r;
  r.loss = loss_sum / dataset.size();
  r.top1_error = 100.0 * wrong / dataset.size();
  return r;
}

struct TrainOptions {
  int replicas = 1;
  bool measure_wall_time = true;
  AugmentConfig augment;  // normalization constants + flip/pad/crop + mixup
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  bool diverged = false;
  int diverged_epoch = -1;
  std::uint64_t steps = 0;
};

// SGD training loop. Per epoch: seeded shuffle, minibatches in Train phase
// (last partial batch kept), one optimizer step per batch, then an Eval pass
// on the evaluation split. Replicas > 1 shard each minibatch; every shard
// runs forward/backward with its own regularizer streams and the shard
// gradients combine into the global batch mean before the shared step.
// A non-finite loss or gradient aborts the step before any parameter is
// touched and halts training with the metrics so far preserved.
inline TrainResult train(Network& net, const LabeledImageSet& train_set,
                         const LabeledImageSet& eval_set, const OptimizerConfig& opt_cfg,
                         const LRSchedule& sched, const TrainOptions& options, RngStream rng,
                         MetricsSink* sink = nullptr) {
  opt_cfg.validate();
  sched.validate();
  train_set.validate();
  eval_set.validate();
  if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
  if (opt_cfg.batch_size > train_set.size())
    throw std::invalid_argument("train: batch_size exceeds the dataset size");
  if (options.replicas < 1) throw std::invalid_argument("train: replicas must be >= 1");

  TrainResult result;
  SgdOptimizer optimizer(net.parameters(), opt_cfg);
  net.zero_grads();
  std::uint64_t global_step = 0;
  const int n_train = train_set.size();

  for (int epoch = 0; epoch < sched.total_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const Real lr = lr_at(epoch, sched, opt_cfg.base_lr);

    std::vector<int> order(static_cast<std::size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);
    RngStream shuffle_rng = rng.child("shuffle", static_cast<std::uint64_t>(epoch));
    for (int i = n_train - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(shuffle_rng.next_below(
                    static_cast<std::uint64_t>(i + 1)))]);

    Real train_loss_sum = 0.0;
    int train_wrong = 0, train_seen = 0;
    bool epoch_diverged = false;

    for (int start = 0; start < n_train && !epoch_diverged; start += opt_cfg.batch_size) {
      const int bn = std::min(opt_cfg.batch_size, n_train - start);
      std::vector<int> batch(order.begin() + start, order.begin() + start + bn);
      Tensor images = train_set.gather(batch);
      std::vector<int> labels = train_set.gather_labels(batch);

      RngStream aug_rng = rng.child("augment", global_step);
      images = augment(images, options.augment, aug_rng);

      const bool use_mixup = options.augment.mixup_alpha > 0.0;
      Tensor soft_labels;
      if (use_mixup) {
        RngStream mix_rng = rng.child("mixup", global_step);
        auto mixed = mixup(images, one_hot(labels, train_set.num_classes),
                           options.augment.mixup_alpha, mix_rng);
        images = std::move(mixed.first);
        soft_labels = std::move(mixed.second);
      }

      net.set_step(global_step);
      const int R = std::min(options.replicas, bn);
      const int q = bn / R, rem = bn % R;
      int row = 0;
      for (int r = 0; r < R && !epoch_diverged; ++r) {
        const int shard_n = q + (r < rem ? 1 : 0);
        if (shard_n == 0) continue;
        Tensor shard_images(Shape{shard_n, images.dim(1), images.dim(2), images.dim(3)});
        const int sz = images.numel() / bn;
        for (int i = 0; i < shard_n; ++i)
          std::copy_n(images.data() + static_cast<std::size_t>(row + i) * sz, sz,
                      shard_images.data() + static_cast<std::size_t>(i) * sz);

        net.set_replica(r);
        Tape tape;
        Value logits = net.forward(tape, shard_images, Phase::Train);
        Value loss{-1};
        if (use_mixup) {
          Tensor shard_targets(Shape{shard_n, train_set.num_classes});
          const int K = train_set.num_classes;
          for (int i = 0; i < shard_n; ++i)
            std::copy_n(soft_labels.data() + static_cast<std::size_t>(row + i) * K, K,
                        shard_targets.data() + static_cast<std::size_t>(i) * K);
          loss = softmax_cross_entropy_soft(tape, logits, shard_targets);
        } else {
          std::vector<int> shard_labels(labels.begin() + row, labels.begin() + row + shard_n);
          loss = softmax_cross_entropy(tape, logits, shard_labels);
        }

        const Real loss_val = tape.value(loss)[0];
        if (!std::isfinite(loss_val)) {
          epoch_diverged = true;
          break;
        }
        tape.backward(loss, static_cast<Real>(shard_n) / bn);

        train_loss_sum += loss_val * shard_n;
        const Tensor& lv = tape.value(logits);
        for (int i = 0; i < shard_n; ++i)
          if (detail::argmax_row(lv, i) != labels[static_cast<std::size_t>(row + i)]) ++train_wrong;
        train_seen += shard_n;
        row += shard_n;
      }
      if (epoch_diverged) {
        net.zero_grads();
        break;
      }
      if (!optimizer.step(net.parameters(), lr)) {
        net.zero_grads();
        epoch_diverged = true;
        break;
      }
      ++global_step;
      ++result.steps;
    }

    MetricsRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    if (epoch_diverged) {
      rec.train_loss = std::numeric_limits<Real>::quiet_NaN();
      rec.train_top1 = train_seen > 0 ? 100.0 * train_wrong / train_seen : 100.0;
    } else {
      rec.train_loss = train_seen > 0 ? train_loss_sum / train_seen : 0.0;
      rec.train_top1 = train_seen > 0 ? 100.0 * train_wrong / train_seen : 0.0;
    }
    if (eval_set.size() > 0) {
      const EvalResult ev = evaluate(net, eval_set, opt_cfg.batch_size);
      rec.eval_loss = ev.loss;
      rec.eval_top1 = ev.top1_error;
    }
    rec.wall_time_s =
        options.measure_wall_time
            ? std::chrono::duration<Real>(std::chrono::steady_clock::now() - epoch_start).count()
            : 0.0;
    result.records.push_back(rec);
    if (sink) sink->append(rec);

    if (epoch_diverged) {
      result.diverged = true;
      result.diverged_epoch = epoch;
      break;
    }
  }
  return result;
}

}  // namespace shakedrop

#endif  // SHAKEDROP_TRAINING_HPP_
