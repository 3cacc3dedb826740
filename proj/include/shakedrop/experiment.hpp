#ifndef SHAKEDROP_EXPERIMENT_HPP_
#define SHAKEDROP_EXPERIMENT_HPP_

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "shakedrop/config.hpp"
#include "shakedrop/data.hpp"
#include "shakedrop/gradcheck.hpp"
#include "shakedrop/metrics.hpp"
#include "shakedrop/network.hpp"
#include "shakedrop/training.hpp"

namespace shakedrop {

// ---------------------------------------------------------------------------
// Logging (SHAKEDROP_LOG in {quiet, info, debug})
// ---------------------------------------------------------------------------

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

inline LogLevel& log_level() {
  static LogLevel lvl = LogLevel::Info;
  return lvl;
}

inline void apply_log_env() {
  const char* env = std::getenv("SHAKEDROP_LOG");
  if (!env) return;
  const std::string v = env;
  if (v == "quiet") log_level() = LogLevel::Quiet;
  else if (v == "info") log_level() = LogLevel::Info;
  else if (v == "debug") log_level() = LogLevel::Debug;
  else throw std::invalid_argument("SHAKEDROP_LOG must be quiet, info or debug; got " + v);
}

inline void log_line(LogLevel lvl, const std::string& msg) {
  if (static_cast<int>(log_level()) >= static_cast<int>(lvl))
    std::fprintf(stderr, "%s\n", msg.c_str());
}

// ---------------------------------------------------------------------------
// params.bin: u64 little-endian count, then 64-bit little-endian floats in
// parameter registration order.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u64_le(std::ofstream& f, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  f.write(b, 8);
}

inline std::uint64_t get_u64_le(std::ifstream& f) {
  unsigned char b[8];
  f.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_params_bin(const std::vector<Parameter*>& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("params: cannot open " + path + " for writing");
  std::uint64_t count = 0;
  for (const Parameter* p : params) count += static_cast<std::uint64_t>(p->value.numel());
  detail::put_u64_le(f, count);
  for (const Parameter* p : params)
    for (int i = 0; i < p->value.numel(); ++i)
      detail::put_u64_le(f, std::bit_cast<std::uint64_t>(p->value[i]));
  if (!f) throw std::runtime_error("params: write failed for " + path);
}

inline std::vector<Real> read_params_bin(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("params: cannot open " + path);
  const std::uint64_t count = detail::get_u64_le(f);
  if (!f) throw std::runtime_error("params: truncated header in " + path);
  std::vector<Real> out(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    out[i] = std::bit_cast<Real>(detail::get_u64_le(f));
    if (!f) throw std::runtime_error("params: truncated data in " + path);
  }
  return out;
}

inline void load_params_bin(const std::vector<Parameter*>& params, const std::string& path) {
  const std::vector<Real> flat = read_params_bin(path);
  std::size_t off = 0;
  std::uint64_t expect = 0;
  for (const Parameter* p : params) expect += static_cast<std::uint64_t>(p->value.numel());
  if (flat.size() != expect)
    throw std::runtime_error("params: " + path + " holds " + std::to_string(flat.size()) +
                             " values, expected " + std::to_string(expect));
  for (Parameter* p : params) {
    for (int i = 0; i < p->value.numel(); ++i) p->value[i] = flat[off + static_cast<std::size_t>(i)];
    off += static_cast<std::size_t>(p->value.numel());
    p->zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Data pipeline
// ---------------------------------------------------------------------------

struct DataBundle {
  LabeledImageSet train, eval;
};

inline DataBundle build_datasets(const ExperimentConfig& c) {
  DataBundle d;
  switch (c.data.source) {
    case DataSource::Synthetic: {
      const RngStream data_rng = RngStream(c.seed).child("data");
      d.train = synth_dataset(c.data.synth_kind, c.data.synth_train_n, c.arch.num_classes,
                              c.data.synth_noise, c.arch.input_channels, c.arch.input_h,
                              c.arch.input_w, data_rng, 0);
      d.eval = synth_dataset(c.data.synth_kind, c.data.synth_eval_n, c.arch.num_classes,
                             c.data.synth_noise, c.arch.input_channels, c.arch.input_h,
                             c.arch.input_w, data_rng, 1);
      break;
    }
    case DataSource::Cifar10:
    case DataSource::Cifar100: {
      const CifarVariant v =
          c.data.source == DataSource::Cifar10 ? CifarVariant::Cifar10 : CifarVariant::Cifar100;
      d.train = load_cifar_binary(c.data.train_path, v);
      d.eval = c.data.eval_path.empty() ? d.train : load_cifar_binary(c.data.eval_path, v);
      break;
    }
  }
  if (c.normalize) {
    compute_normalization(d.train);
    d.eval.channel_mean = d.train.channel_mean;
    d.eval.channel_std = d.train.channel_std;
  }
  return d;
}

// ---------------------------------------------------------------------------
// train / eval commands
// ---------------------------------------------------------------------------

inline TrainResult run_training(const ExperimentConfig& c, Network* net_out = nullptr) {
  std::filesystem::create_directories(c.out_dir);
  {
    std::ofstream f(c.out_dir + "/config.resolved", std::ios::binary);
    if (!f) throw std::runtime_error("train: cannot write " + c.out_dir + "/config.resolved");
    f << c.to_kv().to_string();
  }
  DataBundle data = build_datasets(c);
  Network net = build_network(c.arch);
  net.bind_seed(c.seed);
  RngStream init_rng = RngStream(c.seed).child("init");
  init_parameters(net, init_rng);

  TrainOptions opts;
  opts.replicas = c.replicas;
  opts.measure_wall_time = c.wall_time == WallTimeMode::Measured;
  opts.augment = make_augment_config(c);
  opts.augment.channel_mean = data.train.channel_mean.empty()
                                  ? std::vector<Real>(static_cast<std::size_t>(data.train.channels), 0.0)
                                  : data.train.channel_mean;
  opts.augment.channel_std = data.train.channel_std.empty()
                                 ? std::vector<Real>(static_cast<std::size_t>(data.train.channels), 1.0)
                                 : data.train.channel_std;

  TrainResult res = train(net, data.train, data.eval, c.optimizer, c.schedule, opts,
                          RngStream(c.seed).child("train"));
  for (const MetricsRecord& r : res.records)
    log_line(LogLevel::Debug, "epoch " + std::to_string(r.epoch) + ": train_loss=" +
                                  detail::format_g6(r.train_loss) + " train_top1=" +
                                  detail::format_g6(r.train_top1) + " eval_top1=" +
                                  detail::format_g6(r.eval_top1));
  write_metrics_csv(res.records, c.out_dir + "/metrics.csv");
  write_params_bin(net.parameters(), c.out_dir + "/params.bin");
  if (net_out) *net_out = std::move(net);
  return res;
}

inline int cmd_train(const ExperimentConfig& c) {
  c.validate();
  const TrainResult res = run_training(c);
  if (res.diverged) {
    std::fprintf(stderr, "error: training: diverged at epoch %d (metrics preserved)\n",
                 res.diverged_epoch);
    return 1;
  }
  if (!res.records.empty())
    log_line(LogLevel::Info,
             "train: done; final eval_top1=" + detail::format_g6(res.records.back().eval_top1) +
                 "% over " + std::to_string(res.records.size()) + " epochs");
  return 0;
}

inline int cmd_eval(const ExperimentConfig& c) {
  c.validate();
  DataBundle data = build_datasets(c);
  Network net = build_network(c.arch);
  const std::string path = c.eval_params.empty() ? c.out_dir + "/params.bin" : c.eval_params;
  load_params_bin(net.parameters(), path);
  const EvalResult r = evaluate(net, data.eval, c.optimizer.batch_size);
  std::printf("eval: loss=%.6g top1_error=%.6g\n", r.loss, r.top1_error);
  return 0;
}

// ---------------------------------------------------------------------------
// sweep command
// ---------------------------------------------------------------------------

inline int cmd_sweep(const ExperimentConfig& c) {
  c.validate();
  std::filesystem::create_directories(c.out_dir);
  std::string csv = "depth,p_L,final_eval_top1\n";
  int cell = 0;
  for (int depth : c.sweep.depths) {
    for (Real p_l : c.sweep.p_l_values) {
      ExperimentConfig cc = c;
      cc.arch.depth = depth;
      cc.arch.reg.p_terminal = p_l;
      cc.seed = c.seed + static_cast<std::uint64_t>(cell);
      char sub[32];
      std::snprintf(sub, sizeof(sub), "/cell_%03d", cell);
      cc.out_dir = c.out_dir + sub;
      std::string result = "nan";
      try {
        cc.validate();
        const TrainResult res = run_training(cc);
        if (!res.diverged && !res.records.empty())
          result = detail::format_g6(res.records.back().eval_top1);
        log_line(LogLevel::Info, "sweep cell " + std::to_string(cell) + ": depth=" +
                                     std::to_string(depth) + " p_L=" + cfg::format_real(p_l) +
                                     " final_eval_top1=" + result);
      } catch (const std::exception& e) {
        log_line(LogLevel::Info,
                 "sweep cell " + std::to_string(cell) + " failed: " + std::string(e.what()));
      }
      csv += std::to_string(depth) + "," + detail::format_g6(p_l) + "," + result + "\n";
      ++cell;
    }
  }
  std::ofstream f(c.out_dir + "/sweep.csv", std::ios::binary);
  if (!f) throw std::runtime_error("sweep: cannot write " + c.out_dir + "/sweep.csv");
  f << csv;
  return 0;
}

// ---------------------------------------------------------------------------
// expectation test (Monte-Carlo Train mean vs Eval closed form)
// ---------------------------------------------------------------------------

struct ExpectationReport {
  Real max_z = 0.0;
  Real eval_coefficient = 0.0;  // scaling applied to the branch at Eval
  int draws = 0;
  bool pass = false;
};

// Runs M Train-phase forwards of one regularized branch (or Shake-Shake
// combine) and compares the elementwise Monte-Carlo mean against the Eval
// output at 5 standard errors.
inline ExpectationReport expectation_check(RegKind kind, const CoefficientSpec& spec,
                                           Granularity gran, Real p_l, int draws,
                                           std::uint64_t seed) {
  if (draws < 2) throw std::invalid_argument("expectation: need at least 2 draws");
  const RngStream root(seed);
  const Shape shape{2, 3, 4, 4};
  auto fill_uniform = [&](const char* name) {
    RngStream s = root.child(name);
    Tensor t(shape);
    for (int i = 0; i < t.numel(); ++i) t[i] = s.next_uniform(-1.0, 1.0);
    return t;
  };
  const Tensor branch = fill_uniform("branch");
  const Tensor skip = fill_uniform("skip");
  const Tensor branch2 = fill_uniform("branch2");
  const DecaySchedule sched{1, p_l};

  auto forward_once = [&](Phase phase, RegularizerRng& rng) {
    Tape t;
    Value f = t.constant(branch);
    switch (kind) {
      case RegKind::RandomDrop:
        return t.value(randomdrop_apply(t, f, 1, sched, phase, rng));
      case RegKind::ShakeDrop:
        return t.value(shakedrop_apply(t, f, 1, sched, spec, gran, phase, rng));
      case RegKind::SingleBranchShake:
        return t.value(single_branch_shake_apply(t, f, spec, gran, phase, rng));
      case RegKind::ShakeShake:
        return t.value(shake_shake_combine(t, t.constant(skip), f, t.constant(branch2), spec, gran,
                                           phase, rng));
      case RegKind::None:
        break;
    }
    throw std::invalid_argument("expectation: regularizer kind none has no stochastic part");
  };

  const int numel = shape_numel(shape);
  std::vector<Real> mean(static_cast<std::size_t>(numel), 0.0);
  std::vector<Real> m2(static_cast<std::size_t>(numel), 0.0);
  for (int m = 0; m < draws; ++m) {
    RegularizerRng rng(root.child("mc", static_cast<std::uint64_t>(m)));
    const Tensor out = forward_once(Phase::Train, rng);
    for (int i = 0; i < numel; ++i) {
      const Real delta = out[i] - mean[static_cast<std::size_t>(i)];
      mean[static_cast<std::size_t>(i)] += delta / (m + 1);
      m2[static_cast<std::size_t>(i)] += delta * (out[i] - mean[static_cast<std::size_t>(i)]);
    }
  }
  RegularizerRng eval_rng(root.child("eval"));
  const Tensor eval_out = forward_once(Phase::Eval, eval_rng);

  ExpectationReport rep;
  rep.draws = draws;
  switch (kind) {
    case RegKind::RandomDrop:
      rep.eval_coefficient = p_l;
      break;
    case RegKind::ShakeDrop:
      rep.eval_coefficient = shakedrop_eval_coefficient(p_l, spec);
      break;
    default:
      rep.eval_coefficient = spec.expected_alpha();
      break;
  }
  for (int i = 0; i < numel; ++i) {
    const Real se = std::sqrt(m2[static_cast<std::size_t>(i)] / (draws - 1) / draws);
    const Real diff = std::abs(mean[static_cast<std::size_t>(i)] - eval_out[i]);
    if (se > 0.0) {
      rep.max_z = std::max(rep.max_z, diff / se);
    } else if (diff > 1e-12) {
      rep.max_z = std::numeric_limits<Real>::infinity();
    }
  }
  rep.pass = rep.max_z < 5.0;
  return rep;
}

inline int cmd_expectation_test(const ExperimentConfig& c) {
  c.validate();
  if (c.expectation_draws < 1000)
    throw std::invalid_argument("expectation-test: expectation.draws must be >= 1000");
  if (c.arch.reg.kind == RegKind::None)
    throw std::invalid_argument("expectation-test: configure a regularizer (reg.kind)");
  const ExpectationReport rep =
      expectation_check(c.arch.reg.kind, c.arch.reg.coeff, c.arch.reg.granularity,
                        c.arch.reg.p_terminal, c.expectation_draws, c.seed);
  std::printf("expectation-test: kind=%s granularity=%s p_l=%.6g eval_coefficient=%.6g draws=%d max_z=%.4g %s\n",
              cfg::format_enum(c.arch.reg.kind, cfg::kRegKinds).c_str(),
              cfg::format_enum(c.arch.reg.granularity, cfg::kGranularities).c_str(),
              c.arch.reg.p_terminal, rep.eval_coefficient, rep.draws, rep.max_z,
              rep.pass ? "PASS" : "FAIL");
  if (!rep.pass) {
    std::fprintf(stderr, "error: expectation-test: max z-score %.4g exceeds 5\n", rep.max_z);
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck command
// ---------------------------------------------------------------------------

// Single-block toy architecture for block-level checks.
inline ArchitectureSpec toy_block_spec(Family family, BlockKind block, RegKind kind,
                                       Insertion insertion) {
  ArchitectureSpec s;
  s.family = family;
  s.block = block;
  s.stages = 1;
  const int cpb = block == BlockKind::Bottleneck ? 3 : 2;
  s.depth = family == Family::WideResNet ? 6 : cpb + 2;
  s.base_width = 4;
  s.cardinality = family == Family::ResNeXt2 || family == Family::ResNeXt3 ? 2 : 1;
  s.pyramid_alpha = 4.0;
  s.num_classes = 3;
  s.input_channels = 3;
  s.input_h = 4;
  s.input_w = 4;
  s.reg.kind = kind;
  s.reg.insertion = insertion;
  s.reg.p_terminal = 0.5;
  return s;
}

struct GradcheckLine {
  std::string name;
  FiniteDiffReport report;
  bool pass = false;
};

// Finite-difference checks over every deterministic op plus whole regularized
// blocks with coupled frozen coefficients. Tolerance per line: 1e-4 (64-bit).
inline std::vector<GradcheckLine> run_gradchecks(std::uint64_t seed, int block_probe_limit = 0) {
  constexpr Real kTol = 1e-4;
  std::vector<GradcheckLine> lines;
  RngStream root(seed);

  auto rand_tensor = [&](const Shape& shape, RngStream& s, Real lo = -1.0, Real hi = 1.0) {
    Tensor t(shape);
    for (int i = 0; i < t.numel(); ++i) t[i] = s.next_uniform(lo, hi);
    return t;
  };
  auto weighted_sum = [](Tape& t, Value y, const Tensor& u) {
    return sum(t, mul(t, y, t.constant(u)));
  };
  auto check = [&](const std::string& name, const std::function<Value(Tape&)>& build,
                   const std::vector<Parameter*>& params, int probe_limit = 0) {
    RngStream sampler = root.child("sampler-" + name);
    GradcheckLine line;
    line.name = name;
    line.report = finite_diff_check_params(build, params, 1e-5, probe_limit,
                                           probe_limit > 0 ? &sampler : nullptr);
    line.pass = line.report.max_rel_error < kTol;
    lines.push_back(line);
  };

  // --- single ops ---
  {
    RngStream s = root.child("conv2d");
    Parameter x(rand_tensor(Shape{2, 3, 5, 5}, s));
    Parameter w(rand_tensor(Shape{4, 3, 3, 3}, s));
    Tensor u = rand_tensor(Shape{2, 4, 3, 3}, s);
    check("conv2d", [&](Tape& t) { return weighted_sum(t, conv2d(t, t.leaf(x), t.leaf(w), 1, 0), u); },
          {&x, &w});
  }
  {
    RngStream s = root.child("conv2d-strided");
    Parameter x(rand_tensor(Shape{2, 2, 5, 5}, s));
    Parameter w(rand_tensor(Shape{3, 2, 3, 3}, s));
    Tensor u = rand_tensor(Shape{2, 3, 3, 3}, s);
    check("conv2d-strided-padded",
          [&](Tape& t) { return weighted_sum(t, conv2d(t, t.leaf(x), t.leaf(w), 2, 1), u); },
          {&x, &w});
  }
  {
    RngStream s = root.child("linear");
    Parameter x(rand_tensor(Shape{2, 3}, s));
    Parameter w(rand_tensor(Shape{3, 4}, s));
    Parameter b(rand_tensor(Shape{4}, s));
    Tensor u = rand_tensor(Shape{2, 4}, s);
    check("linear",
          [&](Tape& t) { return weighted_sum(t, linear(t, t.leaf(x), t.leaf(w), t.leaf(b)), u); },
          {&x, &w, &b});
  }
  {
    RngStream s = root.child("batchnorm-train");
    Parameter x(rand_tensor(Shape{4, 2, 3, 3}, s));
    BatchNorm2d bn(2);
    bn.gamma.value = rand_tensor(Shape{2}, s, 0.5, 1.5);
    bn.shift.value = rand_tensor(Shape{2}, s, -0.5, 0.5);
    Tensor u = rand_tensor(Shape{4, 2, 3, 3}, s);
    check("batchnorm2d-train",
          [&](Tape& t) { return weighted_sum(t, bn.forward(t, t.leaf(x), Phase::Train), u); },
          {&x, &bn.gamma, &bn.shift});
  }
  {
    RngStream s = root.child("batchnorm-eval");
    Parameter x(rand_tensor(Shape{2, 2, 3, 3}, s));
    BatchNorm2d bn(2);
    bn.running_mean = rand_tensor(Shape{2}, s, -0.3, 0.3);
    bn.running_var = rand_tensor(Shape{2}, s, 0.5, 1.5);
    Tensor u = rand_tensor(Shape{2, 2, 3, 3}, s);
    check("batchnorm2d-eval",
          [&](Tape& t) { return weighted_sum(t, bn.forward(t, t.leaf(x), Phase::Eval), u); },
          {&x, &bn.gamma, &bn.shift});
  }
  {
    RngStream s = root.child("relu");
    // Sampled away from the kink at zero.
    Tensor xv = rand_tensor(Shape{2, 3, 2, 2}, s);
    for (int i = 0; i < xv.numel(); ++i)
      xv[i] += xv[i] >= 0.0 ? 0.2 : -0.2;
    Parameter x(xv);
    Tensor u = rand_tensor(Shape{2, 3, 2, 2}, s);
    check("relu", [&](Tape& t) { return weighted_sum(t, relu(t, t.leaf(x)), u); }, {&x});
  }
  {
    RngStream s = root.child("add-mul");
    Parameter a(rand_tensor(Shape{2, 3}, s));
    Parameter b(rand_tensor(Shape{2, 3}, s));
    Tensor u = rand_tensor(Shape{2, 3}, s);
    check("add", [&](Tape& t) { return weighted_sum(t, add(t, t.leaf(a), t.leaf(b)), u); },
          {&a, &b});
    check("mul", [&](Tape& t) { return weighted_sum(t, mul(t, t.leaf(a), t.leaf(b)), u); },
          {&a, &b});
  }
  {
    RngStream s = root.child("gap");
    Parameter x(rand_tensor(Shape{2, 3, 4, 4}, s));
    Tensor u = rand_tensor(Shape{2, 3}, s);
    check("global_avg_pool",
          [&](Tape& t) { return weighted_sum(t, global_avg_pool(t, t.leaf(x)), u); }, {&x});
  }
  {
    RngStream s = root.child("xent");
    Parameter z(rand_tensor(Shape{3, 4}, s));
    const std::vector<int> labels{0, 2, 3};
    check("softmax_cross_entropy",
          [&](Tape& t) { return softmax_cross_entropy(t, t.leaf(z), labels); }, {&z});
    Tensor soft(Shape{3, 4});
    RngStream ss = root.child("soft-labels");
    for (int n = 0; n < 3; ++n) {
      Real rowsum = 0.0;
      for (int k = 0; k < 4; ++k) {
        soft[n * 4 + k] = ss.next_uniform(0.1, 1.0);
        rowsum += soft[n * 4 + k];
      }
      for (int k = 0; k < 4; ++k) soft[n * 4 + k] /= rowsum;
    }
    check("softmax_cross_entropy_soft",
          [&](Tape& t) { return softmax_cross_entropy_soft(t, t.leaf(z), soft); }, {&z});
  }
  {
    RngStream s = root.child("shortcut");
    Parameter x(rand_tensor(Shape{2, 2, 4, 4}, s));
    Tensor u1 = rand_tensor(Shape{2, 2, 2, 2}, s);
    check("subsample2", [&](Tape& t) { return weighted_sum(t, subsample2(t, t.leaf(x)), u1); },
          {&x});
    Tensor u2 = rand_tensor(Shape{2, 5, 4, 4}, s);
    check("pad_channels",
          [&](Tape& t) { return weighted_sum(t, pad_channels(t, t.leaf(x), 5), u2); }, {&x});
    Tensor u3 = rand_tensor(Shape{2, 2, 4, 4}, s);
    check("slice_concat", [&](Tape& t) {
      std::vector<Value> parts{slice_channels(t, t.leaf(x), 0, 1), slice_channels(t, t.leaf(x), 1, 2)};
      return weighted_sum(t, concat_channels(t, parts), u3);
    }, {&x});
  }
  {
    RngStream s = root.child("coupled-scale");
    Parameter x(rand_tensor(Shape{2, 2, 3, 3}, s));
    Tensor coeff = rand_tensor(Shape{2, 2, 1, 1}, s);
    Tensor u = rand_tensor(Shape{2, 2, 3, 3}, s);
    check("scale_by_const",
          [&](Tape& t) { return weighted_sum(t, scale_by_const(t, t.leaf(x), coeff), u); }, {&x});
    check("decoupled_scale-coupled", [&](Tape& t) {
      return weighted_sum(t, decoupled_scale(t, t.leaf(x), coeff, [coeff]() { return coeff; }), u);
    }, {&x});
  }
  {
    RngStream s = root.child("shake-shake-coupled");
    Parameter x(rand_tensor(Shape{2, 2, 3, 3}, s));
    Parameter f1(rand_tensor(Shape{2, 2, 3, 3}, s));
    Parameter f2(rand_tensor(Shape{2, 2, 3, 3}, s));
    Tensor u = rand_tensor(Shape{2, 2, 3, 3}, s);
    CoefficientSpec spec;
    spec.alpha = ScalarDist::range(0.0, 1.0);
    spec.beta = ScalarDist::range(0.0, 1.0);
    FrozenDraws frozen;
    frozen.alpha = 0.4;
    frozen.beta = 0.4;
    RegularizerRng rng(root.child("shake-shake-rng"));
    check("shake_shake-coupled", [&](Tape& t) {
      return weighted_sum(t, shake_shake_combine(t, t.leaf(x), t.leaf(f1), t.leaf(f2), spec,
                                                 Granularity::Batch, Phase::Train, rng, frozen), u);
    }, {&x, &f1, &f2});
  }

  // --- whole blocks with coupled frozen coefficients ---
  struct BlockCase {
    const char* name;
    Family family;
    BlockKind block;
    RegKind kind;
    Insertion insertion;
    int gate;
  };
  const BlockCase cases[] = {
      {"block resnet-basic shakedrop", Family::ResNet, BlockKind::Basic, RegKind::ShakeDrop,
       Insertion::TypeB, 0},
      {"block resnet-basic shakedrop-gate1", Family::ResNet, BlockKind::Basic, RegKind::ShakeDrop,
       Insertion::TypeB, 1},
      {"block resnet-bottleneck shakedrop", Family::ResNet, BlockKind::Bottleneck,
       RegKind::ShakeDrop, Insertion::TypeB, 0},
      {"block wide-resnet shakedrop", Family::WideResNet, BlockKind::Basic, RegKind::ShakeDrop,
       Insertion::TypeB, 0},
      {"block pyramidnet shakedrop", Family::PyramidNet, BlockKind::Basic, RegKind::ShakeDrop,
       Insertion::TypeB, 0},
      {"block pyramidnet-bottleneck randomdrop", Family::PyramidNet, BlockKind::Bottleneck,
       RegKind::RandomDrop, Insertion::TypeB, 1},
      {"block resnext2 single-branch-shake", Family::ResNeXt2, BlockKind::Bottleneck,
       RegKind::SingleBranchShake, Insertion::TypeB, 0},
      {"block resnext3-type-a shakedrop", Family::ResNeXt3, BlockKind::Bottleneck,
       RegKind::ShakeDrop, Insertion::TypeA, 0},
      {"block resnext3-type-b shakedrop", Family::ResNeXt3, BlockKind::Bottleneck,
       RegKind::ShakeDrop, Insertion::TypeB, 0},
      {"block resnext3 shake-shake", Family::ResNeXt3, BlockKind::Bottleneck, RegKind::ShakeShake,
       Insertion::TypeB, 0},
  };
  for (const BlockCase& bc : cases) {
    ArchitectureSpec spec = toy_block_spec(bc.family, bc.block, bc.kind, bc.insertion);
    Network net = build_network(spec);
    RngStream init_rng = root.child(std::string("init-") + bc.name);
    init_parameters(net, init_rng);
    for (RegularizerNode* node : net.regularizer_nodes()) {
      node->frozen.gate = bc.gate;
      node->frozen.alpha = 0.3;
      node->frozen.beta = 0.3;
    }
    RngStream data_rng = root.child(std::string("data-") + bc.name);
    Parameter input(rand_tensor(Shape{2, 3, 4, 4}, data_rng));
    const std::vector<int> labels{0, 2};
    std::vector<Parameter*> probes{&input};
    for (Parameter* p : net.parameters()) probes.push_back(p);
    check(bc.name, [&](Tape& t) {
      Value logits = net.forward(t, t.leaf(input), Phase::Train);
      return softmax_cross_entropy(t, logits, labels);
    }, probes, block_probe_limit);
  }
  return lines;
}

// Branch-gradient ratio of decoupled frozen (alpha, beta): gradient delivered
// with (alpha, beta) divided by the forward-consistent gradient (beta drawn
// equal to alpha).
inline Real measure_branch_gradient_ratio(Real alpha, Real beta, std::uint64_t seed) {
  RngStream root(seed);
  Tensor f(Shape{1, 2, 3, 3});
  Tensor u(Shape{1, 2, 3, 3});
  {
    RngStream s = root.child("data");
    for (int i = 0; i < f.numel(); ++i) f[i] = s.next_uniform(0.5, 1.5);
    for (int i = 0; i < u.numel(); ++i) u[i] = s.next_uniform(0.5, 1.5);
  }
  CoefficientSpec spec;
  spec.alpha = ScalarDist::range(-1.0, 1.0);
  spec.beta = ScalarDist::range(0.0, 1.0);
  auto grad_with = [&](Real b_coeff) {
    Tape t;
    Value fv = t.input(f);
    RegularizerRng rng(root.child("rng"));
    FrozenDraws frozen;
    frozen.gate = 0;
    frozen.alpha = alpha;
    frozen.beta = b_coeff;
    Value out = shakedrop_apply(t, fv, 1, DecaySchedule{1, 0.5}, spec, Granularity::Pixel,
                                Phase::Train, rng, frozen);
    t.backward(sum(t, mul(t, out, t.constant(u))));
    return t.grad(fv);
  };
  const Tensor g_decoupled = grad_with(beta);
  const Tensor g_coupled = grad_with(alpha);
  Real ratio = 0.0;
  for (int i = 0; i < g_decoupled.numel(); ++i) ratio = std::max(ratio, g_decoupled[i] / g_coupled[i]);
  return ratio;
}

inline int cmd_gradcheck(const ExperimentConfig& c) {
  c.validate();
  const auto lines = run_gradchecks(c.seed, 0);
  bool ok = true;
  for (const GradcheckLine& l : lines) {
    std::printf("gradcheck %s: max_rel_err=%.3g kinks_skipped=%d %s\n", l.name.c_str(),
                l.report.max_rel_error, l.report.kinks_skipped, l.pass ? "PASS" : "FAIL");
    ok = ok && l.pass;
  }
  const Real ratio = measure_branch_gradient_ratio(0.2, 0.8, c.seed);
  std::printf("gradcheck shakedrop decoupled (alpha=0.2, beta=0.8): branch-gradient ratio=%.12g "
              "(beta/alpha=4) INTENTIONAL-MISMATCH, not a failure\n", ratio);
  if (!ok) {
    std::fprintf(stderr, "error: gradcheck: at least one check exceeded tolerance 1e-4\n");
    return 1;
  }
  return 0;
}

}  // namespace shakedrop

#endif  // SHAKEDROP_EXPERIMENT_HPP_
