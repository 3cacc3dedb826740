#ifndef SHAKEDROP_NETWORK_HPP_
#define SHAKEDROP_NETWORK_HPP_

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "shakedrop/nn.hpp"
#include "shakedrop/ops.hpp"
#include "shakedrop/regularizers.hpp"
#include "shakedrop/rng.hpp"

namespace shakedrop {

enum class Family { ResNet, WideResNet, PyramidNet, ResNeXt2, ResNeXt3 };
enum class BlockKind { Basic, Bottleneck };
enum class RegKind { None, RandomDrop, ShakeDrop, ShakeShake, SingleBranchShake };
enum class Insertion { TypeA, TypeB };

struct RegularizerSettings {
  RegKind kind = RegKind::None;
  CoefficientSpec coeff;
  Real p_terminal = 0.5;  // p_L
  Granularity granularity = Granularity::Pixel;
  Insertion insertion = Insertion::TypeB;
};

struct ArchitectureSpec {
  Family family = Family::ResNet;
  int depth = 8;
  BlockKind block = BlockKind::Basic;
  int stages = 3;
  int widen_factor = 1;      // Wide ResNet
  Real pyramid_alpha = 48.0; // PyramidNet channel budget
  int cardinality = 1;       // ResNeXt groups
  int base_width = 16;
  bool erase_relu = false;
  bool bn_end = false;
  RegularizerSettings reg;
  int num_classes = 10;
  int input_channels = 3;
  int input_h = 32;
  int input_w = 32;
  Real bn_epsilon = 1e-5;
  Real bn_momentum = 0.1;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Depth accounting and channel plan
// ---------------------------------------------------------------------------

namespace detail {

inline int convs_per_block(const ArchitectureSpec& s) {
  return s.block == BlockKind::Bottleneck ? 3 : 2;
}

// Blocks per stage from the conv-layer depth naming convention: ResNet-style
// families count stem conv + block convs + classifier (depth = cpb*n*stages+2);
// Wide ResNet naming adds two (depth = 2*n*stages + 4).
inline int blocks_per_stage(const ArchitectureSpec& s) {
  const int cpb = convs_per_block(s);
  const int overhead = s.family == Family::WideResNet ? 4 : 2;
  const int body = s.depth - overhead;
  if (body < cpb * s.stages || body % (cpb * s.stages) != 0)
    throw std::invalid_argument(
        "architecture: depth " + std::to_string(s.depth) + " is inconsistent with " +
        std::to_string(s.stages) + " stages of " + std::to_string(cpb) +
        "-conv blocks (expected depth = " + std::to_string(cpb * s.stages) + "*n + " +
        std::to_string(overhead) + ")");
  return body / (cpb * s.stages);
}

}  // namespace detail

inline int count_blocks(const ArchitectureSpec& s) {
  return detail::blocks_per_stage(s) * s.stages;
}

inline void ArchitectureSpec::validate() const {
  if (stages < 1) throw std::invalid_argument("architecture: stages must be >= 1");
  if (base_width < 1) throw std::invalid_argument("architecture: base_width must be >= 1");
  if (widen_factor < 1) throw std::invalid_argument("architecture: widen_factor must be >= 1");
  if (pyramid_alpha < 0.0) throw std::invalid_argument("architecture: pyramid_alpha must be >= 0");
  if (cardinality < 1) throw std::invalid_argument("architecture: cardinality must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("architecture: num_classes must be >= 2");
  if (input_channels < 1 || input_h < 1 || input_w < 1)
    throw std::invalid_argument("architecture: input shape dimensions must be >= 1");
  if (bn_epsilon <= 0.0) throw std::invalid_argument("architecture: bn_epsilon must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0))
    throw std::invalid_argument("architecture: bn_momentum must lie in [0, 1]");
  if (family == Family::WideResNet && block != BlockKind::Basic)
    throw std::invalid_argument("architecture: Wide ResNet uses basic blocks only");
  if ((family == Family::ResNeXt2 || family == Family::ResNeXt3) && block != BlockKind::Bottleneck)
    throw std::invalid_argument("architecture: ResNeXt uses bottleneck blocks only");
  if (reg.kind == RegKind::ShakeShake && family != Family::ResNeXt3)
    throw std::invalid_argument("architecture: Shake-Shake requires the three-branch family");
  if ((family == Family::ResNeXt2 || family == Family::ResNeXt3) &&
      base_width % cardinality != 0)
    throw std::invalid_argument("architecture: base_width must be divisible by cardinality");
  reg.coeff.validate();
  if (!(reg.p_terminal >= 0.0 && reg.p_terminal <= 1.0))
    throw std::invalid_argument("architecture: p_L must lie in [0, 1]");
  (void)count_blocks(*this);  // throws on inconsistent depth
  // Spatial sizes must stay even through every stage-boundary downsampling so
  // the exact-division convolution geometry holds.
  int h = input_h, w = input_w;
  for (int s = 1; s < stages; ++s) {
    if (h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2)
      throw std::invalid_argument("architecture: spatial size " + std::to_string(h) + "x" +
                                  std::to_string(w) + " cannot be halved at stage " +
                                  std::to_string(s + 1));
    h /= 2;
    w /= 2;
  }
}

struct BlockPlan {
  int index_l;  // 1-based
  int in_channels, out_channels, inner_width, stride;
};

inline std::vector<BlockPlan> plan_blocks(const ArchitectureSpec& s) {
  const int n = detail::blocks_per_stage(s);
  const int L = n * s.stages;
  const int expansion = s.block == BlockKind::Bottleneck ? 4 : 1;
  std::vector<BlockPlan> plan;
  plan.reserve(static_cast<std::size_t>(L));
  int in_ch = s.base_width;  // stem output channels
  for (int k = 1; k <= L; ++k) {
    const int stage = (k - 1) / n;
    const int pos = (k - 1) % n;
    const int stride = (stage > 0 && pos == 0) ? 2 : 1;
    int stage_width;
    switch (s.family) {
      case Family::WideResNet:
        stage_width = (s.base_width << stage) * s.widen_factor;
        break;
      case Family::PyramidNet:
        // Additive, approximately linear widening: floor(base + alpha*k/L).
        stage_width = static_cast<int>(s.base_width + s.pyramid_alpha * k / L);
        break;
      default:
        stage_width = s.base_width << stage;
        break;
    }
    BlockPlan p;
    p.index_l = k;
    p.in_channels = in_ch;
    p.inner_width = stage_width;
    p.out_channels = stage_width * expansion;
    p.stride = stride;
    plan.push_back(p);
    in_ch = p.out_channels;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Regularizer node
// ---------------------------------------------------------------------------

// One perturbation unit bound to a block (and branch slot, for Type B). It
// derives a fresh (gate, alpha, beta) stream bundle per training step from
// (seed, replica, block index, branch slot, step); Eval touches no stream.
class RegularizerNode {
 public:
  RegularizerNode(const RegularizerSettings& cfg, DecaySchedule sched, int block_index,
                  int branch_slot)
      : cfg_(cfg), sched_(sched), block_index_(block_index), branch_slot_(branch_slot) {}

  void bind_seed(std::uint64_t seed) { seed_ = seed; }
  void set_step(std::uint64_t step) { step_ = step; }
  void set_replica(int replica) { replica_ = replica; }

  RegKind kind() const { return cfg_.kind; }
  Real survival() const { return linear_decay(block_index_, sched_); }
  Real eval_coefficient() const {
    switch (cfg_.kind) {
      case RegKind::RandomDrop:
        return survival();
      case RegKind::ShakeDrop:
        return shakedrop_eval_coefficient(survival(), cfg_.coeff);
      case RegKind::SingleBranchShake:
      case RegKind::ShakeShake:
        return cfg_.coeff.expected_alpha();
      case RegKind::None:
        return 1.0;
    }
    return 1.0;
  }

  Value apply(Tape& t, Value branch, Phase phase) {
    switch (cfg_.kind) {
      case RegKind::None:
        return branch;
      case RegKind::RandomDrop:
        return randomdrop_apply(t, branch, block_index_, sched_, phase, rng(phase), frozen);
      case RegKind::ShakeDrop:
        return shakedrop_apply(t, branch, block_index_, sched_, cfg_.coeff, cfg_.granularity,
                               phase, rng(phase), frozen);
      case RegKind::SingleBranchShake:
        return single_branch_shake_apply(t, branch, cfg_.coeff, cfg_.granularity, phase,
                                         rng(phase), frozen);
      case RegKind::ShakeShake:
        throw std::logic_error("regularizer: Shake-Shake applies via combine()");
    }
    throw std::logic_error("regularizer: unreachable");
  }

  Value combine(Tape& t, Value x, Value f1, Value f2, Phase phase) {
    if (cfg_.kind != RegKind::ShakeShake)
      throw std::logic_error("regularizer: combine() is Shake-Shake only");
    return shake_shake_combine(t, x, f1, f2, cfg_.coeff, cfg_.granularity, phase, rng(phase),
                               frozen);
  }

  FrozenDraws frozen;

 private:
  // Fresh streams per (seed, replica, block, branch slot, step). The bundle is
  // kept alive on the node because the tape's backward closure draws beta from
  // it; one forward/backward pair may be pending per node at a time.
  RegularizerRng& rng(Phase phase) {
    if (phase == Phase::Train || !live_) {
      RngStream root = RngStream(seed_)
                           .child("replica", static_cast<std::uint64_t>(replica_))
                           .child("block", static_cast<std::uint64_t>(block_index_))
                           .child("branch", static_cast<std::uint64_t>(branch_slot_))
                           .child("step", step_);
      live_ = std::make_shared<RegularizerRng>(root);
    }
    return *live_;
  }

  RegularizerSettings cfg_;
  DecaySchedule sched_;
  int block_index_;
  int branch_slot_;
  std::uint64_t seed_ = 0;
  std::uint64_t step_ = 0;
  int replica_ = 0;
  std::shared_ptr<RegularizerRng> live_;
};

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

struct BranchUnit {
  enum class Kind { Conv, GroupConv, BN, ReLU };
  Kind kind;
  std::unique_ptr<Conv2d> conv;
  std::vector<std::unique_ptr<Conv2d>> group;
  std::unique_ptr<BatchNorm2d> bn;
};

struct Branch {
  std::vector<BranchUnit> units;

  void add_conv(int in_ch, int out_ch, int k, int stride, int pad) {
    BranchUnit u;
    u.kind = BranchUnit::Kind::Conv;
    u.conv = std::make_unique<Conv2d>(in_ch, out_ch, k, stride, pad);
    units.push_back(std::move(u));
  }
  void add_group_conv(int channels, int k, int stride, int pad, int groups) {
    if (channels % groups != 0)
      throw std::invalid_argument("grouped conv: channels not divisible by groups");
    BranchUnit u;
    u.kind = BranchUnit::Kind::GroupConv;
    const int per = channels / groups;
    for (int g = 0; g < groups; ++g)
      u.group.push_back(std::make_unique<Conv2d>(per, per, k, stride, pad));
    units.push_back(std::move(u));
  }
  void add_bn(int channels, Real eps, Real momentum) {
    BranchUnit u;
    u.kind = BranchUnit::Kind::BN;
    u.bn = std::make_unique<BatchNorm2d>(channels, eps, momentum);
    units.push_back(std::move(u));
  }
  void add_relu() {
    BranchUnit u;
    u.kind = BranchUnit::Kind::ReLU;
    units.push_back(std::move(u));
  }

  Value forward(Tape& t, Value h, Phase phase) const {
    for (const BranchUnit& u : units) {
      switch (u.kind) {
        case BranchUnit::Kind::Conv:
          h = u.conv->forward(t, h);
          break;
        case BranchUnit::Kind::GroupConv: {
          const int groups = static_cast<int>(u.group.size());
          const int per = u.group[0]->in_channels;
          std::vector<Value> parts;
          parts.reserve(u.group.size());
          for (int g = 0; g < groups; ++g)
            parts.push_back(u.group[static_cast<std::size_t>(g)]->forward(
                t, slice_channels(t, h, g * per, (g + 1) * per)));
          h = concat_channels(t, parts);
          break;
        }
        case BranchUnit::Kind::BN:
          h = u.bn->forward(t, h, phase);
          break;
        case BranchUnit::Kind::ReLU:
          h = relu(t, h);
          break;
      }
    }
    return h;
  }

  std::vector<std::string> layout() const {
    std::vector<std::string> out;
    for (const BranchUnit& u : units) {
      switch (u.kind) {
        case BranchUnit::Kind::Conv:
        case BranchUnit::Kind::GroupConv:
          out.emplace_back("conv");
          break;
        case BranchUnit::Kind::BN:
          out.emplace_back("bn");
          break;
        case BranchUnit::Kind::ReLU:
          out.emplace_back("relu");
          break;
      }
    }
    return out;
  }

  template <typename F>
  void for_each_conv(F&& f) {
    for (BranchUnit& u : units) {
      if (u.kind == BranchUnit::Kind::Conv) f(*u.conv);
      if (u.kind == BranchUnit::Kind::GroupConv)
        for (auto& c : u.group) f(*c);
    }
  }
  template <typename F>
  void for_each_bn(F&& f) {
    for (BranchUnit& u : units)
      if (u.kind == BranchUnit::Kind::BN) f(*u.bn);
  }
};

struct ResidualBlock {
  int index_l = 1;
  int in_channels = 0, out_channels = 0, stride = 1;
  Branch branch1;
  std::optional<Branch> branch2;
  RegKind reg_kind = RegKind::None;
  Insertion insertion = Insertion::TypeB;
  bool trailing_relu = false;
  std::unique_ptr<RegularizerNode> unit1, unit2;  // unit2: Type-B second branch

  // Parameter-free shortcut: stride-2 identity subsampling plus zero padding
  // of the extra channels.
  Value skip_path(Tape& t, Value x) const {
    Value s = x;
    if (stride == 2) s = subsample2(t, s);
    if (in_channels != out_channels) s = pad_channels(t, s, out_channels);
    return s;
  }

  Value forward(Tape& t, Value x, Phase phase) const {
    Value skip = skip_path(t, x);
    Value g{-1};
    if (!branch2) {
      Value f = branch1.forward(t, x, phase);
      if (unit1) f = unit1->apply(t, f, phase);
      g = add(t, skip, f);
    } else {
      Value f1 = branch1.forward(t, x, phase);
      Value f2 = branch2->forward(t, x, phase);
      if (reg_kind == RegKind::ShakeShake) {
        g = unit1->combine(t, skip, f1, f2, phase);
      } else if (reg_kind == RegKind::None) {
        // Addition order mirrors the insertion type so that frozen-identity
        // regularizers reproduce this output bitwise.
        g = insertion == Insertion::TypeA ? add(t, skip, add(t, f1, f2))
                                          : add(t, add(t, skip, f1), f2);
      } else if (insertion == Insertion::TypeA) {
        g = add(t, skip, unit1->apply(t, add(t, f1, f2), phase));
      } else {
        g = add(t, add(t, skip, unit1->apply(t, f1, phase)), unit2->apply(t, f2, phase));
      }
    }
    if (trailing_relu) g = relu(t, g);
    return g;
  }

  std::vector<std::vector<std::string>> layouts() const {
    std::vector<std::vector<std::string>> out{branch1.layout()};
    if (branch2) out.push_back(branch2->layout());
    return out;
  }
};

// Creates the block's perturbation unit(s) per the configured insertion type:
// Type A wraps the branch sum in one unit, Type B wraps each branch in an
// independent unit. Single-branch blocks get a plain wrap of F.
inline void insert_regularizer(ResidualBlock& block, const RegularizerSettings& cfg,
                               DecaySchedule sched) {
  block.reg_kind = cfg.kind;
  block.insertion = cfg.insertion;
  block.unit1.reset();
  block.unit2.reset();
  if (cfg.kind == RegKind::None) return;
  block.unit1 = std::make_unique<RegularizerNode>(cfg, sched, block.index_l, 0);
  if (block.branch2 && cfg.kind != RegKind::ShakeShake && cfg.insertion == Insertion::TypeB)
    block.unit2 = std::make_unique<RegularizerNode>(cfg, sched, block.index_l, 1);
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

class Network {
 public:
  explicit Network(const ArchitectureSpec& spec) : spec_(spec) {
    spec_.validate();
    build();
    register_params();
  }

  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  Value forward(Tape& t, const Tensor& images, Phase phase) {
    return forward(t, t.constant(images), phase);
  }

  Value forward(Tape& t, Value images, Phase phase) {
    const Tensor& iv = t.value(images);
    detail::require_4d(iv, "network input");
    detail::require(iv.dim(1) == spec_.input_channels && iv.dim(2) == spec_.input_h &&
                        iv.dim(3) == spec_.input_w,
                    "network: input shape " + shape_str(iv.shape()) +
                        " does not match the architecture input");
    Value h = images;
    h = stem_conv_->forward(t, h);
    if (stem_bn_) h = stem_bn_->forward(t, h, phase);
    if (stem_relu_) h = relu(t, h);
    for (const auto& b : blocks_) h = b->forward(t, h, phase);
    if (head_bn_) {
      h = head_bn_->forward(t, h, phase);
      h = relu(t, h);
    }
    h = global_avg_pool(t, h);
    return fc_->forward(t, h);
  }

  const std::vector<Parameter*>& parameters() { return params_; }
  int block_count() const { return static_cast<int>(blocks_.size()); }
  const ArchitectureSpec& spec() const { return spec_; }
  const std::vector<std::unique_ptr<ResidualBlock>>& blocks() const { return blocks_; }

  void bind_seed(std::uint64_t seed) {
    for (RegularizerNode* n : regularizer_nodes()) n->bind_seed(seed);
  }
  void set_step(std::uint64_t step) {
    for (RegularizerNode* n : regularizer_nodes()) n->set_step(step);
  }
  void set_replica(int replica) {
    for (RegularizerNode* n : regularizer_nodes()) n->set_replica(replica);
  }

  std::vector<RegularizerNode*> regularizer_nodes() {
    std::vector<RegularizerNode*> out;
    for (auto& b : blocks_) {
      if (b->unit1) out.push_back(b->unit1.get());
      if (b->unit2) out.push_back(b->unit2.get());
    }
    return out;
  }

  void zero_grads() {
    for (Parameter* p : params_) p->zero_grad();
  }

  std::vector<std::vector<std::string>> block_layouts() const {
    std::vector<std::vector<std::string>> out;
    for (const auto& b : blocks_)
      for (auto& l : b->layouts()) out.push_back(std::move(l));
    return out;
  }

  template <typename F>
  void for_each_conv(F&& f) {
    f(*stem_conv_);
    for (auto& b : blocks_) {
      b->branch1.for_each_conv(f);
      if (b->branch2) b->branch2->for_each_conv(f);
    }
  }
  template <typename F>
  void for_each_bn(F&& f) {
    if (stem_bn_) f(*stem_bn_);
    for (auto& b : blocks_) {
      b->branch1.for_each_bn(f);
      if (b->branch2) b->branch2->for_each_bn(f);
    }
    if (head_bn_) f(*head_bn_);
  }
  Linear& classifier() { return *fc_; }

 private:
  Branch make_branch(const BlockPlan& p) const {
    const Real eps = spec_.bn_epsilon, mom = spec_.bn_momentum;
    Branch br;
    // Spatial convs downsample with a 2x2 stride-2 kernel: the exact-division
    // output-size rule excludes 3x3 stride-2 with symmetric padding on even
    // inputs.
    auto add_spatial = [&](int in_ch, int out_ch, int stride) {
      if (stride == 2)
        br.add_conv(in_ch, out_ch, 2, 2, 0);
      else
        br.add_conv(in_ch, out_ch, 3, 1, 1);
    };
    auto add_spatial_grouped = [&](int ch, int stride) {
      if (spec_.cardinality > 1) {
        if (stride == 2)
          br.add_group_conv(ch, 2, 2, 0, spec_.cardinality);
        else
          br.add_group_conv(ch, 3, 1, 1, spec_.cardinality);
      } else {
        add_spatial(ch, ch, stride);
      }
    };
    switch (spec_.family) {
      case Family::ResNet:
        if (spec_.block == BlockKind::Basic) {
          add_spatial(p.in_channels, p.out_channels, p.stride);
          br.add_bn(p.out_channels, eps, mom);
          br.add_relu();
          br.add_conv(p.out_channels, p.out_channels, 3, 1, 1);
          br.add_bn(p.out_channels, eps, mom);
        } else {
          br.add_conv(p.in_channels, p.inner_width, 1, 1, 0);
          br.add_bn(p.inner_width, eps, mom);
          br.add_relu();
          add_spatial(p.inner_width, p.inner_width, p.stride);
          br.add_bn(p.inner_width, eps, mom);
          br.add_relu();
          br.add_conv(p.inner_width, p.out_channels, 1, 1, 0);
          br.add_bn(p.out_channels, eps, mom);
        }
        break;
      case Family::WideResNet:
        br.add_bn(p.in_channels, eps, mom);
        br.add_relu();
        add_spatial(p.in_channels, p.out_channels, p.stride);
        br.add_bn(p.out_channels, eps, mom);
        br.add_relu();
        br.add_conv(p.out_channels, p.out_channels, 3, 1, 1);
        break;
      case Family::PyramidNet:
        br.add_bn(p.in_channels, eps, mom);
        if (spec_.block == BlockKind::Basic) {
          add_spatial(p.in_channels, p.out_channels, p.stride);
          br.add_bn(p.out_channels, eps, mom);
          br.add_relu();
          br.add_conv(p.out_channels, p.out_channels, 3, 1, 1);
          br.add_bn(p.out_channels, eps, mom);
        } else {
          br.add_conv(p.in_channels, p.inner_width, 1, 1, 0);
          br.add_bn(p.inner_width, eps, mom);
          br.add_relu();
          add_spatial(p.inner_width, p.inner_width, p.stride);
          br.add_bn(p.inner_width, eps, mom);
          br.add_relu();
          br.add_conv(p.inner_width, p.out_channels, 1, 1, 0);
          br.add_bn(p.out_channels, eps, mom);
        }
        break;
      case Family::ResNeXt2:
      case Family::ResNeXt3:
        br.add_conv(p.in_channels, p.inner_width, 1, 1, 0);
        br.add_bn(p.inner_width, eps, mom);
        br.add_relu();
        add_spatial_grouped(p.inner_width, p.stride);
        br.add_bn(p.inner_width, eps, mom);
        br.add_relu();
        br.add_conv(p.inner_width, p.out_channels, 1, 1, 0);
        br.add_bn(p.out_channels, eps, mom);
        break;
    }
    if (spec_.bn_end) br.add_bn(p.out_channels, eps, mom);
    return br;
  }

  void build() {
    const auto plan = plan_blocks(spec_);
    const int L = static_cast<int>(plan.size());
    const DecaySchedule sched{L, spec_.reg.p_terminal};

    stem_conv_ = std::make_unique<Conv2d>(spec_.input_channels, spec_.base_width, 3, 1, 1);
    const bool post_act = spec_.family == Family::ResNet || spec_.family == Family::ResNeXt2 ||
                          spec_.family == Family::ResNeXt3;
    if (post_act) {
      stem_bn_ = std::make_unique<BatchNorm2d>(spec_.base_width, spec_.bn_epsilon, spec_.bn_momentum);
      stem_relu_ = true;
    } else if (spec_.family == Family::PyramidNet) {
      stem_bn_ = std::make_unique<BatchNorm2d>(spec_.base_width, spec_.bn_epsilon, spec_.bn_momentum);
      stem_relu_ = false;
    } else {
      stem_relu_ = false;
    }

    for (const BlockPlan& p : plan) {
      auto block = std::make_unique<ResidualBlock>();
      block->index_l = p.index_l;
      block->in_channels = p.in_channels;
      block->out_channels = p.out_channels;
      block->stride = p.stride;
      block->trailing_relu = post_act && !spec_.erase_relu;
      block->branch1 = make_branch(p);
      if (spec_.family == Family::ResNeXt3) block->branch2 = make_branch(p);
      insert_regularizer(*block, spec_.reg, sched);
      blocks_.push_back(std::move(block));
    }

    const int final_ch = plan.back().out_channels;
    if (!post_act) {
      head_bn_ = std::make_unique<BatchNorm2d>(final_ch, spec_.bn_epsilon, spec_.bn_momentum);
    }
    fc_ = std::make_unique<Linear>(final_ch, spec_.num_classes);
  }

  void register_params() {
    auto add_conv_params = [&](Conv2d& c) { params_.push_back(&c.weight); };
    auto add_bn_params = [&](BatchNorm2d& b) {
      params_.push_back(&b.gamma);
      params_.push_back(&b.shift);
    };
    params_.push_back(&stem_conv_->weight);
    if (stem_bn_) add_bn_params(*stem_bn_);
    for (auto& blk : blocks_) {
      blk->branch1.for_each_conv(add_conv_params);
      blk->branch1.for_each_bn(add_bn_params);
      if (blk->branch2) {
        blk->branch2->for_each_conv(add_conv_params);
        blk->branch2->for_each_bn(add_bn_params);
      }
    }
    if (head_bn_) add_bn_params(*head_bn_);
    params_.push_back(&fc_->weight);
    params_.push_back(&fc_->bias);
  }

  ArchitectureSpec spec_;
  std::unique_ptr<Conv2d> stem_conv_;
  std::unique_ptr<BatchNorm2d> stem_bn_;
  bool stem_relu_ = false;
  std::vector<std::unique_ptr<ResidualBlock>> blocks_;
  std::unique_ptr<BatchNorm2d> head_bn_;
  std::unique_ptr<Linear> fc_;
  std::vector<Parameter*> params_;
};

inline Network build_network(const ArchitectureSpec& spec) { return Network(spec); }

// MSRA initialization: conv weights ~ N(0, 2/fan_out) with fan_out = O*k*k,
// BN gamma = 1 / shift = 0, classifier weight ~ N(0, 1/fan_in) with zero bias.
inline void init_parameters(Network& net, RngStream& rng) {
  net.for_each_conv([&](Conv2d& c) {
    const Real std = std::sqrt(2.0 / (static_cast<Real>(c.out_channels) * c.kernel * c.kernel));
    Tensor& w = c.weight.value;
    for (int i = 0; i < w.numel(); ++i) w[i] = std * rng.next_normal();
    c.weight.zero_grad();
  });
  net.for_each_bn([&](BatchNorm2d& b) {
    b.gamma.value.fill(1.0);
    b.shift.value.fill(0.0);
    b.gamma.zero_grad();
    b.shift.zero_grad();
    b.reset_running_stats();
  });
  Linear& fc = net.classifier();
  const Real std = std::sqrt(1.0 / fc.in_features);
  for (int i = 0; i < fc.weight.value.numel(); ++i) fc.weight.value[i] = std * rng.next_normal();
  fc.bias.value.fill(0.0);
  fc.weight.zero_grad();
  fc.bias.zero_grad();
}

}  // namespace shakedrop

#endif  // SHAKEDROP_NETWORK_HPP_
