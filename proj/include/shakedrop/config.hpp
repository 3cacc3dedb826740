#ifndef SHAKEDROP_CONFIG_HPP_
#define SHAKEDROP_CONFIG_HPP_

#include <cstdio>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "shakedrop/data.hpp"
#include "shakedrop/network.hpp"
#include "shakedrop/optimizer.hpp"

namespace shakedrop {

// ---------------------------------------------------------------------------
// Flat key=value store
// ---------------------------------------------------------------------------

// Config file format: one `section.key=value` per line, order-insensitive,
// full-line `#` comments, duplicate keys rejected.
struct KeyValueConfig {
  std::map<std::string, std::string> values;

  static KeyValueConfig from_string(const std::string& text) {
    KeyValueConfig kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string trimmed = trim(line);
      if (trimmed.empty() || trimmed[0] == '#') continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                    " is not key=value: " + trimmed);
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw std::invalid_argument("config: empty key on line " + std::to_string(lineno));
      if (kv.values.count(key))
        throw std::invalid_argument("config: duplicate key " + key);
      kv.values[key] = value;
    }
    return kv;
  }

  static KeyValueConfig from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_string(ss.str());
  }

  // Override (used by --set): replaces any existing entry.
  void set(const std::string& key, const std::string& value) { values[key] = value; }

  std::string to_string() const {
    std::string out;
    for (const auto& [k, v] : values) {
      out += k;
      out += '=';
      out += v;
      out += '\n';
    }
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
  }
};

// ---------------------------------------------------------------------------
// Enum/value codecs
// ---------------------------------------------------------------------------

namespace cfg {

inline std::string format_real(Real v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline Real parse_real(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    const Real v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("config: " + key + ": not a number: " + s);
  }
}

inline int parse_int(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return static_cast<int>(v);
  } catch (...) {
    throw std::invalid_argument("config: " + key + ": not an integer: " + s);
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("config: " + key + ": not an unsigned integer: " + s);
  }
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("config: " + key + ": expected true/false: " + s);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Fixed scalar "0.5" or uniform range "[-1,1]".
inline ScalarDist parse_dist(const std::string& key, const std::string& s) {
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']')
      throw std::invalid_argument("config: " + key + ": unterminated range: " + s);
    const auto parts = split(s.substr(1, s.size() - 2), ',');
    if (parts.size() != 2)
      throw std::invalid_argument("config: " + key + ": range needs two bounds: " + s);
    return ScalarDist::range(parse_real(key, parts[0]), parse_real(key, parts[1]));
  }
  return ScalarDist::fixed(parse_real(key, s));
}

inline std::string format_dist(const ScalarDist& d) {
  if (d.is_fixed()) return format_real(d.lo);
  return "[" + format_real(d.lo) + "," + format_real(d.hi) + "]";
}

// Pair pool "(1,1);(-1,0)"; the empty string means no pool.
inline std::vector<std::pair<Real, Real>> parse_pool(const std::string& key,
                                                     const std::string& s) {
  std::vector<std::pair<Real, Real>> pool;
  if (s.empty()) return pool;
  for (const std::string& item : split(s, ';')) {
    if (item.size() < 2 || item.front() != '(' || item.back() != ')')
      throw std::invalid_argument("config: " + key + ": expected (alpha,beta) pairs: " + s);
    const auto parts = split(item.substr(1, item.size() - 2), ',');
    if (parts.size() != 2)
      throw std::invalid_argument("config: " + key + ": pair needs two components: " + item);
    pool.emplace_back(parse_real(key, parts[0]), parse_real(key, parts[1]));
  }
  if (pool.empty()) throw std::invalid_argument("config: " + key + ": empty pool");
  return pool;
}

inline std::string format_pool(const std::vector<std::pair<Real, Real>>& pool) {
  std::string out;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (i) out += ';';
    out += "(" + format_real(pool[i].first) + "," + format_real(pool[i].second) + ")";
  }
  return out;
}

template <typename T>
struct NamedValue {
  const char* name;
  T value;
};

template <typename T, std::size_t N>
inline T parse_enum(const std::string& key, const std::string& s, const NamedValue<T> (&table)[N]) {
  for (const auto& e : table)
    if (s == e.name) return e.value;
  std::string options;
  for (const auto& e : table) {
    if (!options.empty()) options += "|";
    options += e.name;
  }
  throw std::invalid_argument("config: " + key + ": expected one of " + options + ", got " + s);
}

template <typename T, std::size_t N>
inline std::string format_enum(T v, const NamedValue<T> (&table)[N]) {
  for (const auto& e : table)
    if (e.value == v) return e.name;
  throw std::logic_error("config: unmapped enum value");
}

inline constexpr NamedValue<Family> kFamilies[] = {{"resnet", Family::ResNet},
                                                   {"wide-resnet", Family::WideResNet},
                                                   {"pyramidnet", Family::PyramidNet},
                                                   {"resnext2", Family::ResNeXt2},
                                                   {"resnext3", Family::ResNeXt3}};
inline constexpr NamedValue<BlockKind> kBlocks[] = {{"basic", BlockKind::Basic},
                                                    {"bottleneck", BlockKind::Bottleneck}};
inline constexpr NamedValue<RegKind> kRegKinds[] = {
    {"none", RegKind::None},
    {"randomdrop", RegKind::RandomDrop},
    {"shakedrop", RegKind::ShakeDrop},
    {"shakeshake", RegKind::ShakeShake},
    {"single-branch-shake", RegKind::SingleBranchShake}};
inline constexpr NamedValue<Granularity> kGranularities[] = {{"batch", Granularity::Batch},
                                                             {"image", Granularity::Image},
                                                             {"channel", Granularity::Channel},
                                                             {"pixel", Granularity::Pixel}};
inline constexpr NamedValue<Insertion> kInsertions[] = {{"type-a", Insertion::TypeA},
                                                        {"type-b", Insertion::TypeB}};
inline constexpr NamedValue<SynthKind> kSynthKinds[] = {{"blobs", SynthKind::Blobs},
                                                        {"spiral", SynthKind::Spiral},
                                                        {"striped-images", SynthKind::StripedImages}};

}  // namespace cfg

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

enum class DataSource { Synthetic, Cifar10, Cifar100 };
enum class WallTimeMode { Measured, Zero };

namespace cfg {
inline constexpr NamedValue<DataSource> kDataSources[] = {{"synthetic", DataSource::Synthetic},
                                                          {"cifar10", DataSource::Cifar10},
                                                          {"cifar100", DataSource::Cifar100}};
inline constexpr NamedValue<WallTimeMode> kWallTimeModes[] = {{"measured", WallTimeMode::Measured},
                                                              {"zero", WallTimeMode::Zero}};
}  // namespace cfg

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  std::string train_path, eval_path;
  SynthKind synth_kind = SynthKind::Blobs;
  int synth_train_n = 2000;
  int synth_eval_n = 400;
  Real synth_noise = 0.3;
};

struct SweepConfig {
  std::vector<Real> p_l_values;
  std::vector<int> depths;
};

struct ExperimentConfig {
  ArchitectureSpec arch;
  std::string reg_preset = "none";  // none | shakedrop-original | shakedrop-bn-end
  OptimizerConfig optimizer;
  LRSchedule schedule;
  DataConfig data;
  bool augment_enabled = false;
  Real flip_probability = 0.5;
  int pad = 4;
  int crop = 32;
  bool normalize = true;
  Real mixup_alpha = 0.0;  // 0 = off
  std::uint64_t seed = 1;
  int replicas = 1;
  std::string out_dir = "out";
  WallTimeMode wall_time = WallTimeMode::Measured;
  SweepConfig sweep;
  int expectation_draws = 100000;
  std::string eval_params;  // params.bin path for the eval command

  ExperimentConfig() {
    // Desk-scale defaults: a depth-8 ResNet on synthetic 4-class 3x8x8 data,
    // 60 epochs with the step schedule shrunk proportionally from the full
    // 300/[150,225] recipe.
    arch.depth = 8;
    arch.num_classes = 4;
    arch.input_channels = 3;
    arch.input_h = 8;
    arch.input_w = 8;
    schedule.total_epochs = 60;
    schedule.milestones = {30, 45};
    schedule.factor = 0.1;
  }

  static ExperimentConfig from_kv(const KeyValueConfig& kv);
  KeyValueConfig to_kv() const;
  void validate() const;
};

inline ExperimentConfig ExperimentConfig::from_kv(const KeyValueConfig& kv) {
  ExperimentConfig c;
  // The preset resolves first so explicit keys can override its fields
  // regardless of file order.
  if (auto it = kv.values.find("reg.preset"); it != kv.values.end()) {
    const std::string& p = it->second;
    if (p == "shakedrop-original") {
      c.arch.reg.kind = RegKind::ShakeDrop;
      c.arch.reg.coeff = preset_shakedrop_original();
      c.arch.reg.granularity = Granularity::Pixel;
    } else if (p == "shakedrop-bn-end") {
      c.arch.reg.kind = RegKind::ShakeDrop;
      c.arch.reg.coeff = preset_shakedrop_bn_end();
      c.arch.reg.granularity = Granularity::Pixel;
      c.arch.bn_end = true;
    } else if (p != "none") {
      throw std::invalid_argument(
          "config: reg.preset: expected none|shakedrop-original|shakedrop-bn-end, got " + p);
    }
    c.reg_preset = p;
  }

  using namespace cfg;
  for (const auto& [key, value] : kv.values) {
    if (key == "reg.preset") continue;
    if (key == "arch.family") c.arch.family = parse_enum(key, value, kFamilies);
    else if (key == "arch.depth") c.arch.depth = parse_int(key, value);
    else if (key == "arch.block") c.arch.block = parse_enum(key, value, kBlocks);
    else if (key == "arch.stages") c.arch.stages = parse_int(key, value);
    else if (key == "arch.widen_factor") c.arch.widen_factor = parse_int(key, value);
    else if (key == "arch.pyramid_alpha") c.arch.pyramid_alpha = parse_real(key, value);
    else if (key == "arch.cardinality") c.arch.cardinality = parse_int(key, value);
    else if (key == "arch.base_width") c.arch.base_width = parse_int(key, value);
    else if (key == "arch.erase_relu") c.arch.erase_relu = parse_bool(key, value);
    else if (key == "arch.bn_end") c.arch.bn_end = parse_bool(key, value);
    else if (key == "arch.num_classes") c.arch.num_classes = parse_int(key, value);
    else if (key == "arch.input_channels") c.arch.input_channels = parse_int(key, value);
    else if (key == "arch.input_h") c.arch.input_h = parse_int(key, value);
    else if (key == "arch.input_w") c.arch.input_w = parse_int(key, value);
    else if (key == "arch.bn_epsilon") c.arch.bn_epsilon = parse_real(key, value);
    else if (key == "arch.bn_momentum") c.arch.bn_momentum = parse_real(key, value);
    else if (key == "reg.kind") c.arch.reg.kind = parse_enum(key, value, kRegKinds);
    else if (key == "reg.alpha") c.arch.reg.coeff.alpha = parse_dist(key, value);
    else if (key == "reg.beta") c.arch.reg.coeff.beta = parse_dist(key, value);
    else if (key == "reg.pool") c.arch.reg.coeff.pool = parse_pool(key, value);
    else if (key == "reg.p_l") c.arch.reg.p_terminal = parse_real(key, value);
    else if (key == "reg.granularity") c.arch.reg.granularity = parse_enum(key, value, kGranularities);
    else if (key == "reg.insertion") c.arch.reg.insertion = parse_enum(key, value, kInsertions);
    else if (key == "optimizer.base_lr") c.optimizer.base_lr = parse_real(key, value);
    else if (key == "optimizer.momentum") c.optimizer.momentum = parse_real(key, value);
    else if (key == "optimizer.nesterov") c.optimizer.nesterov = parse_bool(key, value);
    else if (key == "optimizer.weight_decay") c.optimizer.weight_decay = parse_real(key, value);
    else if (key == "optimizer.batch_size") c.optimizer.batch_size = parse_int(key, value);
    else if (key == "schedule.total_epochs") c.schedule.total_epochs = parse_int(key, value);
    else if (key == "schedule.factor") c.schedule.factor = parse_real(key, value);
    else if (key == "schedule.milestones") {
      c.schedule.milestones.clear();
      for (const std::string& m : split(value, ','))
        c.schedule.milestones.push_back(parse_int(key, m));
    } else if (key == "data.source") c.data.source = parse_enum(key, value, kDataSources);
    else if (key == "data.train_path") c.data.train_path = value;
    else if (key == "data.eval_path") c.data.eval_path = value;
    else if (key == "data.synth_kind") c.data.synth_kind = parse_enum(key, value, kSynthKinds);
    else if (key == "data.synth_train_n") c.data.synth_train_n = parse_int(key, value);
    else if (key == "data.synth_eval_n") c.data.synth_eval_n = parse_int(key, value);
    else if (key == "data.synth_noise") c.data.synth_noise = parse_real(key, value);
    else if (key == "augment.enabled") c.augment_enabled = parse_bool(key, value);
    else if (key == "augment.flip_probability") c.flip_probability = parse_real(key, value);
    else if (key == "augment.pad") c.pad = parse_int(key, value);
    else if (key == "augment.crop") c.crop = parse_int(key, value);
    else if (key == "augment.normalize") c.normalize = parse_bool(key, value);
    else if (key == "augment.mixup") c.mixup_alpha = value == "off" ? 0.0 : parse_real(key, value);
    else if (key == "run.seed") c.seed = parse_u64(key, value);
    else if (key == "run.replicas") c.replicas = parse_int(key, value);
    else if (key == "run.out_dir") c.out_dir = value;
    else if (key == "metrics.wall_time") c.wall_time = parse_enum(key, value, kWallTimeModes);
    else if (key == "sweep.p_l") {
      c.sweep.p_l_values.clear();
      for (const std::string& m : split(value, ','))
        c.sweep.p_l_values.push_back(parse_real(key, m));
    } else if (key == "sweep.depths") {
      c.sweep.depths.clear();
      for (const std::string& m : split(value, ','))
        c.sweep.depths.push_back(parse_int(key, m));
    } else if (key == "expectation.draws") c.expectation_draws = parse_int(key, value);
    else if (key == "eval.params") c.eval_params = value;
    else throw std::invalid_argument("config: unknown key " + key);
  }
  c.validate();
  return c;
}

inline KeyValueConfig ExperimentConfig::to_kv() const {
  using namespace cfg;
  KeyValueConfig kv;
  kv.set("arch.family", format_enum(arch.family, kFamilies));
  kv.set("arch.depth", std::to_string(arch.depth));
  kv.set("arch.block", format_enum(arch.block, kBlocks));
  kv.set("arch.stages", std::to_string(arch.stages));
  kv.set("arch.widen_factor", std::to_string(arch.widen_factor));
  kv.set("arch.pyramid_alpha", format_real(arch.pyramid_alpha));
  kv.set("arch.cardinality", std::to_string(arch.cardinality));
  kv.set("arch.base_width", std::to_string(arch.base_width));
  kv.set("arch.erase_relu", arch.erase_relu ? "true" : "false");
  kv.set("arch.bn_end", arch.bn_end ? "true" : "false");
  kv.set("arch.num_classes", std::to_string(arch.num_classes));
  kv.set("arch.input_channels", std::to_string(arch.input_channels));
  kv.set("arch.input_h", std::to_string(arch.input_h));
  kv.set("arch.input_w", std::to_string(arch.input_w));
  kv.set("arch.bn_epsilon", format_real(arch.bn_epsilon));
  kv.set("arch.bn_momentum", format_real(arch.bn_momentum));
  kv.set("reg.preset", reg_preset);
  kv.set("reg.kind", format_enum(arch.reg.kind, kRegKinds));
  kv.set("reg.alpha", format_dist(arch.reg.coeff.alpha));
  kv.set("reg.beta", format_dist(arch.reg.coeff.beta));
  kv.set("reg.pool", format_pool(arch.reg.coeff.pool));
  kv.set("reg.p_l", format_real(arch.reg.p_terminal));
  kv.set("reg.granularity", format_enum(arch.reg.granularity, kGranularities));
  kv.set("reg.insertion", format_enum(arch.reg.insertion, kInsertions));
  kv.set("optimizer.base_lr", format_real(optimizer.base_lr));
  kv.set("optimizer.momentum", format_real(optimizer.momentum));
  kv.set("optimizer.nesterov", optimizer.nesterov ? "true" : "false");
  kv.set("optimizer.weight_decay", format_real(optimizer.weight_decay));
  kv.set("optimizer.batch_size", std::to_string(optimizer.batch_size));
  kv.set("schedule.total_epochs", std::to_string(schedule.total_epochs));
  std::string ms;
  for (std::size_t i = 0; i < schedule.milestones.size(); ++i) {
    if (i) ms += ',';
    ms += std::to_string(schedule.milestones[i]);
  }
  kv.set("schedule.milestones", ms);
  kv.set("schedule.factor", format_real(schedule.factor));
  kv.set("data.source", format_enum(data.source, kDataSources));
  kv.set("data.train_path", data.train_path);
  kv.set("data.eval_path", data.eval_path);
  kv.set("data.synth_kind", format_enum(data.synth_kind, kSynthKinds));
  kv.set("data.synth_train_n", std::to_string(data.synth_train_n));
  kv.set("data.synth_eval_n", std::to_string(data.synth_eval_n));
  kv.set("data.synth_noise", format_real(data.synth_noise));
  kv.set("augment.enabled", augment_enabled ? "true" : "false");
  kv.set("augment.flip_probability", format_real(flip_probability));
  kv.set("augment.pad", std::to_string(pad));
  kv.set("augment.crop", std::to_string(crop));
  kv.set("augment.normalize", normalize ? "true" : "false");
  kv.set("augment.mixup", mixup_alpha > 0.0 ? format_real(mixup_alpha) : "off");
  kv.set("run.seed", std::to_string(seed));
  kv.set("run.replicas", std::to_string(replicas));
  kv.set("run.out_dir", out_dir);
  kv.set("metrics.wall_time", format_enum(wall_time, kWallTimeModes));
  std::string pls;
  for (std::size_t i = 0; i < sweep.p_l_values.size(); ++i) {
    if (i) pls += ',';
    pls += format_real(sweep.p_l_values[i]);
  }
  kv.set("sweep.p_l", pls);
  std::string ds;
  for (std::size_t i = 0; i < sweep.depths.size(); ++i) {
    if (i) ds += ',';
    ds += std::to_string(sweep.depths[i]);
  }
  kv.set("sweep.depths", ds);
  kv.set("expectation.draws", std::to_string(expectation_draws));
  kv.set("eval.params", eval_params);
  return kv;
}

inline void ExperimentConfig::validate() const {
  arch.validate();
  optimizer.validate();
  schedule.validate();
  if (replicas < 1) throw std::invalid_argument("config: run.replicas must be >= 1");
  if (mixup_alpha < 0.0) throw std::invalid_argument("config: augment.mixup must be off or > 0");
  if (expectation_draws < 1) throw std::invalid_argument("config: expectation.draws must be >= 1");
  switch (data.source) {
    case DataSource::Synthetic:
      if (data.synth_train_n < arch.num_classes)
        throw std::invalid_argument("config: data.synth_train_n too small for the class count");
      if (data.synth_eval_n < 1)
        throw std::invalid_argument("config: data.synth_eval_n must be >= 1");
      if (data.synth_noise < 0.0)
        throw std::invalid_argument("config: data.synth_noise must be >= 0");
      break;
    case DataSource::Cifar10:
    case DataSource::Cifar100: {
      const int classes = data.source == DataSource::Cifar10 ? 10 : 100;
      if (arch.num_classes != classes)
        throw std::invalid_argument("config: arch.num_classes must be " + std::to_string(classes) +
                                    " for this data source");
      if (arch.input_channels != 3 || arch.input_h != 32 || arch.input_w != 32)
        throw std::invalid_argument("config: CIFAR sources require 3x32x32 input");
      if (data.train_path.empty())
        throw std::invalid_argument("config: data.train_path required for CIFAR sources");
      break;
    }
  }
  if (augment_enabled) {
    AugmentConfig a;
    a.flip_probability = flip_probability;
    a.pad = pad;
    a.crop = crop;
    a.validate(arch.input_h, arch.input_w);
    if (crop != arch.input_h || crop != arch.input_w)
      throw std::invalid_argument("config: augment.crop must equal the architecture input size");
  }
}

// Augmentation settings as consumed by the training loop; normalization
// constants are filled by the data pipeline.
inline AugmentConfig make_augment_config(const ExperimentConfig& c) {
  AugmentConfig a;
  a.normalize = c.normalize;
  a.flip_enabled = c.augment_enabled;
  a.flip_probability = c.flip_probability;
  a.pad_crop_enabled = c.augment_enabled;
  a.pad = c.pad;
  a.crop = c.crop;
  a.mixup_alpha = c.mixup_alpha;
  return a;
}

}  // namespace shakedrop

#endif  // SHAKEDROP_CONFIG_HPP_
