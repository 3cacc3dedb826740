#include <gtest/gtest.h>

#include "shakedrop/config.hpp"

namespace shakedrop {
namespace {

TEST(KeyValue, ParsesCommentsAndWhitespace) {
  const KeyValueConfig kv = KeyValueConfig::from_string(
      "# a comment\n"
      "  arch.depth = 20  \n"
      "\n"
      "optimizer.base_lr=0.05\n");
  EXPECT_EQ(kv.values.at("arch.depth"), "20");
  EXPECT_EQ(kv.values.at("optimizer.base_lr"), "0.05");
}

TEST(KeyValue, RejectsMalformedAndDuplicateLines) {
  EXPECT_THROW(KeyValueConfig::from_string("no equals sign\n"), std::invalid_argument);
  EXPECT_THROW(KeyValueConfig::from_string("=value\n"), std::invalid_argument);
  EXPECT_THROW(KeyValueConfig::from_string("a.b=1\na.b=2\n"), std::invalid_argument);
}

TEST(ExperimentConfig, UnknownKeyIsAnError) {
  KeyValueConfig kv;
  kv.set("arch.depht", "20");  // typo
  EXPECT_THROW(ExperimentConfig::from_kv(kv), std::invalid_argument);
}

TEST(ExperimentConfig, ValidationRejectsBadPL) {
  KeyValueConfig kv;
  kv.set("reg.p_l", "1.3");
  EXPECT_THROW(ExperimentConfig::from_kv(kv), std::invalid_argument);
}

TEST(ExperimentConfig, DistAndPoolSyntax) {
  KeyValueConfig kv;
  kv.set("reg.kind", "shakedrop");
  kv.set("reg.alpha", "[-1,1]");
  kv.set("reg.beta", "0.5");
  kv.set("reg.pool", "(1,1);(-1,0)");
  const ExperimentConfig c = ExperimentConfig::from_kv(kv);
  EXPECT_EQ(c.arch.reg.coeff.alpha.lo, -1.0);
  EXPECT_EQ(c.arch.reg.coeff.alpha.hi, 1.0);
  EXPECT_TRUE(c.arch.reg.coeff.beta.is_fixed());
  ASSERT_EQ(c.arch.reg.coeff.pool.size(), 2u);
  EXPECT_EQ(c.arch.reg.coeff.pool[1].first, -1.0);

  KeyValueConfig bad;
  bad.set("reg.pool", "()");
  EXPECT_THROW(ExperimentConfig::from_kv(bad), std::invalid_argument);
  KeyValueConfig bad2;
  bad2.set("reg.alpha", "[1,");
  EXPECT_THROW(ExperimentConfig::from_kv(bad2), std::invalid_argument);
}

TEST(ExperimentConfig, PresetsResolveAndExplicitKeysOverride) {
  {
    KeyValueConfig kv;
    kv.set("reg.preset", "shakedrop-original");
    const ExperimentConfig c = ExperimentConfig::from_kv(kv);
    EXPECT_EQ(c.arch.reg.kind, RegKind::ShakeDrop);
    EXPECT_TRUE(c.arch.reg.coeff.alpha.is_fixed());
    EXPECT_EQ(c.arch.reg.coeff.alpha.lo, 0.0);
    EXPECT_EQ(c.arch.reg.coeff.beta.lo, 0.0);
    EXPECT_EQ(c.arch.reg.coeff.beta.hi, 1.0);
    EXPECT_EQ(c.arch.reg.granularity, Granularity::Pixel);
    EXPECT_FALSE(c.arch.bn_end);
  }
  {
    KeyValueConfig kv;
    kv.set("reg.preset", "shakedrop-bn-end");
    const ExperimentConfig c = ExperimentConfig::from_kv(kv);
    EXPECT_EQ(c.arch.reg.coeff.alpha.lo, -1.0);
    EXPECT_TRUE(c.arch.bn_end);
  }
  {
    // Explicit keys win regardless of map order.
    KeyValueConfig kv;
    kv.set("reg.preset", "shakedrop-original");
    kv.set("reg.beta", "[-1,1]");
    const ExperimentConfig c = ExperimentConfig::from_kv(kv);
    EXPECT_EQ(c.arch.reg.coeff.beta.lo, -1.0);
    EXPECT_EQ(c.arch.reg.coeff.beta.hi, 1.0);
  }
  {
    KeyValueConfig kv;
    kv.set("reg.preset", "no-such-preset");
    EXPECT_THROW(ExperimentConfig::from_kv(kv), std::invalid_argument);
  }
}

TEST(ExperimentConfig, ResolvedConfigRoundTripsStably) {
  KeyValueConfig kv;
  kv.set("reg.preset", "shakedrop-original");
  kv.set("arch.depth", "20");
  kv.set("arch.input_h", "32");
  kv.set("arch.input_w", "32");
  kv.set("optimizer.base_lr", "0.05");
  kv.set("schedule.milestones", "10,20");
  kv.set("schedule.total_epochs", "30");
  kv.set("sweep.p_l", "0.5,0.9");
  kv.set("sweep.depths", "8,20");
  kv.set("augment.mixup", "1");
  const ExperimentConfig c = ExperimentConfig::from_kv(kv);
  const std::string resolved = c.to_kv().to_string();
  const ExperimentConfig c2 = ExperimentConfig::from_kv(KeyValueConfig::from_string(resolved));
  EXPECT_EQ(c2.to_kv().to_string(), resolved);
  EXPECT_EQ(c2.arch.depth, 20);
  EXPECT_EQ(c2.mixup_alpha, 1.0);
  ASSERT_EQ(c2.sweep.depths.size(), 2u);
  EXPECT_EQ(c2.sweep.depths[1], 20);
}

TEST(ExperimentConfig, CifarSourceCrossChecks) {
  KeyValueConfig kv;
  kv.set("data.source", "cifar10");
  kv.set("data.train_path", "/tmp/nonexistent.bin");
  // num_classes defaults to 4: must be 10 for cifar10.
  EXPECT_THROW(ExperimentConfig::from_kv(kv), std::invalid_argument);
  kv.set("arch.num_classes", "10");
  kv.set("arch.input_h", "32");
  kv.set("arch.input_w", "32");
  EXPECT_NO_THROW(ExperimentConfig::from_kv(kv));
}

TEST(ExperimentConfig, MilestoneAndBoolParsing) {
  KeyValueConfig kv;
  kv.set("schedule.milestones", "");
  kv.set("arch.erase_relu", "true");
  kv.set("optimizer.nesterov", "false");
  const ExperimentConfig c = ExperimentConfig::from_kv(kv);
  EXPECT_TRUE(c.schedule.milestones.empty());
  EXPECT_TRUE(c.arch.erase_relu);
  EXPECT_FALSE(c.optimizer.nesterov);
  KeyValueConfig bad;
  bad.set("arch.erase_relu", "yes");
  EXPECT_THROW(ExperimentConfig::from_kv(bad), std::invalid_argument);
}

}  // namespace
}  // namespace shakedrop
