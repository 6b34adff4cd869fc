#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ringcast/config.hpp"
#include "ringcast/harness.hpp"

using namespace ringcast;
using namespace ringcast::config;

TEST(KvConfig, ParsesCommentsAndWhitespace) {
  const auto kv = KvConfig::parse(
      "# header\n"
      "nodes = 8\n"
      "  message_size=1KB   # trailing\n"
      "\n"
      "name = tput run\n"
      "nodes = 6\n");
  EXPECT_EQ(kv.get_int("nodes", 0), 6);
  EXPECT_EQ(kv.get_size("message_size", 0), 1024);
  EXPECT_EQ(kv.get_string("name", ""), "tput run");
  EXPECT_EQ(kv.get_int("missing", 42), 42);
  EXPECT_FALSE(kv.has("missing"));
}

TEST(KvConfig, RejectsMalformedInput) {
  EXPECT_THROW(KvConfig::parse("nodes 8\n"), ConfigError);
  EXPECT_THROW(KvConfig::parse("= 8\n"), ConfigError);
  const auto kv = KvConfig::parse("nodes = eight\nflag = maybe\n");
  EXPECT_THROW(kv.get_int("nodes", 0), ConfigError);
  EXPECT_THROW(kv.get_bool("flag", false), ConfigError);
  EXPECT_THROW(KvConfig::load("/nonexistent/ringcast.cfg"), ConfigError);
}

TEST(KvConfig, OverridesReplaceValues) {
  auto kv = KvConfig::parse("window = 100\n");
  kv.apply_override("window=16");
  kv.apply_override("nulls = off");
  EXPECT_EQ(kv.get_int("window", 0), 16);
  EXPECT_FALSE(kv.get_bool("nulls", true));
  EXPECT_THROW(kv.apply_override("window"), ConfigError);
}

TEST(Values, SizesBoolsDurations) {
  EXPECT_EQ(parse_size("10KB"), 10240);
  EXPECT_EQ(parse_size("2MB"), 2 * 1024 * 1024);
  EXPECT_EQ(parse_size("17B"), 17);
  EXPECT_EQ(parse_size("17"), 17);
  EXPECT_THROW(parse_size("1GBX"), ConfigError);
  EXPECT_TRUE(parse_bool("on"));
  EXPECT_TRUE(parse_bool("yes"));
  EXPECT_FALSE(parse_bool("0"));
  EXPECT_EQ(parse_duration_ns("250ns"), 250);
  EXPECT_EQ(parse_duration_ns("100us"), 100000);
  EXPECT_EQ(parse_duration_ns("1ms"), 1000000);
  EXPECT_EQ(parse_duration_ns("2s"), 2000000000);
  EXPECT_EQ(parse_duration_ns("75"), 75);
  EXPECT_THROW(parse_duration_ns("fast"), ConfigError);
  EXPECT_EQ(split(" a, b,,c ,", ','), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(Values, Delays) {
  EXPECT_EQ(Delay::parse("none"), Delay::none());
  EXPECT_TRUE(Delay::parse("inf").infinite);
  EXPECT_TRUE(Delay::parse("never").infinite);
  EXPECT_EQ(Delay::parse("100us").ns, 100000);
  EXPECT_EQ(Delay::parse(Delay::parse("1ms").to_string()), Delay::parse("1ms"));
  EXPECT_EQ(Delay::parse(Delay::forever().to_string()), Delay::forever());
}

TEST(Scenario, DefaultsAndKeys) {
  const auto c = harness::ScenarioConfig::from_kv(KvConfig::parse(
      "nodes = 5\nsenders = half\nwindow = 7\nmessage_size = 100\nbatching = off\ndelay.3 = inf\n"
      "delivery_delay = 100us\ndelivery_mode = batched\n"));
  EXPECT_EQ(c.nodes, 5u);
  EXPECT_EQ(c.effective_max_msg_size(), 108u);
  EXPECT_FALSE(c.toggles.batch_send);
  EXPECT_FALSE(c.toggles.batch_delivery);
  EXPECT_TRUE(c.toggles.nulls);
  EXPECT_TRUE(c.delay_of(3).infinite);
  EXPECT_FALSE(c.delay_of(2).infinite);
  EXPECT_EQ(c.delivery_delay.ns, 100000);
  const auto plans = c.resolve_subgroups();
  ASSERT_EQ(plans.size(), 1u);
  EXPECT_EQ(plans[0].config.senders.size(), 3u);
  EXPECT_EQ(plans[0].config.window, 7u);
  EXPECT_EQ(plans[0].mode, multicast::DeliveryMode::kBatched);
}

TEST(Scenario, UnknownKeysAndBadValuesAreErrors) {
  EXPECT_THROW(harness::ScenarioConfig::from_kv(KvConfig::parse("nodez = 4\n")), ConfigError);
  EXPECT_THROW(harness::ScenarioConfig::from_kv(KvConfig::parse("subgroup.0.colour = red\n")), ConfigError);
  EXPECT_THROW(harness::ScenarioConfig::from_kv(KvConfig::parse("nodes = 0\n")), ConfigError);
  EXPECT_THROW(harness::ScenarioConfig::from_kv(KvConfig::parse("senders = 9\n")), ConfigError);
  EXPECT_THROW(harness::ScenarioConfig::from_kv(KvConfig::parse("message_size = 64\nmax_msg_size = 64\n")),
               ConfigError);
  EXPECT_THROW(harness::ScenarioConfig::from_kv(KvConfig::parse("delay.7 = 1ms\n")), ConfigError);
  EXPECT_THROW(harness::ScenarioConfig::from_kv(KvConfig::parse("delivery_delay = inf\n")), ConfigError);
  EXPECT_THROW(harness::ScenarioConfig::from_kv(KvConfig::parse("transport = carrier-pigeon\n")), ConfigError);
  EXPECT_THROW(harness::ScenarioConfig::from_kv(KvConfig::parse("window = 0\n")), ConfigError);
}

TEST(Scenario, ExplicitSubgroups) {
  const auto c = harness::ScenarioConfig::from_kv(KvConfig::parse(
      "nodes = 5\n"
      "subgroup.0.members = 0,1,2\nsubgroup.0.window = 3\n"
      "subgroup.1.members = 0,1,3\nsubgroup.1.senders = 0,1\nsubgroup.1.window = 2\n"
      "subgroup.2.members = 0,2,4\nsubgroup.2.active = off\nsubgroup.2.delivery = copy\n"));
  const auto plans = c.resolve_subgroups();
  ASSERT_EQ(plans.size(), 3u);
  EXPECT_TRUE(plans[0].config.senders.empty());
  EXPECT_EQ(plans[1].config.senders, (std::vector<NodeId>{0, 1}));
  EXPECT_EQ(plans[1].config.window, 2u);
  EXPECT_FALSE(plans[2].active);
  EXPECT_EQ(plans[2].mode, multicast::DeliveryMode::kCopyOut);
  EXPECT_THROW(harness::ScenarioConfig::from_kv(KvConfig::parse("subgroup.0.members = 0,9\n")), ConfigError);
}

TEST(Scenario, LoadsFileWithOverrides) {
  const auto path = std::filesystem::temp_directory_path() / "ringcast_config_test.cfg";
  std::ofstream(path) << "nodes = 3\nwindow = 50\n";
  const auto c = harness::ScenarioConfig::load(path, {"window=5", "seed=9"});
  EXPECT_EQ(c.nodes, 3u);
  EXPECT_EQ(c.window, 5u);
  EXPECT_EQ(c.seed, 9u);
  std::filesystem::remove(path);
}
