#include <gtest/gtest.h>

#include <atomic>
#include <cstring>
#include <random>
#include <thread>
#include <vector>

#include "ringcast/sst.hpp"

using namespace ringcast;
using namespace ringcast::sst;

namespace {

SubgroupConfig group(SubgroupId id, std::vector<NodeId> members, std::vector<NodeId> senders, std::uint32_t w,
                     std::size_t m) {
  SubgroupConfig c;
  c.id = id;
  c.members = std::move(members);
  c.senders = std::move(senders);
  c.window = w;
  c.max_msg_size = m;
  return c;
}

// Memberships and windows of the three-subgroup example table.
std::vector<SubgroupConfig> example_subgroups() {
  return {group(0, {0, 1, 2}, {0, 1, 2}, 3, 64), group(1, {0, 1, 3}, {0, 1}, 2, 64),
          group(2, {0, 2, 4}, {0, 2, 4}, 1, 64)};
}

}  // namespace

TEST(Layout, SixteenNodeTenKilobyteSizing) {
  const std::vector<SubgroupConfig> sgs = {group(0, {0}, {0}, 100, 10 * 1024)};
  const auto layout = build_layout(16, sgs, 8);
  EXPECT_EQ(layout.total_slot_bytes(), 16'396'800u);
  // About 16 MB.
  EXPECT_NEAR(static_cast<double>(layout.total_slot_bytes()) / 1e6, 16.0, 0.5);
}

TEST(Layout, UnitScaleSizing) {
  const std::vector<SubgroupConfig> sgs = {group(0, {0}, {0}, 1, 1)};
  EXPECT_EQ(build_layout(1, sgs, 8).total_slot_bytes(), 9u);
  EXPECT_EQ(build_layout(1, sgs, 16).total_slot_bytes(), 17u);
}

TEST(Layout, SizingSumsSubgroups) {
  const auto sgs = example_subgroups();
  const auto layout = build_layout(5, sgs, 16);
  EXPECT_EQ(layout.slot_bytes_per_row(), (3u + 2u + 1u) * (64u + 16u));
  EXPECT_EQ(layout.total_slot_bytes(), 5u * 6u * 80u);
}

TEST(Layout, SlotColumnsFollowSubgroupOrder) {
  const auto sgs = example_subgroups();
  const auto layout = build_layout(5, sgs);
  const auto& c0 = layout.columns(0);
  const auto& c1 = layout.columns(1);
  const auto& c2 = layout.columns(2);
  // s[0][0..2], then s[1][0..1], then s[2][0]
  EXPECT_LT(c0.slot(0), c0.slot(1));
  EXPECT_LT(c0.slot(1), c0.slot(2));
  EXPECT_LE(c0.slot(2) + c0.stride, c1.slot(0));
  EXPECT_LT(c1.slot(0), c1.slot(1));
  EXPECT_LE(c1.slot(1) + c1.stride, c2.slot(0));
  EXPECT_LE(c2.slot(0) + c2.stride, layout.row_size);
}

TEST(Layout, ScalarCellsShareOneAlignedUnit) {
  const auto sgs = example_subgroups();
  const auto layout = build_layout(5, sgs);
  EXPECT_EQ(layout.row_size % 64, 0u);
  std::vector<std::pair<std::size_t, std::size_t>> extents;
  for (const auto& c : layout.subgroups) {
    EXPECT_EQ(c.scalars % 64, 0u);
    EXPECT_EQ(c.received_num() / 64, c.nulls_announced() / 64);
    EXPECT_EQ(c.slots % 64, 0u);
    EXPECT_EQ(c.stride % 8, 0u);
    extents.push_back({c.scalars, c.scalars + 64});
    extents.push_back({c.slots, c.slots + c.slot_region_bytes()});
    // Counter is the last word of each slot, after the body.
    EXPECT_EQ(c.use_counter(0) + 8, c.slot(0) + c.stride);
    EXPECT_GE(c.msg_index(0), c.payload(0) + c.max_payload());
  }
  std::sort(extents.begin(), extents.end());
  for (std::size_t i = 1; i < extents.size(); ++i) EXPECT_LE(extents[i - 1].second, extents[i].first);
}

TEST(Layout, JsonDumpListsOffsets) {
  const auto sgs = example_subgroups();
  const auto j = build_layout(5, sgs).to_json();
  EXPECT_EQ(j["node_count"], 5);
  ASSERT_EQ(j["subgroups"].size(), 3u);
  EXPECT_EQ(j["subgroups"][1]["window"], 2);
  EXPECT_TRUE(j["subgroups"][2].contains("slots"));
}

TEST(Layout, RejectsBadInput) {
  auto sgs = example_subgroups();
  EXPECT_THROW(build_layout(0, sgs), std::invalid_argument);
  EXPECT_THROW(build_layout(5, sgs, 12), std::invalid_argument);
  EXPECT_THROW(build_layout(3, sgs), std::invalid_argument);  // member 3 and 4 outside
  auto empty = sgs;
  empty[0].members.clear();
  empty[0].senders.clear();
  EXPECT_THROW(build_layout(5, empty), std::invalid_argument);
  auto zero_w = sgs;
  zero_w[1].window = 0;
  EXPECT_THROW(build_layout(5, zero_w), std::invalid_argument);
  auto stray = sgs;
  stray[2].senders = {1};
  EXPECT_THROW(build_layout(5, stray), std::invalid_argument);
  EXPECT_THROW(build_layout(5, sgs).columns(9), std::out_of_range);
}

class TableTest : public ::testing::Test {
 protected:
  TableTest() : fabric(3, transport::ChannelParams::zero_cost()) {
    sgs = {group(0, {0, 1, 2}, {0, 1, 2}, 4, 56)};
    layout = build_layout(3, sgs);
    for (NodeId n = 0; n < 3; ++n) tables.push_back(std::make_unique<SstTable>(fabric, layout, n));
  }
  std::vector<SubgroupConfig> sgs;
  transport::Fabric fabric;
  SstLayout layout;
  std::vector<std::unique_ptr<SstTable>> tables;
};

TEST_F(TableTest, CellsStartUnset) {
  const auto& c = layout.columns(0);
  for (NodeId row = 0; row < 3; ++row) {
    EXPECT_EQ(tables[1]->read(row, c.received_num()), kUnset);
    EXPECT_EQ(tables[1]->read(row, c.delivered_num()), kUnset);
    EXPECT_EQ(tables[1]->read(row, c.nulls_announced()), 0);
    EXPECT_EQ(tables[1]->read(row, c.use_counter(3)), kUnset);
  }
}

TEST_F(TableTest, LocalUpdatesAreMonotonic) {
  const auto cell = layout.columns(0).received_num();
  auto& t = *tables[0];
  t.update_local_cell(cell, 21);
  t.update_local_cell(cell, 25);
  t.update_local_cell(cell, 25);  // no-op
  EXPECT_EQ(t.read_local(cell), 25);
  EXPECT_THROW(t.update_local_cell(cell, 21), MonotonicityError);
  EXPECT_EQ(t.read_local(cell), 25);
}

TEST_F(TableTest, UpdatesStayLocalUntilPushed) {
  const auto& c = layout.columns(0);
  tables[0]->update_local_cell(c.received_num(), 21);
  const NodeId peers[] = {1, 2};
  EXPECT_EQ(tables[0]->push_cells(c.ack_range(), peers), 2u);
  fabric.deliver_all(1);
  EXPECT_EQ(tables[1]->read(0, c.received_num()), 21);

  tables[0]->update_local_cell(c.received_num(), 25);
  EXPECT_EQ(tables[1]->read(0, c.received_num()), 21);
  tables[0]->push_cells(c.ack_range(), peers);
  fabric.deliver_all(1);
  // Node 1 learns that node 0 received four more messages.
  EXPECT_EQ(tables[1]->read(0, c.received_num()) - 21, 4);
}

TEST_F(TableTest, PushWriteCounts) {
  const auto& c = layout.columns(0);
  const NodeId two[] = {1, 2};
  const auto before = fabric.writes_posted();
  tables[0]->push_cells(c.ack_range(), two);
  EXPECT_EQ(fabric.writes_posted() - before, 2u);
  tables[0]->push_cells(c.ack_range(), {});
  EXPECT_EQ(fabric.writes_posted() - before, 2u);
  EXPECT_THROW(tables[0]->push_cells({layout.row_size - 8, 16}, two), std::out_of_range);
  EXPECT_THROW(tables[0]->push_cells({0, 0}, two), std::out_of_range);
}

TEST(Table, PushToPeerWithoutRegionFails) {
  transport::Fabric fabric(2, transport::ChannelParams::zero_cost());
  const std::vector<SubgroupConfig> sgs = {group(0, {0, 1}, {0}, 1, 8)};
  const auto layout = build_layout(2, sgs);
  SstTable t(fabric, layout, 0);
  const NodeId peer[] = {1};
  EXPECT_THROW(t.push_cells(layout.columns(0).ack_range(), peer), transport::TransportError);
}

TEST_F(TableTest, RemoteObserverSeesNonDecreasingValues) {
  transport::ChannelParams p;
  p.post_cost_ns = 0;
  p.jitter_ns = 2000;
  transport::Fabric jittery(2, p);
  const std::vector<SubgroupConfig> two = {group(0, {0, 1}, {0, 1}, 2, 8)};
  const auto l2 = build_layout(2, two);
  SstTable writer(jittery, l2, 0);
  SstTable reader(jittery, l2, 1);
  const auto cell = l2.columns(0).received_num();
  transport::BackgroundApplier applier(jittery, {1});

  std::atomic<bool> done{false};
  std::vector<std::int64_t> seen;
  std::thread observer([&] {
    while (!done.load()) seen.push_back(reader.read(0, cell));
    seen.push_back(reader.read(0, cell));
  });
  std::mt19937 rng(7);
  const NodeId peer[] = {1};
  std::int64_t v = -1;
  for (int i = 0; i < 5000; ++i) {
    v += 1 + static_cast<std::int64_t>(rng() % 3);
    writer.update_local_cell(cell, v);
    // Sometimes push, sometimes let several updates pile up first.
    if (rng() % 2) writer.push_cells(l2.columns(0).ack_range(), peer);
  }
  writer.push_cells(l2.columns(0).ack_range(), peer);
  while (reader.read(0, cell) != v) std::this_thread::yield();
  done = true;
  observer.join();
  applier.stop();
  ASSERT_FALSE(seen.empty());
  EXPECT_TRUE(std::is_sorted(seen.begin(), seen.end()));
  EXPECT_EQ(seen.back(), v);
}

TEST_F(TableTest, DataThenGuardStress) {
  const auto& c = layout.columns(0);
  transport::BackgroundApplier applier(fabric, {1});
  const auto data = c.slot_range(0, c.window);  // spans several 64-byte units
  const auto guard = c.delivered_num();
  const NodeId peer[] = {1};

  std::atomic<bool> done{false};
  std::atomic<std::uint64_t> guard_ahead{0};
  std::thread reader([&] {
    const auto& t = *tables[1];
    while (!done.load()) {
      const std::int64_t g = t.read(0, guard);
      for (std::size_t off = data.offset; off < data.offset + data.length; off += 8) {
        if (t.read(0, off) < g) guard_ahead.fetch_add(1);
      }
    }
  });
  constexpr std::int64_t kPairs = 10000;
  auto& w = *tables[0];
  for (std::int64_t k = 0; k < kPairs; ++k) {
    auto bytes = w.local_bytes(data);
    for (std::size_t off = 0; off < bytes.size(); off += 8) std::memcpy(bytes.data() + off, &k, 8);
    w.update_local_cell(guard, k);
    EXPECT_EQ(w.push_data_then_guard(data, guard, peer), 2u);
    if (k % 64 == 0) std::this_thread::yield();
  }
  while (tables[1]->read(0, guard) != kPairs - 1) std::this_thread::yield();
  done = true;
  reader.join();
  applier.stop();
  EXPECT_EQ(guard_ahead.load(), 0u);
}

TEST_F(TableTest, DataWithoutGuardIsInvisibleToGuardReaders) {
  const auto& c = layout.columns(0);
  const NodeId peer[] = {1};
  auto bytes = tables[0]->local_bytes(c.slot_range(0, 1));
  std::memset(bytes.data(), 0x5a, 8);
  tables[0]->push_cells({c.slot(0), 8}, peer);
  fabric.deliver_all(1);
  EXPECT_EQ(tables[1]->read(0, c.delivered_num()), kUnset);
}
