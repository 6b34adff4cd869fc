#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <cstring>
#include <thread>
#include <vector>

#include "ringcast/clock.hpp"
#include "ringcast/transport.hpp"

using namespace ringcast;
using namespace ringcast::transport;

namespace {

std::vector<std::byte> word_bytes(std::int64_t v, std::size_t words = 1) {
  std::vector<std::byte> out(words * 8);
  for (std::size_t i = 0; i < words; ++i) std::memcpy(out.data() + i * 8, &v, 8);
  return out;
}

}  // namespace

TEST(LatencyModel, MatchesMeasuredPoints) {
  LatencyModel m;
  EXPECT_EQ(m(1), 1730);
  EXPECT_EQ(m(4096), 2460);
  // Linear in between.
  const auto mid = m(2048);
  EXPECT_GT(mid, 1730);
  EXPECT_LT(mid, 2460);
  // Bandwidth-bound beyond the knee.
  EXPECT_NEAR(static_cast<double>(m(8192)), 2460 + 4096 * 0.08, 1.0);
  EXPECT_EQ(LatencyModel::zero()(10000), 0);
}

TEST(Fabric, PostedBytesBecomeVisibleAfterDelivery) {
  Fabric f(2, ChannelParams::zero_cost());
  f.register_region(0, 256);
  auto& r1 = f.register_region(1, 256);
  f.post_write(0, 1, 64, word_bytes(42));
  EXPECT_EQ(r1.load(64), 0);
  EXPECT_TRUE(f.has_pending(1));
  EXPECT_EQ(f.deliver_all(1), 1u);
  EXPECT_EQ(r1.load(64), 42);
  EXPECT_FALSE(f.has_pending(1));
}

TEST(Fabric, ChannelCountsEveryPost) {
  Fabric f(2, ChannelParams::zero_cost());
  f.register_region(0, 64);
  f.register_region(1, 64);
  for (int i = 0; i < 1000; ++i) f.post_write(0, 1, 0, word_bytes(i));
  EXPECT_EQ(f.channel_stats(0, 1).posted, 1000u);
  EXPECT_EQ(f.channel_stats(0, 1).bytes_posted, 8000u);
  EXPECT_EQ(f.channel_stats(1, 0).posted, 0u);
  EXPECT_EQ(f.writes_posted(), 1000u);
  EXPECT_EQ(f.writes_posted_by(0), 1000u);
  f.deliver_all(1);
  EXPECT_EQ(f.writes_applied(), 1000u);
  EXPECT_EQ(f.region(1).load(0), 999);
}

TEST(Fabric, RejectsBadWrites) {
  Fabric f(3, ChannelParams::zero_cost());
  f.register_region(0, 64);
  f.register_region(1, 64);
  EXPECT_THROW(f.post_write(0, 2, 0, word_bytes(1)), TransportError);   // no region
  EXPECT_THROW(f.post_write(0, 7, 0, word_bytes(1)), TransportError);   // no such node
  EXPECT_THROW(f.post_write(0, 1, 60, word_bytes(1)), TransportError);  // past the end
  EXPECT_THROW(f.post_write(0, 1, 0, {}), TransportError);              // empty
  EXPECT_THROW(f.register_region(1, 64), TransportError);
  EXPECT_THROW(f.register_region(2, 0), TransportError);
  EXPECT_THROW(f.ring_doorbell(0, 2), TransportError);
  EXPECT_EQ(f.writes_posted(), 0u);
}

TEST(Fabric, LatencyDefersVisibility) {
  Fabric f(2, ChannelParams::zero_cost());
  f.register_region(0, 64);
  auto& r1 = f.register_region(1, 64);
  WriteRequest req;
  req.src = 0;
  req.dst = 1;
  req.offset = 0;
  req.payload = word_bytes(5);
  req.wire_latency_ns = 30'000'000;
  f.post_write(std::move(req));
  EXPECT_EQ(f.deliver_due(1), 0u);
  EXPECT_EQ(r1.load(0), 0);
  std::this_thread::sleep_for(std::chrono::milliseconds(40));
  EXPECT_EQ(f.deliver_due(1), 1u);
  EXPECT_EQ(r1.load(0), 5);
}

TEST(Fabric, SlowWriteHoldsBackLaterWritesOnItsChannel) {
  Fabric f(3, ChannelParams::zero_cost());
  f.register_region(0, 64);
  auto& r1 = f.register_region(1, 64);
  f.register_region(2, 64);
  WriteRequest slow;
  slow.src = 0;
  slow.dst = 1;
  slow.payload = word_bytes(1);
  slow.wire_latency_ns = 30'000'000;
  f.post_write(std::move(slow));
  f.post_write(0, 1, 8, word_bytes(2));  // fast, but queued behind the slow one
  f.post_write(2, 1, 16, word_bytes(3));  // other channel: independent
  EXPECT_EQ(f.deliver_due(1), 1u);
  EXPECT_EQ(r1.load(0), 0);
  EXPECT_EQ(r1.load(8), 0);
  EXPECT_EQ(r1.load(16), 3);
  std::this_thread::sleep_for(std::chrono::milliseconds(40));
  EXPECT_EQ(f.deliver_due(1), 2u);
  EXPECT_EQ(r1.load(8), 2);
}

TEST(Fabric, PosterPaysPostCost) {
  ChannelParams p = ChannelParams::zero_cost();
  p.post_cost_ns = 200'000;
  Fabric f(2, p);
  f.register_region(0, 64);
  f.register_region(1, 64);
  const auto start = now_ns();
  for (int i = 0; i < 5; ++i) f.post_write(0, 1, 0, word_bytes(i));
  EXPECT_GE(now_ns() - start, 1'000'000);
  EXPECT_GE(f.posting_ns(0), 1'000'000);
  EXPECT_EQ(f.posting_ns(1), 0);
}

TEST(Fabric, ConservationWithWritesInFlight) {
  Fabric f(2);
  f.register_region(0, 64);
  f.register_region(1, 64);
  for (int i = 0; i < 100; ++i) f.post_write(0, 1, 0, word_bytes(i));
  const auto partial = f.deliver_due(1);
  const auto stats = f.channel_stats(0, 1);
  EXPECT_EQ(stats.applied, partial);
  EXPECT_EQ(stats.posted, 100u);
  f.deliver_all(1);
  EXPECT_EQ(f.channel_stats(0, 1).applied, 100u);
}

// Every reader observation of the guard implies the data written before it.
TEST(Fabric, FenceHoldsUnderConcurrentReaders) {
  ChannelParams p;
  p.post_cost_ns = 0;
  p.jitter_ns = 3000;
  Fabric f(2, p);
  f.register_region(0, 256);
  auto& r1 = f.register_region(1, 256);
  BackgroundApplier applier(f, {1});

  constexpr std::int64_t kPairs = 10000;
  std::atomic<bool> done{false};
  std::atomic<std::uint64_t> violations{0};
  std::atomic<std::uint64_t> observations{0};
  std::vector<std::thread> readers;
  for (int t = 0; t < 2; ++t) {
    readers.emplace_back([&] {
      std::int64_t last_guard = 0;
      while (!done.load()) {
        const std::int64_t guard = r1.load(128);
        const std::int64_t data = r1.load(0);
        if (data < guard) violations.fetch_add(1);
        if (guard < last_guard) violations.fetch_add(1);
        last_guard = guard;
        observations.fetch_add(1, std::memory_order_relaxed);
      }
    });
  }
  for (std::int64_t k = 1; k <= kPairs; ++k) {
    f.post_write(0, 1, 0, word_bytes(k));
    f.post_write(0, 1, 128, word_bytes(k));
    if (k % 64 == 0) std::this_thread::yield();
  }
  while (f.channel_stats(0, 1).applied < 2 * kPairs) std::this_thread::yield();
  done = true;
  for (auto& t : readers) t.join();
  applier.stop();
  EXPECT_EQ(violations.load(), 0u);
  EXPECT_GT(observations.load(), 0u);
  EXPECT_EQ(r1.load(128), kPairs);
}

TEST(Fabric, AlignedUnitsAreNeverTorn) {
  Fabric f(2, ChannelParams::zero_cost());
  f.register_region(0, 128);
  auto& r1 = f.register_region(1, 128);
  BackgroundApplier applier(f, {1});

  std::atomic<bool> done{false};
  std::atomic<std::uint64_t> torn{0};
  std::thread reader([&] {
    while (!done.load()) {
      const auto unit = r1.read_unit(1);
      for (auto w : unit) {
        if (w != unit[0]) torn.fetch_add(1);
      }
    }
  });
  for (std::int64_t k = 1; k <= 20000; ++k) {
    f.post_write(0, 1, 64, word_bytes(k, 8));
    if (k % 64 == 0) std::this_thread::yield();
  }
  while (f.channel_stats(0, 1).applied < 20000) std::this_thread::yield();
  done = true;
  reader.join();
  EXPECT_EQ(torn.load(), 0u);
  EXPECT_EQ(r1.read_unit(1)[7], 20000u);
}

TEST(MemoryRegion, PartialWordWritesMerge) {
  MemoryRegion r(0, 128);
  r.store(0, -1);
  const std::byte two[2] = {std::byte{0x34}, std::byte{0x12}};
  r.apply(3, two);
  std::int64_t expect = -1;
  auto* b = reinterpret_cast<unsigned char*>(&expect);
  b[3] = 0x34;
  b[4] = 0x12;
  EXPECT_EQ(r.load(0), expect);
  EXPECT_THROW(r.load(4), std::out_of_range);
  EXPECT_THROW(r.load(128), std::out_of_range);
}

TEST(MemoryRegion, WriteSpanningUnits) {
  MemoryRegion r(0, 256);
  std::vector<std::byte> payload(150);
  for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<std::byte>(i);
  r.apply(40, payload);
  auto bytes = r.bytes();
  for (std::size_t i = 0; i < payload.size(); ++i) ASSERT_EQ(bytes[40 + i], payload[i]);
  EXPECT_EQ(bytes[39], std::byte{0});
  EXPECT_EQ(bytes[190], std::byte{0});
}

TEST(Doorbell, RingWakesParkedLoop) {
  Doorbell bell;
  std::atomic<bool> woke{false};
  std::thread t([&] {
    bell.park(bell.ticket());
    woke = true;
  });
  while (!bell.parked()) std::this_thread::yield();
  EXPECT_TRUE(bell.ring());
  t.join();
  EXPECT_TRUE(woke.load());
  EXPECT_EQ(bell.wakes(), 1u);
}

TEST(Doorbell, RingWhileRunningOnlyCounts) {
  Doorbell bell;
  EXPECT_FALSE(bell.ring());
  EXPECT_EQ(bell.idle_rings(), 1u);
  EXPECT_EQ(bell.wakes(), 0u);
}

TEST(Doorbell, RingAfterTicketPreventsSleep) {
  Doorbell bell;
  const auto ticket = bell.ticket();
  bell.ring();
  bell.park(ticket);  // returns at once
  EXPECT_EQ(bell.parks(), 1u);
}

TEST(Doorbell, ArrivingWriteWakesParkedDestination) {
  Fabric f(2);
  f.register_region(0, 64);
  auto& r1 = f.register_region(1, 64);
  std::atomic<std::int64_t> seen{0};
  std::thread dst([&] {
    auto& bell = f.doorbell(1);
    for (;;) {
      const auto ticket = bell.ticket();
      f.deliver_due(1);
      if (r1.load(0) == 9) break;
      if (f.has_pending(1)) {
        std::this_thread::yield();
        continue;
      }
      bell.park(ticket);
    }
    seen = r1.load(0);
  });
  while (!f.doorbell(1).parked()) std::this_thread::yield();
  f.post_write(0, 1, 0, word_bytes(9));
  dst.join();
  EXPECT_EQ(seen.load(), 9);
  EXPECT_GE(f.doorbell(1).wakes(), 1u);
}
