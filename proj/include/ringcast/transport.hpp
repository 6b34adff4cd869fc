#pragma once

// Simulated one-sided-write fabric.
//
// Every node registers one memory region. Peers write into it with
// post_write(); writes on a (src, dst) channel become visible in post order
// after a size-dependent latency, and each aligned 64-byte unit is updated
// atomically. Readers of a region never take locks.
//
// Writes are applied by the destination's applier: whoever calls
// deliver_due(dst). At most one thread applies into a destination at a
// time, so every channel has a single applier and FIFO order holds.

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "ringcast/types.hpp"

namespace ringcast::transport {

inline constexpr std::size_t kAtomicUnit = 64;

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Write latency as a function of payload size: linear between the 1-byte
/// and 4 KB measurements, then bandwidth-bound.
struct LatencyModel {
  std::int64_t one_byte_ns = 1730;
  std::int64_t knee_ns = 2460;
  std::size_t knee_bytes = 4096;
  double beyond_ns_per_byte = 0.08;

  std::int64_t operator()(std::size_t bytes) const;
  static LatencyModel zero() { return {0, 0, 4096, 0.0}; }
};

struct ChannelParams {
  std::int64_t post_cost_ns = 1000;
  LatencyModel latency;
  std::int64_t jitter_ns = 0;  // uniform in [0, jitter_ns] added per write
  std::uint64_t seed = 1;

  /// No post cost and no latency; for correctness-only runs.
  static ChannelParams zero_cost();
};

struct WriteRequest {
  NodeId src = 0;
  NodeId dst = 0;
  std::size_t offset = 0;
  std::vector<std::byte> payload;
  std::optional<std::int64_t> post_cost_ns;  // overrides ChannelParams
  std::optional<std::int64_t> wire_latency_ns;
};

/// Wake signal for a parked polling loop.
///
/// A loop takes a ticket, re-checks for work, then parks on the ticket.
/// Any ring() after the ticket was taken makes park() return.
class Doorbell {
 public:
  std::uint64_t ticket() const { return seq_.load(std::memory_order_seq_cst); }
  void park(std::uint64_t ticket);
  /// Returns true when a parked waiter was woken.
  bool ring();

  bool parked() const { return parked_.load(std::memory_order_seq_cst); }
  std::uint64_t wakes() const { return wakes_.load(std::memory_order_relaxed); }
  std::uint64_t idle_rings() const { return idle_rings_.load(std::memory_order_relaxed); }
  std::uint64_t parks() const { return parks_.load(std::memory_order_relaxed); }

 private:
  std::atomic<std::uint64_t> seq_{0};
  std::atomic<bool> parked_{false};
  std::atomic<std::uint64_t> wakes_{0};
  std::atomic<std::uint64_t> idle_rings_{0};
  std::atomic<std::uint64_t> parks_{0};
};

class MemoryRegion {
 public:
  MemoryRegion(NodeId owner, std::size_t size);

  NodeId owner() const { return owner_; }
  std::size_t size() const { return size_; }

  std::span<std::byte> bytes();
  std::span<const std::byte> bytes() const;

  /// 8-byte aligned scalar access.
  std::int64_t load(std::size_t offset,
                    std::memory_order order = std::memory_order_acquire) const;
  void store(std::size_t offset, std::int64_t value,
             std::memory_order order = std::memory_order_release);

  /// Consistent snapshot of one 64-byte unit.
  std::array<std::uint64_t, 8> read_unit(std::size_t unit) const;

  /// Applier path: copies `payload` in ascending address order, one
  /// 64-byte unit at a time.
  void apply(std::size_t offset, std::span<const std::byte> payload);

 private:
  struct alignas(kAtomicUnit) Unit {
    std::uint64_t words[kAtomicUnit / 8];
  };

  std::uint64_t* word_ptr(std::size_t word_index) const;

  NodeId owner_;
  std::size_t size_;
  std::size_t units_;
  std::unique_ptr<Unit[]> storage_;
  std::unique_ptr<std::atomic<std::uint32_t>[]> versions_;
};

struct ChannelStats {
  std::uint64_t posted = 0;
  std::uint64_t applied = 0;
  std::uint64_t bytes_posted = 0;
};

class Fabric {
 public:
  explicit Fabric(std::size_t node_count, ChannelParams params = {});
  ~Fabric();

  Fabric(const Fabric&) = delete;
  Fabric& operator=(const Fabric&) = delete;

  std::size_t node_count() const { return node_count_; }
  const ChannelParams& params() const { return params_; }

  /// Once per node, before any write targets it.
  MemoryRegion& register_region(NodeId node, std::size_t size);
  bool registered(NodeId node) const;
  MemoryRegion& region(NodeId node);
  const MemoryRegion& region(NodeId node) const;

  /// Snapshots `payload`, charges the poster the post cost, and queues the
  /// write for application after the wire latency.
  void post_write(NodeId src, NodeId dst, std::size_t offset,
                  std::span<const std::byte> payload);
  void post_write(WriteRequest req);

  void ring_doorbell(NodeId src, NodeId dst);
  Doorbell& doorbell(NodeId node);

  /// Applies every write into `dst` whose latency has elapsed. Returns the
  /// number applied; 0 if another thread is applying into `dst` right now.
  std::size_t deliver_due(NodeId dst);
  /// Applies everything queued for `dst`, ignoring latency.
  std::size_t deliver_all(NodeId dst);
  bool has_pending(NodeId dst) const;

  ChannelStats channel_stats(NodeId src, NodeId dst) const;
  std::uint64_t writes_posted() const;
  std::uint64_t writes_applied() const;
  std::uint64_t writes_posted_by(NodeId src) const;
  /// Wall time `src` spent inside post_write.
  std::int64_t posting_ns(NodeId src) const;

 private:
  struct PendingWrite {
    std::size_t offset;
    std::vector<std::byte> payload;
    std::int64_t visible_at_ns;
  };
  struct Channel {
    std::mutex mu;
    std::deque<PendingWrite> queue;
    std::int64_t last_visible_ns = 0;
    std::mt19937_64 rng;
    std::atomic<std::uint64_t> posted{0};
    std::atomic<std::uint64_t> applied{0};
    std::atomic<std::uint64_t> bytes_posted{0};
  };
  struct Endpoint {
    std::unique_ptr<MemoryRegion> region;
    std::atomic<bool> ready{false};
    Doorbell bell;
    std::mutex applier;
    std::atomic<std::int64_t> inbound{0};
    std::atomic<std::int64_t> posting_ns{0};
  };

  Channel& channel(NodeId src, NodeId dst) const;
  Endpoint& endpoint(NodeId node) const;
  std::size_t drain(NodeId dst, bool ignore_latency);

  std::size_t node_count_;
  ChannelParams params_;
  std::unique_ptr<Endpoint[]> endpoints_;
  std::unique_ptr<Channel[]> channels_;
  std::mutex registration_;
};

/// Runs deliver_due() for a set of destinations on a background thread.
/// Useful when no polling loop drives the destination.
class BackgroundApplier {
 public:
  BackgroundApplier(Fabric& fabric, std::vector<NodeId> nodes);
  ~BackgroundApplier();
  BackgroundApplier(const BackgroundApplier&) = delete;
  BackgroundApplier& operator=(const BackgroundApplier&) = delete;

  void stop();

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace ringcast::transport
