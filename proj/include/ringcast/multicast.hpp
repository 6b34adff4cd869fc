#pragma once

// Atomic multicast node.
//
// One polling thread per node serves every subgroup the node belongs to.
// Each sweep runs, per subgroup, the receive, send and delivery predicates.
// Application threads only acquire and commit slots; the send predicate is
// the sole poster of slot writes.
//
// Locking: one mutex per subgroup guards the sender ring and every own-row
// mutation. Predicates compute under the lock and, unless disabled, drop it
// before posting writes. Pushing after unlock is safe because all pushed
// cells are monotonic: a later snapshot only carries newer values.

#include <atomic>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string_view>
#include <thread>
#include <vector>

#include "ringcast/metrics.hpp"
#include "ringcast/smc.hpp"
#include "ringcast/sst.hpp"
#include "ringcast/transport.hpp"
#include "ringcast/types.hpp"

namespace ringcast::multicast {

enum class DeliveryMode {
  kInPlace,   // one upcall per message with a view into the slot
  kCopyOut,   // message copied out of the slot before its upcall
  kBatched,   // one upcall with every deliverable message
};

DeliveryMode parse_delivery_mode(std::string_view text);
std::string_view to_string(DeliveryMode mode);

/// Optimization switches; every combination delivers the same order.
struct Toggles {
  bool batch_send = true;
  bool batch_receive = true;
  bool batch_delivery = true;
  bool nulls = true;
  bool unlock_before_push = true;

  static Toggles all_on() { return {}; }
  static Toggles baseline() { return {false, false, false, false, false}; }
  void set_batching(bool on) { batch_send = batch_receive = batch_delivery = on; }
};

struct Delivery {
  SubgroupId sg = 0;
  MessageId id;
  SeqNum seq = -1;
  std::span<const std::byte> body;
};

using DeliverFn = std::function<void(const Delivery&)>;
using DeliverBatchFn = std::function<void(std::span<const Delivery>)>;

struct SubgroupSpec {
  SubgroupConfig config;
  DeliveryMode mode = DeliveryMode::kInPlace;
  DeliverFn on_deliver;             // kInPlace, kCopyOut
  DeliverBatchFn on_deliver_batch;  // kBatched
};

struct CommitRecord {
  NodeId node = 0;
  SubgroupId sg = 0;
  std::uint32_t rank = 0;
  std::int64_t index = 0;
  bool is_null = false;
  std::uint64_t digest = 0;
};

struct EngineOptions {
  Toggles toggles;
  /// Consecutive idle sweeps before the loop parks on its doorbell.
  std::uint64_t idle_sweeps_before_park = 10000;
  bool record_commits = false;
  /// Called on the polling thread when a predicate throws (including
  /// delivery upcalls). Default: print and std::terminate().
  std::function<void(NodeId, std::exception_ptr)> on_fatal;
};

struct SubgroupStats {
  SubgroupId sg = 0;
  Histogram send_batches;      // slots per send-predicate firing
  Histogram receive_batches;   // messages (real + null) accounted per firing
  Histogram delivery_batches;  // seq positions delivered per firing
  std::uint64_t delivered_reals = 0;
  std::uint64_t delivered_bytes = 0;
  std::uint64_t skipped_nulls = 0;
  std::uint64_t nulls_committed = 0;
  std::uint64_t lemma_violations = 0;
  std::uint64_t delivery_copies = 0;
  std::uint64_t upcalls = 0;
  std::uint64_t writes_issued = 0;
  SeqNum received_num = -1;
  SeqNum delivered_num = -1;
};

struct NodeStats {
  NodeId node = 0;
  std::vector<SubgroupStats> subgroups;
  std::uint64_t sweeps = 0;
  std::uint64_t parks = 0;
  std::uint64_t posts_under_lock = 0;
};

class Node {
 public:
  using Builder = std::function<void(std::span<std::byte>)>;

  /// Registers the node's region on `fabric`. `subgroups` may list
  /// subgroups this node is not a member of; those are ignored.
  Node(transport::Fabric& fabric, NodeId self, const sst::SstLayout& layout,
       std::vector<SubgroupSpec> subgroups, EngineOptions options = {});
  ~Node();

  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  NodeId id() const { return self_; }

  void start();
  /// Stops and joins the polling thread. Blocked send() calls throw.
  void stop();
  bool running() const { return running_.load(std::memory_order_acquire); }
  bool failed() const { return failed_.load(std::memory_order_acquire); }

  bool is_member(SubgroupId sg) const;
  bool is_sender(SubgroupId sg) const;
  std::size_t max_payload(SubgroupId sg) const;

  /// Builds a message in place if a slot is free. Throws
  /// std::invalid_argument for non-senders, std::length_error when `len`
  /// exceeds the slot payload.
  std::optional<MessageId> try_send(SubgroupId sg, std::size_t len, const Builder& build);
  /// As try_send, retrying until a slot frees up.
  MessageId send(SubgroupId sg, std::size_t len, const Builder& build);
  /// Copies `payload` into the slot.
  MessageId send_copy(SubgroupId sg, std::span<const std::byte> payload);

  std::uint64_t delivered(SubgroupId sg) const;
  std::uint64_t nulls_committed() const;

  /// Only while the polling thread is stopped.
  NodeStats stats() const;
  std::vector<CommitRecord> commit_log() const;

  // Single predicate firings, for driving a node by hand while its polling
  // thread is not running. Return writes issued / messages handled.
  std::size_t send_predicate_step(SubgroupId sg);
  std::size_t receive_predicate_step(SubgroupId sg);
  std::size_t delivery_predicate_step(SubgroupId sg);
  /// Applies due writes and runs every predicate once; true on progress.
  bool sweep();

  sst::SstTable& table() { return table_; }
  const sst::SstTable& table() const { return table_; }

 private:
  struct Accounted {
    std::int64_t index;
    bool real;
    std::span<const std::byte> body;
  };
  struct FromSender {
    NodeId node = 0;
    std::uint64_t next_ordinal = 0;
    std::deque<smc::ReceivedSlot> scanned;  // seen but not yet accounted
    std::int64_t accounted = 0;
    std::int64_t nulls_accounted = 0;
    std::deque<Accounted> undelivered;
  };
  struct Subgroup;

  enum class SweepResult { kProgress, kWaiting, kIdle };

  Subgroup& subgroup(SubgroupId sg);
  const Subgroup& subgroup(SubgroupId sg) const;
  SweepResult sweep_once();
  void run();

  std::size_t send_step(Subgroup& g);
  std::size_t receive_step(Subgroup& g);
  std::size_t delivery_step(Subgroup& g);
  void commit_nulls(Subgroup& g, MessageId trigger);
  std::size_t push(Subgroup& g, sst::ByteRange range);

  transport::Fabric& fabric_;
  NodeId self_;
  sst::SstTable table_;
  EngineOptions options_;
  std::vector<std::unique_ptr<Subgroup>> subgroups_;

  std::thread thread_;
  std::atomic<bool> running_{false};
  std::atomic<bool> stopped_{false};
  std::atomic<bool> failed_{false};
  std::atomic<std::uint64_t> posts_under_lock_{0};
  std::uint64_t sweeps_ = 0;
};

}  // namespace ringcast::multicast
