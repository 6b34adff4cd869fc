#include "ringcast/multicast.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>

#include "ringcast/digest.hpp"
#include "ringcast/protocol.hpp"

namespace ringcast::multicast {

namespace {

// Depth of subgroup locks held by the current thread; pushes issued while
// it is nonzero are counted as posts under lock.
thread_local int t_lock_depth = 0;

class LockScope {
 public:
  explicit LockScope(std::mutex& m) : lock_(m) { ++t_lock_depth; }
  ~LockScope() {
    if (lock_.owns_lock()) --t_lock_depth;
  }
  LockScope(const LockScope&) = delete;
  LockScope& operator=(const LockScope&) = delete;

  void unlock() {
    lock_.unlock();
    --t_lock_depth;
  }

 private:
  std::unique_lock<std::mutex> lock_;
};

void default_fatal(NodeId node, std::exception_ptr error) {
  try {
    std::rethrow_exception(error);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "ringcast: node %u failed: %s\n", node, e.what());
  } catch (...) {
    std::fprintf(stderr, "ringcast: node %u failed with a non-standard exception\n", node);
  }
  std::terminate();
}

}  // namespace

DeliveryMode parse_delivery_mode(std::string_view text) {
  if (text == "inplace") return DeliveryMode::kInPlace;
  if (text == "copy") return DeliveryMode::kCopyOut;
  if (text == "batched") return DeliveryMode::kBatched;
  throw std::invalid_argument("unknown delivery mode '" + std::string(text) + "'");
}

std::string_view to_string(DeliveryMode mode) {
  switch (mode) {
    case DeliveryMode::kInPlace: return "inplace";
    case DeliveryMode::kCopyOut: return "copy";
    case DeliveryMode::kBatched: return "batched";
  }
  return "?";
}

struct Node::Subgroup {
  SubgroupSpec spec;
  const sst::SubgroupColumns* cols = nullptr;
  std::vector<NodeId> peers;  // members other than self
  std::uint32_t senders = 0;

  std::mutex lock;       // sender ring and own-row cells
  std::mutex send_lock;  // one application sender at a time
  std::optional<smc::SenderState> sender;

  // Polling thread only.
  std::int64_t nulls_pushed = 0;
  SeqNum received = -1;
  SeqNum delivered_upto = -1;
  std::vector<FromSender> from;
  std::vector<std::int64_t> counts;
  std::vector<smc::ReceivedSlot> scan_buf;
  std::vector<std::uint32_t> to_push;
  std::vector<Delivery> batch;
  std::vector<std::byte> copy_buf;

  Histogram send_batches;
  Histogram receive_batches;
  Histogram delivery_batches;
  std::uint64_t delivered_bytes = 0;
  std::uint64_t skipped_nulls = 0;
  std::uint64_t lemma_violations = 0;
  std::uint64_t delivery_copies = 0;
  std::uint64_t upcalls = 0;
  std::uint64_t writes_issued = 0;

  std::atomic<std::uint64_t> delivered_reals{0};
  std::atomic<std::uint64_t> nulls_committed{0};

  std::vector<CommitRecord> commits;  // guarded by `lock`
};

Node::Node(transport::Fabric& fabric, NodeId self, const sst::SstLayout& layout,
           std::vector<SubgroupSpec> subgroups, EngineOptions options)
    : fabric_(fabric), self_(self), table_(fabric, layout, self), options_(std::move(options)) {
  if (!options_.on_fatal) options_.on_fatal = default_fatal;
  for (auto& spec : subgroups) {
    if (!spec.config.is_member(self)) continue;
    auto g = std::make_unique<Subgroup>();
    g->cols = &table_.layout().columns(spec.config.id);
    g->senders = static_cast<std::uint32_t>(spec.config.senders.size());
    for (NodeId m : spec.config.members) {
      if (m != self) g->peers.push_back(m);
    }
    const int rank = spec.config.sender_rank(self);
    if (rank >= 0) g->sender.emplace(static_cast<std::uint32_t>(rank));
    for (NodeId s : spec.config.senders) {
      FromSender f;
      f.node = s;
      g->from.push_back(std::move(f));
    }
    g->counts.resize(g->senders, 0);
    if (spec.mode == DeliveryMode::kBatched && !spec.on_deliver_batch && spec.on_deliver) {
      throw std::invalid_argument("batched delivery needs a batch handler");
    }
    g->spec = std::move(spec);
    subgroups_.push_back(std::move(g));
  }
}

Node::~Node() { stop(); }

void Node::start() {
  if (thread_.joinable()) throw std::logic_error("node already started");
  stopped_.store(false, std::memory_order_release);
  running_.store(true, std::memory_order_release);
  thread_ = std::thread([this] { run(); });
}

void Node::stop() {
  stopped_.store(true, std::memory_order_release);
  running_.store(false, std::memory_order_release);
  fabric_.doorbell(self_).ring();
  if (thread_.joinable()) thread_.join();
}

Node::Subgroup& Node::subgroup(SubgroupId sg) {
  for (auto& g : subgroups_) {
    if (g->spec.config.id == sg) return *g;
  }
  throw std::invalid_argument("node " + std::to_string(self_) + " is not a member of subgroup " +
                              std::to_string(sg));
}

const Node::Subgroup& Node::subgroup(SubgroupId sg) const {
  return const_cast<Node*>(this)->subgroup(sg);
}

bool Node::is_member(SubgroupId sg) const {
  return std::any_of(subgroups_.begin(), subgroups_.end(),
                     [sg](const auto& g) { return g->spec.config.id == sg; });
}

bool Node::is_sender(SubgroupId sg) const { return is_member(sg) && subgroup(sg).sender.has_value(); }

std::size_t Node::max_payload(SubgroupId sg) const { return subgroup(sg).cols->max_payload(); }

std::optional<MessageId> Node::try_send(SubgroupId sg, std::size_t len, const Builder& build) {
  Subgroup& g = subgroup(sg);
  if (!g.sender) {
    throw std::invalid_argument("node " + std::to_string(self_) + " is not a sender in subgroup " +
                                std::to_string(sg));
  }
  if (len > g.cols->max_payload()) {
    throw std::length_error("message of " + std::to_string(len) + " bytes exceeds slot payload " +
                            std::to_string(g.cols->max_payload()));
  }
  std::lock_guard send_guard(g.send_lock);
  std::optional<smc::SlotHandle> slot;
  {
    LockScope lk(g.lock);
    slot = smc::acquire_slot(table_, g.spec.config, *g.cols, *g.sender);
  }
  if (!slot) return std::nullopt;

  // The slot is ours alone until commit; build without the subgroup lock.
  const auto body = slot->payload.first(len);
  if (build) build(body);

  MessageId id;
  {
    LockScope lk(g.lock);
    id = smc::commit_send(table_, *g.cols, *g.sender, *slot, len);
    if (options_.record_commits) {
      g.commits.push_back({self_, sg, id.sender_rank, id.index, false, fnv1a64(body)});
    }
  }
  fabric_.doorbell(self_).ring();
  return id;
}

MessageId Node::send(SubgroupId sg, std::size_t len, const Builder& build) {
  for (;;) {
    if (stopped_.load(std::memory_order_acquire) || failed()) {
      throw std::runtime_error("node " + std::to_string(self_) + " stopped");
    }
    if (auto id = try_send(sg, len, build)) return *id;
    std::this_thread::yield();
  }
}

MessageId Node::send_copy(SubgroupId sg, std::span<const std::byte> payload) {
  return send(sg, payload.size(), [payload](std::span<std::byte> out) {
    if (!payload.empty()) std::memcpy(out.data(), payload.data(), payload.size());
  });
}

std::uint64_t Node::delivered(SubgroupId sg) const {
  return subgroup(sg).delivered_reals.load(std::memory_order_relaxed);
}

std::uint64_t Node::nulls_committed() const {
  std::uint64_t total = 0;
  for (const auto& g : subgroups_) total += g->nulls_committed.load(std::memory_order_relaxed);
  return total;
}

std::size_t Node::push(Subgroup& g, sst::ByteRange range) {
  if (g.peers.empty()) return 0;
  if (t_lock_depth > 0) posts_under_lock_.fetch_add(g.peers.size(), std::memory_order_relaxed);
  const std::size_t n = table_.push_cells(range, g.peers);
  g.writes_issued += n;
  return n;
}

std::size_t Node::send_step(Subgroup& g) {
  if (!g.sender) return 0;
  const auto& cols = *g.cols;
  LockScope lk(g.lock);
  g.to_push.assign(g.sender->pending.begin(), g.sender->pending.end());
  g.sender->pending.clear();
  // Read after taking the pending slots: every real committed before the
  // announced nulls is then pushed ahead of the nulls cell.
  const std::int64_t nulls = table_.read_local(cols.nulls_announced());
  const bool push_nulls = nulls > g.nulls_pushed;
  if (g.to_push.empty() && !push_nulls) return 0;
  if (options_.toggles.unlock_before_push) lk.unlock();

  std::size_t writes = 0;
  if (!g.to_push.empty()) {
    if (options_.toggles.batch_send) {
      // Ring order is contiguous except where it wraps to slot 0.
      std::size_t i = 0;
      while (i < g.to_push.size()) {
        std::size_t j = i + 1;
        while (j < g.to_push.size() && g.to_push[j] == g.to_push[j - 1] + 1) ++j;
        writes += push(g, cols.slot_range(g.to_push[i], static_cast<std::uint32_t>(j - i)));
        i = j;
      }
      g.send_batches.add(g.to_push.size());
    } else {
      for (std::uint32_t pos : g.to_push) {
        writes += push(g, cols.slot_range(pos, 1));
        g.send_batches.add(1);
      }
    }
  }
  if (push_nulls) {
    writes += push(g, cols.nulls_range());
    g.nulls_pushed = nulls;
  }
  // A step with no peers still made progress.
  return std::max<std::size_t>(writes, 1);
}

std::size_t Node::receive_step(Subgroup& g) {
  const auto& cols = *g.cols;
  const bool batch = options_.toggles.batch_receive;
  std::size_t newly = 0;
  SeqNum max_new = -1;

  for (std::uint32_t rank = 0; rank < g.senders; ++rank) {
    FromSender& f = g.from[rank];
    g.scan_buf.clear();
    const std::size_t limit = batch ? cols.window : (f.scanned.empty() ? 1 : 0);
    if (limit > 0) {
      f.next_ordinal += smc::scan_new_messages(table_, cols, f.node, f.next_ordinal, limit, g.scan_buf);
      f.scanned.insert(f.scanned.end(), g.scan_buf.begin(), g.scan_buf.end());
    }
    const std::int64_t nulls_seen = table_.read(f.node, cols.nulls_announced());

    // Indices the sender skipped with nulls are the gaps between its reals;
    // reals committed before a null are always visible before it.
    const std::int64_t before = f.accounted;
    std::size_t budget = batch ? std::numeric_limits<std::size_t>::max() : 1;
    while (budget > 0) {
      if (!f.scanned.empty() && f.scanned.front().msg_index == f.accounted) {
        f.undelivered.push_back({f.accounted, true, f.scanned.front().payload});
        f.scanned.pop_front();
      } else if (!f.scanned.empty() && f.scanned.front().msg_index < f.accounted) {
        throw ProtocolError("sender " + std::to_string(f.node) + " repeated message index " +
                            std::to_string(f.scanned.front().msg_index));
      } else if (f.nulls_accounted < nulls_seen) {
        f.undelivered.push_back({f.accounted, false, {}});
        ++f.nulls_accounted;
      } else {
        break;
      }
      ++f.accounted;
      --budget;
    }
    if (f.accounted > before) {
      newly += static_cast<std::size_t>(f.accounted - before);
      max_new = std::max(max_new, protocol::seq_num(rank, f.accounted - 1, g.senders));
    }
    g.counts[rank] = f.accounted;
  }
  if (newly == 0) return 0;
  g.receive_batches.add(newly);

  const SeqNum received = protocol::compute_received_num(g.counts);
  LockScope lk(g.lock);
  const bool ack = received > g.received;
  if (ack) {
    table_.update_local_cell(cols.received_num(), received);
    g.received = received;
  }
  if (options_.toggles.nulls && g.sender && max_new >= 0) {
    commit_nulls(g, protocol::message_at(max_new, g.senders));
  }
  if (ack) {
    if (options_.toggles.unlock_before_push) lk.unlock();
    push(g, cols.ack_range());
  }
  return newly;
}

void Node::commit_nulls(Subgroup& g, MessageId trigger) {
  auto& s = *g.sender;
  const std::int64_t count = protocol::null_count_decision(s.rank, s.next_index, trigger);
  if (count == 0) return;
  s.next_index += count;
  const auto& cols = *g.cols;
  table_.update_local_cell(cols.nulls_announced(), table_.read_local(cols.nulls_announced()) + count);
  g.nulls_committed.fetch_add(static_cast<std::uint64_t>(count), std::memory_order_relaxed);
  if (options_.record_commits) {
    for (std::int64_t idx = s.next_index - count; idx < s.next_index; ++idx) {
      g.commits.push_back({self_, g.spec.config.id, s.rank, idx, true, 0});
    }
  }
  // One round suffices: the next own message follows the trigger and the
  // last null precedes it.
  const SeqNum target = protocol::seq_num(trigger.sender_rank, trigger.index, g.senders);
  const SeqNum next = protocol::seq_num(s.rank, s.next_index, g.senders);
  const SeqNum last = protocol::seq_num(s.rank, s.next_index - 1, g.senders);
  if (!(next > target && last < target)) ++g.lemma_violations;
}

std::size_t Node::delivery_step(Subgroup& g) {
  const auto& cols = *g.cols;
  SeqNum frontier = std::numeric_limits<SeqNum>::max();
  for (NodeId m : g.spec.config.members) {
    frontier = std::min(frontier, table_.read(m, cols.received_num()));
  }
  if (frontier <= g.delivered_upto) return 0;
  const SeqNum first = g.delivered_upto + 1;
  const SeqNum last = options_.toggles.batch_delivery ? frontier : first;

  const SubgroupId sg = g.spec.config.id;
  const DeliveryMode mode = g.spec.mode;
  g.batch.clear();
  std::uint64_t reals = 0;
  for (SeqNum s = first; s <= last; ++s) {
    const MessageId id = protocol::message_at(s, g.senders);
    FromSender& f = g.from[id.sender_rank];
    if (f.undelivered.empty() || f.undelivered.front().index != id.index) {
      throw ProtocolError("delivery frontier passed an unaccounted message");
    }
    const Accounted a = f.undelivered.front();
    f.undelivered.pop_front();
    if (!a.real) {
      ++g.skipped_nulls;
      continue;
    }
    ++reals;
    g.delivered_bytes += a.body.size();
    Delivery d{sg, id, s, a.body};
    if (mode == DeliveryMode::kBatched) {
      g.batch.push_back(d);
      continue;
    }
    if (mode == DeliveryMode::kCopyOut) {
      g.copy_buf.assign(a.body.begin(), a.body.end());
      d.body = g.copy_buf;
      ++g.delivery_copies;
    }
    if (g.spec.on_deliver) {
      g.spec.on_deliver(d);
      ++g.upcalls;
    }
  }
  if (mode == DeliveryMode::kBatched && !g.batch.empty() && g.spec.on_deliver_batch) {
    g.spec.on_deliver_batch(g.batch);
    ++g.upcalls;
  }

  LockScope lk(g.lock);
  table_.update_local_cell(cols.delivered_num(), last);
  g.delivered_upto = last;
  g.delivered_reals.fetch_add(reals, std::memory_order_relaxed);
  if (options_.toggles.unlock_before_push) lk.unlock();
  push(g, cols.ack_range());
  g.delivery_batches.add(static_cast<std::uint64_t>(last - first + 1));
  return static_cast<std::size_t>(last - first + 1);
}

std::size_t Node::send_predicate_step(SubgroupId sg) { return send_step(subgroup(sg)); }
std::size_t Node::receive_predicate_step(SubgroupId sg) { return receive_step(subgroup(sg)); }
std::size_t Node::delivery_predicate_step(SubgroupId sg) { return delivery_step(subgroup(sg)); }

bool Node::sweep() { return sweep_once() == SweepResult::kProgress; }

Node::SweepResult Node::sweep_once() {
  bool progress = fabric_.deliver_due(self_) > 0;
  for (auto& g : subgroups_) {
    if (receive_step(*g) > 0) progress = true;
    if (send_step(*g) > 0) progress = true;
    if (delivery_step(*g) > 0) progress = true;
  }
  ++sweeps_;
  if (progress) return SweepResult::kProgress;
  return fabric_.has_pending(self_) ? SweepResult::kWaiting : SweepResult::kIdle;
}

void Node::run() {
  auto& bell = fabric_.doorbell(self_);
  std::uint64_t idle = 0;
  try {
    while (running_.load(std::memory_order_acquire)) {
      const std::uint64_t ticket = bell.ticket();
      switch (sweep_once()) {
        case SweepResult::kProgress:
          idle = 0;
          break;
        case SweepResult::kWaiting:
          std::this_thread::yield();
          break;
        case SweepResult::kIdle:
          if (++idle < options_.idle_sweeps_before_park) {
            std::this_thread::yield();
          } else {
            idle = 0;
            bell.park(ticket);
          }
          break;
      }
    }
  } catch (...) {
    failed_.store(true, std::memory_order_release);
    running_.store(false, std::memory_order_release);
    options_.on_fatal(self_, std::current_exception());
  }
}

NodeStats Node::stats() const {
  NodeStats out;
  out.node = self_;
  out.sweeps = sweeps_;
  out.parks = fabric_.doorbell(self_).parks();
  out.posts_under_lock = posts_under_lock_.load(std::memory_order_relaxed);
  for (const auto& g : subgroups_) {
    SubgroupStats s;
    s.sg = g->spec.config.id;
    s.send_batches = g->send_batches;
    s.receive_batches = g->receive_batches;
    s.delivery_batches = g->delivery_batches;
    s.delivered_reals = g->delivered_reals.load(std::memory_order_relaxed);
    s.delivered_bytes = g->delivered_bytes;
    s.skipped_nulls = g->skipped_nulls;
    s.nulls_committed = g->nulls_committed.load(std::memory_order_relaxed);
    s.lemma_violations = g->lemma_violations;
    s.delivery_copies = g->delivery_copies;
    s.upcalls = g->upcalls;
    s.writes_issued = g->writes_issued;
    s.received_num = table_.read_local(g->cols->received_num());
    s.delivered_num = table_.read_local(g->cols->delivered_num());
    out.subgroups.push_back(std::move(s));
  }
  return out;
}

std::vector<CommitRecord> Node::commit_log() const {
  std::vector<CommitRecord> out;
  for (const auto& g : subgroups_) {
    std::lock_guard lk(g->lock);
    out.insert(out.end(), g->commits.begin(), g->commits.end());
  }
  return out;
}

}  // namespace ringcast::multicast
