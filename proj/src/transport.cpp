#include "ringcast/transport.hpp"

#include <algorithm>
#include <cstring>
#include <string>
#include <thread>

#include "ringcast/clock.hpp"

namespace ringcast::transport {

std::int64_t LatencyModel::operator()(std::size_t bytes) const {
  if (bytes <= 1) return one_byte_ns;
  if (bytes <= knee_bytes) {
    const double frac = static_cast<double>(bytes - 1) / static_cast<double>(knee_bytes - 1);
    return one_byte_ns + static_cast<std::int64_t>(frac * static_cast<double>(knee_ns - one_byte_ns));
  }
  return knee_ns + static_cast<std::int64_t>(beyond_ns_per_byte * static_cast<double>(bytes - knee_bytes));
}

ChannelParams ChannelParams::zero_cost() {
  ChannelParams p;
  p.post_cost_ns = 0;
  p.latency = LatencyModel::zero();
  return p;
}

// ---------------------------------------------------------------- Doorbell

void Doorbell::park(std::uint64_t ticket) {
  parks_.fetch_add(1, std::memory_order_relaxed);
  parked_.store(true, std::memory_order_seq_cst);
  seq_.wait(ticket, std::memory_order_seq_cst);
  parked_.store(false, std::memory_order_seq_cst);
}

bool Doorbell::ring() {
  seq_.fetch_add(1, std::memory_order_seq_cst);
  if (parked_.load(std::memory_order_seq_cst)) {
    seq_.notify_all();
    wakes_.fetch_add(1, std::memory_order_relaxed);
    return true;
  }
  idle_rings_.fetch_add(1, std::memory_order_relaxed);
  return false;
}

// ------------------------------------------------------------ MemoryRegion

MemoryRegion::MemoryRegion(NodeId owner, std::size_t size)
    : owner_(owner),
      size_(size),
      units_((size + kAtomicUnit - 1) / kAtomicUnit),
      storage_(new Unit[units_]()),
      versions_(new std::atomic<std::uint32_t>[units_]) {
  for (std::size_t i = 0; i < units_; ++i) versions_[i].store(0, std::memory_order_relaxed);
}

std::span<std::byte> MemoryRegion::bytes() {
  return {reinterpret_cast<std::byte*>(storage_.get()), size_};
}

std::span<const std::byte> MemoryRegion::bytes() const {
  return {reinterpret_cast<const std::byte*>(storage_.get()), size_};
}

std::uint64_t* MemoryRegion::word_ptr(std::size_t word_index) const {
  return &storage_[word_index / 8].words[word_index % 8];
}

std::int64_t MemoryRegion::load(std::size_t offset, std::memory_order order) const {
  if (offset % 8 != 0 || offset + 8 > size_) {
    throw std::out_of_range("unaligned or out-of-range cell load at " + std::to_string(offset));
  }
  std::atomic_ref<std::uint64_t> ref(*word_ptr(offset / 8));
  return static_cast<std::int64_t>(ref.load(order));
}

void MemoryRegion::store(std::size_t offset, std::int64_t value, std::memory_order order) {
  if (offset % 8 != 0 || offset + 8 > size_) {
    throw std::out_of_range("unaligned or out-of-range cell store at " + std::to_string(offset));
  }
  std::atomic_ref<std::uint64_t> ref(*word_ptr(offset / 8));
  ref.store(static_cast<std::uint64_t>(value), order);
}

std::array<std::uint64_t, 8> MemoryRegion::read_unit(std::size_t unit) const {
  if (unit >= units_) throw std::out_of_range("unit out of range");
  std::array<std::uint64_t, 8> out{};
  auto& version = versions_[unit];
  for (;;) {
    const std::uint32_t before = version.load(std::memory_order_acquire);
    if (before & 1u) continue;
    for (std::size_t i = 0; i < 8; ++i) {
      std::atomic_ref<std::uint64_t> ref(storage_[unit].words[i]);
      out[i] = ref.load(std::memory_order_relaxed);
    }
    std::atomic_thread_fence(std::memory_order_acquire);
    if (version.load(std::memory_order_relaxed) == before) return out;
  }
}

void MemoryRegion::apply(std::size_t offset, std::span<const std::byte> payload) {
  const std::size_t end = offset + payload.size();
  if (end > size_ || end < offset) throw TransportError("write beyond region bounds");

  std::size_t pos = offset;
  while (pos < end) {
    const std::size_t unit = pos / kAtomicUnit;
    const std::size_t unit_end = std::min(end, (unit + 1) * kAtomicUnit);

    auto& version = versions_[unit];
    std::uint32_t v = version.load(std::memory_order_relaxed);
    for (;;) {
      if (v & 1u) {
        v = version.load(std::memory_order_relaxed);
        continue;
      }
      if (version.compare_exchange_weak(v, v + 1, std::memory_order_acq_rel)) break;
    }
    std::atomic_thread_fence(std::memory_order_release);

    while (pos < unit_end) {
      const std::size_t word_start = pos & ~std::size_t{7};
      std::atomic_ref<std::uint64_t> ref(*word_ptr(pos / 8));
      const std::byte* src = payload.data() + (pos - offset);
      if (pos == word_start && unit_end - pos >= 8) {
        std::uint64_t w;
        std::memcpy(&w, src, 8);
        ref.store(w, std::memory_order_release);
        pos += 8;
      } else {
        // Partial word at an edge: merge with the bytes already there.
        std::uint64_t w = ref.load(std::memory_order_relaxed);
        const std::size_t from = pos - word_start;
        const std::size_t n = std::min(8 - from, unit_end - pos);
        std::memcpy(reinterpret_cast<std::byte*>(&w) + from, src, n);
        ref.store(w, std::memory_order_release);
        pos += n;
      }
    }
    version.store(v + 2, std::memory_order_release);
  }
}

// ------------------------------------------------------------------ Fabric

Fabric::Fabric(std::size_t node_count, ChannelParams params)
    : node_count_(node_count),
      params_(params),
      endpoints_(new Endpoint[node_count]),
      channels_(new Channel[node_count * node_count]) {
  if (node_count == 0) throw std::invalid_argument("fabric needs at least one node");
  for (std::size_t i = 0; i < node_count * node_count; ++i) {
    channels_[i].rng.seed(params_.seed * 0x9E3779B97F4A7C15ull + i);
  }
}

Fabric::~Fabric() = default;

Fabric::Endpoint& Fabric::endpoint(NodeId node) const {
  if (node >= node_count_) throw TransportError("unknown node " + std::to_string(node));
  return endpoints_[node];
}

Fabric::Channel& Fabric::channel(NodeId src, NodeId dst) const {
  return channels_[static_cast<std::size_t>(src) * node_count_ + dst];
}

MemoryRegion& Fabric::register_region(NodeId node, std::size_t size) {
  std::lock_guard lk(registration_);
  auto& ep = endpoint(node);
  if (size == 0) throw TransportError("cannot register an empty region");
  if (ep.ready.load(std::memory_order_acquire)) {
    throw TransportError("node " + std::to_string(node) + " already registered a region");
  }
  ep.region = std::make_unique<MemoryRegion>(node, size);
  ep.ready.store(true, std::memory_order_release);
  return *ep.region;
}

bool Fabric::registered(NodeId node) const {
  return node < node_count_ && endpoints_[node].ready.load(std::memory_order_acquire);
}

MemoryRegion& Fabric::region(NodeId node) {
  auto& ep = endpoint(node);
  if (!ep.ready.load(std::memory_order_acquire)) {
    throw TransportError("node " + std::to_string(node) + " has no region");
  }
  return *ep.region;
}

const MemoryRegion& Fabric::region(NodeId node) const {
  return const_cast<Fabric*>(this)->region(node);
}

void Fabric::post_write(NodeId src, NodeId dst, std::size_t offset,
                        std::span<const std::byte> payload) {
  WriteRequest req;
  req.src = src;
  req.dst = dst;
  req.offset = offset;
  req.payload.assign(payload.begin(), payload.end());
  post_write(std::move(req));
}

void Fabric::post_write(WriteRequest req) {
  const std::int64_t start = now_ns();
  auto& src_ep = endpoint(req.src);
  auto& dst_ep = endpoint(req.dst);
  if (!dst_ep.ready.load(std::memory_order_acquire)) {
    throw TransportError("unknown destination " + std::to_string(req.dst));
  }
  const std::size_t len = req.payload.size();
  if (len == 0) throw TransportError("empty write");
  if (req.offset + len > dst_ep.region->size() || req.offset + len < req.offset) {
    throw TransportError("write beyond region bounds of node " + std::to_string(req.dst));
  }

  auto& ch = channel(req.src, req.dst);
  const std::int64_t latency = req.wire_latency_ns.value_or(params_.latency(len));
  {
    std::lock_guard lk(ch.mu);
    std::int64_t visible = start + latency;
    if (params_.jitter_ns > 0) {
      visible += static_cast<std::int64_t>(ch.rng() % static_cast<std::uint64_t>(params_.jitter_ns + 1));
    }
    // FIFO: a write never becomes visible before its predecessor.
    visible = std::max(visible, ch.last_visible_ns);
    ch.last_visible_ns = visible;
    ch.queue.push_back(PendingWrite{req.offset, std::move(req.payload), visible});
  }
  ch.bytes_posted.fetch_add(len, std::memory_order_relaxed);
  ch.posted.fetch_add(1, std::memory_order_release);
  dst_ep.inbound.fetch_add(1, std::memory_order_release);

  const std::int64_t cost = req.post_cost_ns.value_or(params_.post_cost_ns);
  if (cost > 0) {
    const std::int64_t until = start + cost;
    while (now_ns() < until) {
    }
  }
  dst_ep.bell.ring();
  src_ep.posting_ns.fetch_add(now_ns() - start, std::memory_order_relaxed);
}

void Fabric::ring_doorbell(NodeId /*src*/, NodeId dst) {
  auto& ep = endpoint(dst);
  if (!ep.ready.load(std::memory_order_acquire)) {
    throw TransportError("unknown destination " + std::to_string(dst));
  }
  ep.bell.ring();
}

Doorbell& Fabric::doorbell(NodeId node) { return endpoint(node).bell; }

std::size_t Fabric::deliver_due(NodeId dst) { return drain(dst, false); }

std::size_t Fabric::deliver_all(NodeId dst) { return drain(dst, true); }

std::size_t Fabric::drain(NodeId dst, bool ignore_latency) {
  auto& ep = endpoint(dst);
  if (ep.inbound.load(std::memory_order_acquire) == 0) return 0;
  std::unique_lock applier(ep.applier, std::try_to_lock);
  if (!applier.owns_lock()) return 0;

  thread_local std::vector<PendingWrite> due;
  const std::int64_t now = now_ns();
  std::size_t total = 0;
  for (NodeId src = 0; src < node_count_; ++src) {
    auto& ch = channel(src, dst);
    if (ch.posted.load(std::memory_order_acquire) == ch.applied.load(std::memory_order_relaxed)) {
      continue;
    }
    due.clear();
    {
      std::lock_guard lk(ch.mu);
      while (!ch.queue.empty() && (ignore_latency || ch.queue.front().visible_at_ns <= now)) {
        due.push_back(std::move(ch.queue.front()));
        ch.queue.pop_front();
      }
    }
    for (auto& w : due) {
      ep.region->apply(w.offset, w.payload);
      ch.applied.fetch_add(1, std::memory_order_release);
    }
    ep.inbound.fetch_sub(static_cast<std::int64_t>(due.size()), std::memory_order_acq_rel);
    total += due.size();
  }
  due.clear();
  if (total > 0 && ep.bell.parked()) ep.bell.ring();
  return total;
}

bool Fabric::has_pending(NodeId dst) const {
  return endpoint(dst).inbound.load(std::memory_order_acquire) > 0;
}

ChannelStats Fabric::channel_stats(NodeId src, NodeId dst) const {
  endpoint(src);
  endpoint(dst);
  const auto& ch = channel(src, dst);
  return {ch.posted.load(), ch.applied.load(), ch.bytes_posted.load()};
}

std::uint64_t Fabric::writes_posted() const {
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < node_count_ * node_count_; ++i) sum += channels_[i].posted.load();
  return sum;
}

std::uint64_t Fabric::writes_applied() const {
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < node_count_ * node_count_; ++i) sum += channels_[i].applied.load();
  return sum;
}

std::uint64_t Fabric::writes_posted_by(NodeId src) const {
  endpoint(src);
  std::uint64_t sum = 0;
  for (NodeId dst = 0; dst < node_count_; ++dst) sum += channel(src, dst).posted.load();
  return sum;
}

std::int64_t Fabric::posting_ns(NodeId src) const {
  return endpoint(src).posting_ns.load(std::memory_order_relaxed);
}

// ------------------------------------------------------- BackgroundApplier

struct BackgroundApplier::State {
  Fabric& fabric;
  std::vector<NodeId> nodes;
  std::atomic<bool> stop{false};
  std::thread thread;
};

BackgroundApplier::BackgroundApplier(Fabric& fabric, std::vector<NodeId> nodes)
    : state_(new State{fabric, std::move(nodes), {}, {}}) {
  state_->thread = std::thread([s = state_.get()] {
    while (!s->stop.load(std::memory_order_acquire)) {
      std::size_t n = 0;
      for (NodeId node : s->nodes) n += s->fabric.deliver_due(node);
      if (n == 0) std::this_thread::yield();
    }
    for (NodeId node : s->nodes) s->fabric.deliver_all(node);
  });
}

BackgroundApplier::~BackgroundApplier() { stop(); }

void BackgroundApplier::stop() {
  if (!state_ || !state_->thread.joinable()) return;
  state_->stop.store(true, std::memory_order_release);
  state_->thread.join();
}

}  // namespace ringcast::transport
