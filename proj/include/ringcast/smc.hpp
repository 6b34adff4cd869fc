#pragma once

// Small-message multicast: a ring of w slots per sender inside each SST row.
//
// The r-th real message of a sender (r counted from 0) lives in slot r % w
// and is published by raising that slot's use counter to r / w. A slot is
// reusable once every member's delivered_num has reached the seq_num of the
// message occupying it.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "ringcast/sst.hpp"
#include "ringcast/types.hpp"

namespace ringcast::smc {

struct SlotHandle {
  std::uint32_t position = 0;
  std::uint64_t ordinal = 0;      // r: how many real messages precede this one
  std::span<std::byte> payload;   // writable message area, max_payload() bytes
};

/// Sender-side bookkeeping for one (node, subgroup). Guarded by the
/// subgroup lock.
struct SenderState {
  explicit SenderState(std::uint32_t rank_in_senders) : rank(rank_in_senders) {}

  std::uint32_t rank;
  std::uint64_t next_real = 0;   // ordinal of the next real message
  std::int64_t next_index = 0;   // next message index, reals and nulls alike
  std::optional<std::uint64_t> acquired;
  std::deque<std::uint32_t> pending;  // committed slot positions not yet pushed
};

/// A real message found in a sender's slot ring.
struct ReceivedSlot {
  std::uint64_t ordinal = 0;
  std::uint32_t position = 0;
  std::int64_t msg_index = 0;
  std::span<const std::byte> payload;
};

/// Returns the next ring slot if its previous occupant has been delivered by
/// every member, otherwise nullopt (back-pressure; the caller retries).
std::optional<SlotHandle> acquire_slot(sst::SstTable& table, const SubgroupConfig& cfg,
                                       const sst::SubgroupColumns& cols, SenderState& sender);

/// Publishes the acquired slot locally (length, index, counter) and queues
/// it for the send predicate. Posts no writes.
MessageId commit_send(sst::SstTable& table, const sst::SubgroupColumns& cols,
                      SenderState& sender, const SlotHandle& slot, std::size_t body_len);

/// Appends to `out` the consecutive new messages of `sender_node`, starting
/// at ring ordinal `expected_next`, at most `limit` of them. Returns the
/// number appended.
std::size_t scan_new_messages(const sst::SstTable& table, const sst::SubgroupColumns& cols,
                              NodeId sender_node, std::uint64_t expected_next,
                              std::size_t limit, std::vector<ReceivedSlot>& out);

}  // namespace ringcast::smc
