#pragma once

// Round-robin delivery order.
//
// Messages are delivered round by round; round k holds the k-th message of
// every sender, in senders-list order. With S senders, M(i, k) therefore
// sits at position k·S + i.

#include <cstdint>
#include <span>

#include "ringcast/types.hpp"

namespace ringcast::protocol {

constexpr SeqNum seq_num(std::uint32_t sender_rank, std::int64_t index, std::uint32_t senders) {
  return index * static_cast<std::int64_t>(senders) + sender_rank;
}

constexpr MessageId message_at(SeqNum seq, std::uint32_t senders) {
  return {static_cast<std::uint32_t>(seq % senders), seq / static_cast<std::int64_t>(senders)};
}

/// Highest s such that every message with seq ≤ s has been accounted, given
/// how many messages (real or null) of each sender are accounted.
SeqNum compute_received_num(std::span<const std::int64_t> accounted_counts);

/// Number of nulls the sender at `own_rank`, whose next index is
/// `own_next_index`, must commit so that none of its future messages
/// precedes `received` in the delivery order.
std::int64_t null_count_decision(std::uint32_t own_rank, std::int64_t own_next_index,
                                 MessageId received);

}  // namespace ringcast::protocol
