#include "ringcast/protocol.hpp"

#include <algorithm>
#include <limits>

namespace ringcast::protocol {

SeqNum compute_received_num(std::span<const std::int64_t> accounted_counts) {
  if (accounted_counts.empty()) return -1;
  const auto senders = static_cast<std::uint32_t>(accounted_counts.size());
  SeqNum first_missing = std::numeric_limits<SeqNum>::max();
  for (std::uint32_t i = 0; i < senders; ++i) {
    first_missing = std::min(first_missing, seq_num(i, accounted_counts[i], senders));
  }
  return first_missing - 1;
}

std::int64_t null_count_decision(std::uint32_t own_rank, std::int64_t own_next_index,
                                 MessageId received) {
  // Own index l' precedes M(j, k) iff l' < k, or l' == k and own_rank < j.
  const std::int64_t first_not_preceding = received.index + (own_rank < received.sender_rank ? 1 : 0);
  return std::max<std::int64_t>(0, first_not_preceding - own_next_index);
}

}  // namespace ringcast::protocol
