#pragma once

#include <cstddef>
#include <cstdint>
#include <compare>
#include <stdexcept>
#include <string>
#include <vector>

namespace ringcast {

using NodeId = std::uint32_t;
using SubgroupId = std::uint32_t;

/// Position of a message in a subgroup's round-robin delivery order.
/// -1 means "nothing yet".
using SeqNum = std::int64_t;

/// M(rank, index): the index-th message (real or null) of the sender at
/// `sender_rank` in the subgroup's senders list.
struct MessageId {
  std::uint32_t sender_rank = 0;
  std::int64_t index = 0;

  friend bool operator==(const MessageId&, const MessageId&) = default;
};

/// Raised when the protocol observes state that only a bug can produce.
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Static description of one subgroup for the lifetime of an epoch.
struct SubgroupConfig {
  SubgroupId id = 0;
  std::vector<NodeId> members;
  std::vector<NodeId> senders;  // ordered sublist of members
  std::uint32_t window = 100;
  std::size_t max_msg_size = 1024;  // bytes of message area per slot

  /// Throws std::invalid_argument when membership or sizing is unusable.
  void validate(std::size_t node_count) const;

  bool is_member(NodeId n) const;
  /// Rank of `n` in the senders list, or -1.
  int sender_rank(NodeId n) const;
};

}  // namespace ringcast
