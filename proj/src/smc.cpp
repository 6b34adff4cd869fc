#include "ringcast/smc.hpp"

#include <algorithm>
#include <limits>
#include <string>

namespace ringcast {

void SubgroupConfig::validate(std::size_t node_count) const {
  if (members.empty()) throw std::invalid_argument("subgroup has no members");
  if (window == 0) throw std::invalid_argument("subgroup window must be at least 1");
  if (max_msg_size == 0) throw std::invalid_argument("message area must be at least 1 byte");
  for (NodeId m : members) {
    if (m >= node_count) throw std::invalid_argument("member " + std::to_string(m) + " outside node set");
    if (std::count(members.begin(), members.end(), m) != 1) {
      throw std::invalid_argument("duplicate member " + std::to_string(m));
    }
  }
  for (NodeId s : senders) {
    if (!is_member(s)) throw std::invalid_argument("sender " + std::to_string(s) + " is not a member");
    if (std::count(senders.begin(), senders.end(), s) != 1) {
      throw std::invalid_argument("duplicate sender " + std::to_string(s));
    }
  }
}

bool SubgroupConfig::is_member(NodeId n) const {
  return std::find(members.begin(), members.end(), n) != members.end();
}

int SubgroupConfig::sender_rank(NodeId n) const {
  auto it = std::find(senders.begin(), senders.end(), n);
  return it == senders.end() ? -1 : static_cast<int>(it - senders.begin());
}

}  // namespace ringcast

namespace ringcast::smc {

std::optional<SlotHandle> acquire_slot(sst::SstTable& table, const SubgroupConfig& cfg,
                                       const sst::SubgroupColumns& cols, SenderState& sender) {
  if (sender.acquired) throw std::logic_error("slot already acquired and not committed");
  const std::uint32_t pos = static_cast<std::uint32_t>(sender.next_real % cols.window);

  if (table.read_local(cols.use_counter(pos)) != sst::kUnset) {
    const std::int64_t occupant = table.read_local(cols.msg_index(pos));
    const SeqNum occupant_seq =
        occupant * static_cast<std::int64_t>(cfg.senders.size()) + sender.rank;
    for (NodeId m : cfg.members) {
      if (table.read(m, cols.delivered_num()) < occupant_seq) return std::nullopt;
    }
  }
  sender.acquired = sender.next_real;
  std::span<std::byte> area;
  if (cols.max_payload() > 0) area = table.local_bytes({cols.payload(pos), cols.max_payload()});
  return SlotHandle{pos, sender.next_real, area};
}

MessageId commit_send(sst::SstTable& table, const sst::SubgroupColumns& cols,
                      SenderState& sender, const SlotHandle& slot, std::size_t body_len) {
  if (!sender.acquired || *sender.acquired != slot.ordinal) {
    throw std::logic_error("commit without a matching acquire");
  }
  if (body_len > cols.max_payload()) {
    throw std::length_error("message of " + std::to_string(body_len) + " bytes exceeds slot payload " +
                            std::to_string(cols.max_payload()));
  }
  const MessageId id{sender.rank, sender.next_index};
  table.store_local_word(cols.body_len(slot.position), static_cast<std::int64_t>(body_len));
  table.store_local_word(cols.msg_index(slot.position), id.index);
  // Release store of the counter publishes length, index and body.
  table.update_local_cell(cols.use_counter(slot.position),
                          static_cast<std::int64_t>(slot.ordinal / cols.window));
  ++sender.next_index;
  ++sender.next_real;
  sender.acquired.reset();
  sender.pending.push_back(slot.position);
  return id;
}

std::size_t scan_new_messages(const sst::SstTable& table, const sst::SubgroupColumns& cols,
                              NodeId sender_node, std::uint64_t expected_next,
                              std::size_t limit, std::vector<ReceivedSlot>& out) {
  std::size_t found = 0;
  for (; found < limit; ++found) {
    const std::uint64_t ordinal = expected_next + found;
    const auto pos = static_cast<std::uint32_t>(ordinal % cols.window);
    const auto expected_counter = static_cast<std::int64_t>(ordinal / cols.window);
    const std::int64_t counter = table.read(sender_node, cols.use_counter(pos));
    if (counter < expected_counter) break;
    if (counter > expected_counter) {
      throw ProtocolError("slot " + std::to_string(pos) + " of node " + std::to_string(sender_node) +
                          " was reused before this member delivered it");
    }
    const std::int64_t len = table.read(sender_node, cols.body_len(pos));
    if (len < 0 || static_cast<std::size_t>(len) > cols.max_payload()) {
      throw ProtocolError("corrupt body length in slot " + std::to_string(pos));
    }
    std::span<const std::byte> body;
    if (len > 0) body = table.row_bytes(sender_node, {cols.payload(pos), static_cast<std::size_t>(len)});
    out.push_back(ReceivedSlot{ordinal, pos, table.read(sender_node, cols.msg_index(pos)), body});
  }
  return found;
}

}  // namespace ringcast::smc
