#pragma once

// Shared State Table.
//
// Every node keeps a full copy of an n-row table inside its registered
// region. A node mutates only its own row and decides when byte ranges of
// that row are pushed to peers. Scalar cells are monotonic 64-bit counters
// starting at -1.
//
// Row layout (all offsets relative to the row start):
//
//   [ subgroup 0 scalars | subgroup 1 scalars | ... ]   one 64-byte unit each
//       +0  received_num
//       +8  delivered_num
//       +16 nulls_announced
//   [ subgroup 0 slots: w0 x stride ][ subgroup 1 slots ] ...  64-byte aligned
//
// A slot with a 16-byte header is
//
//   [ body_len (8) | message bytes ... ][ msg_index (8) | use_counter (8) ]
//   \------- round_up(m, 8) ---------/
//
// The counter is the last word of the slot so that a single ascending write
// of several slots always publishes each slot's body before its counter.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "ringcast/transport.hpp"
#include "ringcast/types.hpp"

namespace ringcast::sst {

inline constexpr std::int64_t kUnset = -1;
inline constexpr std::size_t kDefaultHeaderSize = 16;

class MonotonicityError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct ByteRange {
  std::size_t offset = 0;
  std::size_t length = 0;
};

/// Column plan of one subgroup inside a row.
struct SubgroupColumns {
  SubgroupId sg = 0;
  std::size_t scalars = 0;  // start of the 64-byte scalar block
  std::size_t slots = 0;    // start of the slot region
  std::uint32_t window = 0;
  std::size_t max_msg_size = 0;
  std::size_t header_size = kDefaultHeaderSize;
  std::size_t stride = 0;

  std::size_t received_num() const { return scalars; }
  std::size_t delivered_num() const { return scalars + 8; }
  std::size_t nulls_announced() const { return scalars + 16; }
  /// received_num and delivered_num, pushed together by acks.
  ByteRange ack_range() const { return {scalars, 16}; }
  ByteRange nulls_range() const { return {scalars + 16, 8}; }

  std::size_t slot(std::uint32_t pos) const { return slots + pos * stride; }
  std::size_t body_len(std::uint32_t pos) const { return slot(pos); }
  std::size_t payload(std::uint32_t pos) const { return slot(pos) + 8; }
  std::size_t msg_index(std::uint32_t pos) const { return slot(pos) + stride - 16; }
  std::size_t use_counter(std::uint32_t pos) const { return slot(pos) + stride - 8; }
  /// `count` consecutive slots starting at `first` (no wraparound).
  ByteRange slot_range(std::uint32_t first, std::uint32_t count) const {
    return {slot(first), static_cast<std::size_t>(count) * stride};
  }
  std::size_t slot_region_bytes() const { return static_cast<std::size_t>(window) * stride; }
  /// Largest application payload a slot carries (length prefix excluded).
  /// The length word always fits: the message area is padded to 8 bytes.
  std::size_t max_payload() const { return max_msg_size > 8 ? max_msg_size - 8 : 0; }
};

struct SstLayout {
  std::size_t node_count = 0;
  std::size_t header_size = kDefaultHeaderSize;
  std::size_t row_size = 0;
  std::vector<SubgroupColumns> subgroups;

  const SubgroupColumns& columns(SubgroupId sg) const;
  std::size_t row_offset(NodeId row) const { return static_cast<std::size_t>(row) * row_size; }
  std::size_t region_size() const { return node_count * row_size; }

  /// Σ w·(m + header) over subgroups: slot bytes of one row, unpadded.
  std::size_t slot_bytes_per_row() const;
  /// n · Σ w·(m + header): slot space each node holds for the whole table.
  std::size_t total_slot_bytes() const;

  nlohmann::json to_json() const;
};

/// Errors: empty node set, empty membership, zero window, empty message
/// area, header size other than 8 or 16.
SstLayout build_layout(std::size_t node_count, std::span<const SubgroupConfig> subgroups,
                       std::size_t header_size = kDefaultHeaderSize);

class SstTable {
 public:
  /// Registers this node's region (layout.region_size() bytes) and sets
  /// every scalar cell and slot counter to -1.
  SstTable(transport::Fabric& fabric, const SstLayout& layout, NodeId self);

  NodeId self() const { return self_; }
  const SstLayout& layout() const { return layout_; }
  transport::Fabric& fabric() { return fabric_; }

  /// Local copy of `row`'s cell; wait-free.
  std::int64_t read(NodeId row, std::size_t cell) const;
  std::int64_t read_local(std::size_t cell) const { return read(self_, cell); }

  /// Throws MonotonicityError if `value` is below the current value.
  void update_local_cell(std::size_t cell, std::int64_t value);
  /// Non-monotonic word store into the own row (slot metadata).
  void store_local_word(std::size_t cell, std::int64_t value);

  std::span<std::byte> local_bytes(ByteRange range);
  std::span<const std::byte> row_bytes(NodeId row, ByteRange range) const;

  /// One write per target carrying the current bytes of `range`.
  std::size_t push_cells(ByteRange range, std::span<const NodeId> targets);
  /// Pushes `data`, then `guard` on the same channels.
  std::size_t push_data_then_guard(ByteRange data, std::size_t guard,
                                   std::span<const NodeId> targets);

 private:
  void check_range(ByteRange range) const;

  transport::Fabric& fabric_;
  SstLayout layout_;
  NodeId self_;
  transport::MemoryRegion* region_;
};

}  // namespace ringcast::sst
