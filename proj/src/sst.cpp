#include "ringcast/sst.hpp"

#include <algorithm>

namespace ringcast::sst {

namespace {

std::size_t round_up(std::size_t v, std::size_t to) { return (v + to - 1) / to * to; }

}  // namespace

const SubgroupColumns& SstLayout::columns(SubgroupId sg) const {
  for (const auto& c : subgroups) {
    if (c.sg == sg) return c;
  }
  throw std::out_of_range("no subgroup " + std::to_string(sg) + " in layout");
}

std::size_t SstLayout::slot_bytes_per_row() const {
  std::size_t sum = 0;
  for (const auto& c : subgroups) sum += static_cast<std::size_t>(c.window) * (c.max_msg_size + header_size);
  return sum;
}

std::size_t SstLayout::total_slot_bytes() const { return node_count * slot_bytes_per_row(); }

nlohmann::json SstLayout::to_json() const {
  nlohmann::json j;
  j["node_count"] = node_count;
  j["header_size"] = header_size;
  j["row_size"] = row_size;
  j["region_size"] = region_size();
  j["total_slot_bytes"] = total_slot_bytes();
  auto& sgs = j["subgroups"] = nlohmann::json::array();
  for (const auto& c : subgroups) {
    sgs.push_back({{"sg", c.sg},
                   {"received_num", c.received_num()},
                   {"delivered_num", c.delivered_num()},
                   {"nulls_announced", c.nulls_announced()},
                   {"slots", c.slots},
                   {"window", c.window},
                   {"max_msg_size", c.max_msg_size},
                   {"stride", c.stride}});
  }
  return j;
}

SstLayout build_layout(std::size_t node_count, std::span<const SubgroupConfig> subgroups,
                       std::size_t header_size) {
  if (node_count == 0) throw std::invalid_argument("layout needs at least one node");
  if (header_size != 8 && header_size != 16) {
    throw std::invalid_argument("slot header must be 8 or 16 bytes");
  }
  SstLayout layout;
  layout.node_count = node_count;
  layout.header_size = header_size;

  std::size_t cursor = 0;
  for (const auto& cfg : subgroups) {
    cfg.validate(node_count);
    SubgroupColumns c;
    c.sg = cfg.id;
    c.scalars = cursor;
    c.window = cfg.window;
    c.max_msg_size = cfg.max_msg_size;
    c.header_size = header_size;
    c.stride = round_up(cfg.max_msg_size, 8) + header_size;
    layout.subgroups.push_back(c);
    cursor += transport::kAtomicUnit;
  }
  for (auto& c : layout.subgroups) {
    c.slots = round_up(cursor, transport::kAtomicUnit);
    cursor = c.slots + c.slot_region_bytes();
  }
  layout.row_size = std::max<std::size_t>(round_up(cursor, transport::kAtomicUnit), transport::kAtomicUnit);
  return layout;
}

SstTable::SstTable(transport::Fabric& fabric, const SstLayout& layout, NodeId self)
    : fabric_(fabric), layout_(layout), self_(self) {
  if (self >= layout_.node_count) throw std::invalid_argument("node id outside layout");
  region_ = &fabric_.register_region(self, layout_.region_size());
  // Every row of the local copy starts at -1; peers' pushes only ever raise it.
  for (NodeId row = 0; row < layout_.node_count; ++row) {
    const std::size_t base = layout_.row_offset(row);
    for (const auto& c : layout_.subgroups) {
      region_->store(base + c.received_num(), kUnset, std::memory_order_relaxed);
      region_->store(base + c.delivered_num(), kUnset, std::memory_order_relaxed);
      region_->store(base + c.nulls_announced(), 0, std::memory_order_relaxed);
      for (std::uint32_t p = 0; p < c.window; ++p) {
        region_->store(base + c.use_counter(p), kUnset, std::memory_order_relaxed);
        if (c.header_size == 16) region_->store(base + c.msg_index(p), kUnset, std::memory_order_relaxed);
      }
    }
  }
  std::atomic_thread_fence(std::memory_order_release);
}

void SstTable::check_range(ByteRange range) const {
  if (range.length == 0 || range.offset + range.length > layout_.row_size) {
    throw std::out_of_range("byte range outside row");
  }
}

std::int64_t SstTable::read(NodeId row, std::size_t cell) const {
  return region_->load(layout_.row_offset(row) + cell, std::memory_order_acquire);
}

void SstTable::update_local_cell(std::size_t cell, std::int64_t value) {
  const std::size_t at = layout_.row_offset(self_) + cell;
  const std::int64_t current = region_->load(at, std::memory_order_relaxed);
  if (value < current) {
    throw MonotonicityError("cell at +" + std::to_string(cell) + " would decrease from " +
                            std::to_string(current) + " to " + std::to_string(value));
  }
  if (value != current) region_->store(at, value, std::memory_order_release);
}

void SstTable::store_local_word(std::size_t cell, std::int64_t value) {
  region_->store(layout_.row_offset(self_) + cell, value, std::memory_order_release);
}

std::span<std::byte> SstTable::local_bytes(ByteRange range) {
  check_range(range);
  return region_->bytes().subspan(layout_.row_offset(self_) + range.offset, range.length);
}

std::span<const std::byte> SstTable::row_bytes(NodeId row, ByteRange range) const {
  check_range(range);
  if (row >= layout_.node_count) throw std::out_of_range("row outside layout");
  return std::as_const(*region_).bytes().subspan(layout_.row_offset(row) + range.offset, range.length);
}

std::size_t SstTable::push_cells(ByteRange range, std::span<const NodeId> targets) {
  check_range(range);
  const std::size_t remote_offset = layout_.row_offset(self_) + range.offset;
  const auto bytes = std::as_const(*region_).bytes().subspan(remote_offset, range.length);
  for (NodeId t : targets) fabric_.post_write(self_, t, remote_offset, bytes);
  return targets.size();
}

std::size_t SstTable::push_data_then_guard(ByteRange data, std::size_t guard,
                                           std::span<const NodeId> targets) {
  std::size_t n = push_cells(data, targets);
  n += push_cells({guard, 8}, targets);
  return n;
}

}  // namespace ringcast::sst
