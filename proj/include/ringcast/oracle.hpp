#pragma once

// Brute-force reference for the delivery order.
//
// Everything here is written from scratch against the definition of the
// order (sort by index, then sender rank) and shares nothing with the
// protocol path.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ringcast/types.hpp"

namespace ringcast::oracle {

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Kind { kReal, kNull };

struct LogEntry {
  std::int64_t index = 0;
  Kind kind = Kind::kReal;
  std::uint64_t digest = 0;
};

/// logs[rank] lists that sender's messages; any order, indices 0,1,2,...
using SendLogs = std::vector<std::vector<LogEntry>>;

struct Ref {
  std::uint32_t rank = 0;
  std::int64_t index = 0;
  std::uint64_t digest = 0;
  friend bool operator==(const Ref&, const Ref&) = default;
};

enum class Tail {
  kCompleteRounds,    // drop everything past the last round all senders filled
  kContiguousPrefix,  // keep the longest gap-free run of positions from 0
};

/// Application-visible order (nulls removed). Throws OracleError on a gap
/// or duplicate in a sender's indices.
std::vector<Ref> reference_delivery_order(const SendLogs& logs, Tail tail = Tail::kCompleteRounds);

/// Last position p such that every position 0..p is covered, given how
/// many messages of each sender are present; found by walking p upward.
std::int64_t reference_received_num(std::span<const std::int64_t> counts);

// Log files ------------------------------------------------------------

struct CommitLine {
  NodeId node = 0;
  SubgroupId sg = 0;
  std::uint32_t rank = 0;
  std::int64_t index = 0;
  Kind kind = Kind::kReal;
  std::uint64_t digest = 0;
};

struct SubgroupInfo {
  std::uint32_t senders = 0;
  std::vector<NodeId> members;
};

struct CommitLog {
  std::map<SubgroupId, SubgroupInfo> subgroups;
  std::vector<CommitLine> lines;

  /// Per-rank logs of one subgroup.
  SendLogs logs_for(SubgroupId sg) const;
};

/// Format:
///   # subgroup <sg> senders <S> members <a,b,...>
///   <node> <sg> <rank> <index> real|null <digest hex>
void write_commit_log(std::ostream& out, const CommitLog& log);
CommitLog read_commit_log(std::istream& in);

struct DeliveryLine {
  NodeId node = 0;
  SubgroupId sg = 0;
  std::uint32_t rank = 0;
  std::int64_t index = 0;
  std::uint64_t digest = 0;
};

/// One line per application delivery: <node> <sg> <rank> <index> <digest hex>,
/// in delivery order per (node, sg).
void write_deliveries(std::ostream& out, std::span<const DeliveryLine> lines);
std::vector<DeliveryLine> read_deliveries(std::istream& in);

struct Verdict {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// "order": every member's sequence is a prefix of the reference order.
/// "validity": each delivered message was committed with the same digest,
/// exactly once per member, and every committed real was delivered.
/// Both passing means every member delivered exactly the reference order.
std::vector<Verdict> check_deliveries(const CommitLog& commits, std::span<const DeliveryLine> deliveries);

}  // namespace ringcast::oracle
