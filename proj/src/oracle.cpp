#include "ringcast/oracle.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace ringcast::oracle {

namespace {

struct Tagged {
  std::uint32_t rank;
  LogEntry entry;
};

// Round-robin order: all index-0 messages first, by sender rank, then all
// index-1 messages, and so on.
bool round_robin_less(const Tagged& a, const Tagged& b) {
  if (a.entry.index != b.entry.index) return a.entry.index < b.entry.index;
  return a.rank < b.rank;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::uint64_t parse_hex(const std::string& s, int line_no) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used, 16);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw OracleError("line " + std::to_string(line_no) + ": bad digest '" + s + "'");
  }
}

std::string describe(std::uint32_t rank, std::int64_t index) {
  return "M(" + std::to_string(rank) + "," + std::to_string(index) + ")";
}

}  // namespace

std::vector<Ref> reference_delivery_order(const SendLogs& logs, Tail tail) {
  const auto senders = static_cast<std::uint32_t>(logs.size());
  std::vector<Tagged> all;
  std::int64_t complete_rounds = -1;
  for (std::uint32_t r = 0; r < senders; ++r) {
    std::vector<LogEntry> mine = logs[r];
    std::sort(mine.begin(), mine.end(),
              [](const LogEntry& a, const LogEntry& b) { return a.index < b.index; });
    for (std::size_t i = 0; i < mine.size(); ++i) {
      if (mine[i].index != static_cast<std::int64_t>(i)) {
        throw OracleError("sender rank " + std::to_string(r) + ": expected index " + std::to_string(i) +
                          ", found " + std::to_string(mine[i].index));
      }
      all.push_back({r, mine[i]});
    }
    const auto n = static_cast<std::int64_t>(mine.size());
    complete_rounds = complete_rounds < 0 ? n : std::min(complete_rounds, n);
  }
  std::sort(all.begin(), all.end(), round_robin_less);

  std::vector<Ref> out;
  std::int64_t position = 0;
  for (const Tagged& t : all) {
    if (tail == Tail::kCompleteRounds) {
      if (t.entry.index >= complete_rounds) break;
    } else {
      // Position p belongs to sender p mod S at index p div S.
      if (t.rank != static_cast<std::uint32_t>(position % senders) || t.entry.index != position / senders) break;
    }
    ++position;
    if (t.entry.kind == Kind::kReal) out.push_back({t.rank, t.entry.index, t.entry.digest});
  }
  return out;
}

std::int64_t reference_received_num(std::span<const std::int64_t> counts) {
  const auto senders = static_cast<std::int64_t>(counts.size());
  if (senders == 0) return -1;
  std::int64_t p = 0;
  while (p / senders < counts[static_cast<std::size_t>(p % senders)]) ++p;
  return p - 1;
}

SendLogs CommitLog::logs_for(SubgroupId sg) const {
  auto it = subgroups.find(sg);
  if (it == subgroups.end()) throw OracleError("no header for subgroup " + std::to_string(sg));
  SendLogs logs(it->second.senders);
  for (const CommitLine& l : lines) {
    if (l.sg != sg) continue;
    if (l.rank >= logs.size()) {
      throw OracleError("subgroup " + std::to_string(sg) + ": rank " + std::to_string(l.rank) +
                        " out of range");
    }
    logs[l.rank].push_back({l.index, l.kind, l.digest});
  }
  return logs;
}

void write_commit_log(std::ostream& out, const CommitLog& log) {
  for (const auto& [sg, info] : log.subgroups) {
    out << "# subgroup " << sg << " senders " << info.senders << " members ";
    for (std::size_t i = 0; i < info.members.size(); ++i) out << (i ? "," : "") << info.members[i];
    out << '\n';
  }
  for (const CommitLine& l : log.lines) {
    out << l.node << ' ' << l.sg << ' ' << l.rank << ' ' << l.index << ' '
        << (l.kind == Kind::kReal ? "real" : "null") << ' ' << hex(l.digest) << '\n';
  }
}

CommitLog read_commit_log(std::istream& in) {
  CommitLog log;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    if (line[0] == '#') {
      std::string hash, word, senders_kw, members_kw, members;
      SubgroupId sg = 0;
      SubgroupInfo info;
      ss >> hash >> word;
      if (word != "subgroup") continue;  // free comment
      if (!(ss >> sg >> senders_kw >> info.senders) || senders_kw != "senders") {
        throw OracleError("line " + std::to_string(line_no) + ": malformed subgroup header");
      }
      if (ss >> members_kw >> members) {
        std::istringstream ms(members);
        std::string item;
        while (std::getline(ms, item, ',')) {
          if (!item.empty()) info.members.push_back(static_cast<NodeId>(std::stoul(item)));
        }
      }
      log.subgroups[sg] = std::move(info);
      continue;
    }
    CommitLine l;
    std::string kind, digest;
    if (!(ss >> l.node >> l.sg >> l.rank >> l.index >> kind >> digest)) {
      throw OracleError("line " + std::to_string(line_no) + ": malformed commit record");
    }
    if (kind == "real") {
      l.kind = Kind::kReal;
    } else if (kind == "null") {
      l.kind = Kind::kNull;
    } else {
      throw OracleError("line " + std::to_string(line_no) + ": unknown kind '" + kind + "'");
    }
    l.digest = parse_hex(digest, line_no);
    log.lines.push_back(l);
  }
  return log;
}

void write_deliveries(std::ostream& out, std::span<const DeliveryLine> lines) {
  for (const DeliveryLine& d : lines) {
    out << d.node << ' ' << d.sg << ' ' << d.rank << ' ' << d.index << ' ' << hex(d.digest) << '\n';
  }
}

std::vector<DeliveryLine> read_deliveries(std::istream& in) {
  std::vector<DeliveryLine> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    DeliveryLine d;
    std::string digest;
    if (!(ss >> d.node >> d.sg >> d.rank >> d.index >> digest)) {
      throw OracleError("line " + std::to_string(line_no) + ": malformed delivery record");
    }
    d.digest = parse_hex(digest, line_no);
    out.push_back(d);
  }
  return out;
}

std::vector<Verdict> check_deliveries(const CommitLog& commits, std::span<const DeliveryLine> deliveries) {
  Verdict order{"order", true, ""};
  Verdict validity{"validity", true, ""};
  auto fail = [](Verdict& v, const std::string& why) {
    if (v.pass) v.detail = why;
    v.pass = false;
  };

  for (const DeliveryLine& d : deliveries) {
    if (!commits.subgroups.count(d.sg)) {
      fail(validity, "delivery in unknown subgroup " + std::to_string(d.sg));
      break;
    }
  }

  for (const auto& [sg, info] : commits.subgroups) {
    const std::string where = "subgroup " + std::to_string(sg) + ": ";
    std::vector<Ref> expected;
    try {
      expected = reference_delivery_order(commits.logs_for(sg), Tail::kContiguousPrefix);
    } catch (const OracleError& e) {
      fail(order, where + e.what());
      fail(validity, where + e.what());
      continue;
    }

    std::map<std::pair<std::uint32_t, std::int64_t>, std::uint64_t> reals;
    for (const CommitLine& l : commits.lines) {
      if (l.sg == sg && l.kind == Kind::kReal) reals[{l.rank, l.index}] = l.digest;
    }

    std::map<NodeId, std::vector<Ref>> seen;
    for (NodeId m : info.members) seen[m];
    for (const DeliveryLine& d : deliveries) {
      if (d.sg == sg) seen[d.node].push_back({d.rank, d.index, d.digest});
    }

    for (const auto& [node, seq] : seen) {
      const std::string who = where + "node " + std::to_string(node) + ": ";
      if (!info.members.empty() &&
          std::find(info.members.begin(), info.members.end(), node) == info.members.end()) {
        fail(validity, who + "delivered without being a member");
        continue;
      }
      // Order only: a lagging member is a prefix. Completeness is validity.
      std::size_t i = 0;
      while (i < seq.size() && i < expected.size() && seq[i] == expected[i]) ++i;
      if (i < seq.size()) {
        std::string want = i < expected.size() ? describe(expected[i].rank, expected[i].index) : "end";
        fail(order, who + "diverges at delivery " + std::to_string(i) + " (got " +
                        describe(seq[i].rank, seq[i].index) + ", expected " + want + ")");
      }

      std::set<std::pair<std::uint32_t, std::int64_t>> once;
      for (const Ref& r : seq) {
        auto it = reals.find({r.rank, r.index});
        if (it == reals.end()) {
          fail(validity, who + "delivered uncommitted " + describe(r.rank, r.index));
        } else if (it->second != r.digest) {
          fail(validity, who + "payload of " + describe(r.rank, r.index) + " differs from the committed one");
        }
        if (!once.insert({r.rank, r.index}).second) {
          fail(validity, who + "delivered " + describe(r.rank, r.index) + " twice");
        }
      }
      if (once.size() != reals.size()) {
        fail(validity, who + "delivered " + std::to_string(once.size()) + " of " +
                           std::to_string(reals.size()) + " committed messages");
      }
    }
  }
  return {order, validity};
}

}  // namespace ringcast::oracle
