#include <gtest/gtest.h>

#include <algorithm>
#include <tuple>
#include <vector>

#include "ringcast/oracle.hpp"
#include "ringcast/protocol.hpp"

using namespace ringcast;
using namespace ringcast::protocol;

TEST(SeqNum, Examples) {
  EXPECT_EQ(seq_num(0, 0, 3), 0);
  EXPECT_EQ(seq_num(2, 0, 3), 2);
  EXPECT_EQ(seq_num(1, 2, 3), 7);
  EXPECT_EQ(seq_num(0, 5, 1), 5);
  EXPECT_EQ(message_at(7, 3), (MessageId{1, 2}));
  EXPECT_EQ(message_at(0, 4), (MessageId{0, 0}));
}

// Positions must agree with sorting by (index, rank).
TEST(SeqNum, MatchesSortedOrderExhaustively) {
  for (std::uint32_t s = 1; s <= 4; ++s) {
    std::vector<std::tuple<std::int64_t, std::uint32_t>> all;
    for (std::uint32_t r = 0; r < s; ++r) {
      for (std::int64_t k = 0; k <= 5; ++k) all.emplace_back(k, r);
    }
    std::sort(all.begin(), all.end());
    for (std::size_t pos = 0; pos < all.size(); ++pos) {
      const auto [k, r] = all[pos];
      EXPECT_EQ(seq_num(r, k, s), static_cast<SeqNum>(pos));
      EXPECT_EQ(message_at(static_cast<SeqNum>(pos), s), (MessageId{r, k}));
    }
  }
}

TEST(ReceivedNum, Examples) {
  const std::int64_t even[] = {3, 3, 3};
  EXPECT_EQ(compute_received_num(even), 8);
  const std::int64_t none[] = {0, 0, 0};
  EXPECT_EQ(compute_received_num(none), -1);
  const std::int64_t ahead[] = {4, 3, 3};
  EXPECT_EQ(compute_received_num(ahead), 9);
  const std::int64_t behind[] = {4, 2, 3};
  EXPECT_EQ(compute_received_num(behind), 6);
  EXPECT_EQ(compute_received_num({}), -1);
}

TEST(ReceivedNum, MatchesWalkingReference) {
  for (std::size_t s = 1; s <= 4; ++s) {
    std::vector<std::int64_t> counts(s, 0);
    for (;;) {
      EXPECT_EQ(compute_received_num(counts), oracle::reference_received_num(counts));
      std::size_t i = 0;
      while (i < s && ++counts[i] > 6) counts[i++] = 0;
      if (i == s) break;
    }
  }
}

namespace {

// Count own future indices that would still sort before M(j, k).
std::int64_t enumerate_nulls(std::uint32_t i, std::int64_t l, MessageId received) {
  const std::uint32_t senders = std::max(i, received.sender_rank) + 1;
  const SeqNum target = seq_num(received.sender_rank, received.index, senders);
  std::int64_t n = 0;
  for (std::int64_t idx = l; seq_num(i, idx, senders) < target; ++idx) ++n;
  return n;
}

}  // namespace

TEST(NullDecision, Examples) {
  EXPECT_EQ(null_count_decision(0, 5, {2, 6}), 2);
  EXPECT_EQ(null_count_decision(2, 6, {1, 6}), 0);
  EXPECT_EQ(null_count_decision(0, 7, {2, 6}), 0);
  // Same index, lower rank: one null to move past it.
  EXPECT_EQ(null_count_decision(0, 6, {2, 6}), 1);
  EXPECT_EQ(null_count_decision(0, 5, {1, 6}), 2);
  // A message from itself never forces nulls.
  EXPECT_EQ(null_count_decision(1, 3, {1, 2}), 0);
  EXPECT_EQ(null_count_decision(1, 2, {1, 2}), 0);
}

TEST(NullDecision, MatchesEnumeration) {
  for (std::uint32_t i = 0; i < 4; ++i) {
    for (std::uint32_t j = 0; j < 4; ++j) {
      for (std::int64_t l = 0; l <= 8; ++l) {
        for (std::int64_t k = 0; k <= 8; ++k) {
          const MessageId m{j, k};
          const auto n = null_count_decision(i, l, m);
          ASSERT_EQ(n, enumerate_nulls(i, l, m)) << i << " " << l << " " << j << " " << k;
          // After committing n nulls the next own message sorts after M(j, k).
          const std::uint32_t s = 4;
          if (i != j) EXPECT_GT(seq_num(i, l + n, s), seq_num(j, k, s));
        }
      }
    }
  }
}
