#pragma once

#include <cstdint>
#include <map>
#include <vector>

namespace ringcast {

/// Exact histogram of small non-negative integers (batch sizes).
class Histogram {
 public:
  void add(std::uint64_t value, std::uint64_t times = 1);
  void merge(const Histogram& other);

  std::uint64_t samples() const { return samples_; }
  std::uint64_t total() const { return total_; }
  double mean() const;
  /// Most frequent value; smallest on ties; 0 when empty.
  std::uint64_t mode() const;
  const std::map<std::uint64_t, std::uint64_t>& bins() const { return bins_; }

 private:
  std::map<std::uint64_t, std::uint64_t> bins_;
  std::uint64_t samples_ = 0;
  std::uint64_t total_ = 0;
};

/// Value at percentile p in [0, 100] (nearest rank); 0 for no samples.
std::int64_t percentile(std::vector<std::int64_t> samples, double p);

}  // namespace ringcast
