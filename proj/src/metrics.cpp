#include "ringcast/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace ringcast {

void Histogram::add(std::uint64_t value, std::uint64_t times) {
  if (times == 0) return;
  bins_[value] += times;
  samples_ += times;
  total_ += value * times;
}

void Histogram::merge(const Histogram& other) {
  for (const auto& [value, count] : other.bins_) add(value, count);
}

double Histogram::mean() const {
  return samples_ == 0 ? 0.0 : static_cast<double>(total_) / static_cast<double>(samples_);
}

std::uint64_t Histogram::mode() const {
  std::uint64_t best = 0;
  std::uint64_t best_count = 0;
  for (const auto& [value, count] : bins_) {
    if (count > best_count) {
      best = value;
      best_count = count;
    }
  }
  return best;
}

std::int64_t percentile(std::vector<std::int64_t> samples, double p) {
  if (samples.empty()) return 0;
  p = std::clamp(p, 0.0, 100.0);
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(samples.size())));
  if (rank > 0) --rank;
  std::nth_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(rank), samples.end());
  return samples[rank];
}

}  // namespace ringcast
