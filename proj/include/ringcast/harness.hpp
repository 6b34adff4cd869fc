#pragma once

// Experiment driver: builds n in-process nodes over one simulated fabric,
// drives sender threads, checks the outcome against the oracle and writes
// metrics.
//
// Message payload, when large enough:
//   [node u32][sg u32][counter u64][commit_ns i64][filler ...]
// Commit-to-delivery latency is measured only for messages of 24 bytes and
// up, since smaller ones cannot carry the timestamp.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "ringcast/config.hpp"
#include "ringcast/metrics.hpp"
#include "ringcast/multicast.hpp"
#include "ringcast/oracle.hpp"
#include "ringcast/transport.hpp"

namespace ringcast::harness {

inline constexpr std::size_t kStampBytes = 24;

struct SubgroupPlan {
  SubgroupConfig config;
  multicast::DeliveryMode mode = multicast::DeliveryMode::kInPlace;
  bool active = true;  // senders send only in active subgroups
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::size_t nodes = 4;
  std::string senders = "all";  // all | half | one | <count>
  std::size_t subgroups = 1;
  std::size_t active_subgroups = 0;  // 0: all
  std::int64_t messages_per_sender = 1000;
  std::size_t message_size = 1024;
  std::uint32_t window = 100;
  std::size_t max_msg_size = 0;  // 0: message_size + 8
  config::Delay sender_delay;    // after every send, for every sender
  std::map<NodeId, config::Delay> node_delays;  // per-node replacement
  config::Delay delivery_delay;  // per upcall
  multicast::DeliveryMode delivery_mode = multicast::DeliveryMode::kInPlace;
  multicast::Toggles toggles;
  bool copy_in = false;  // build in a private buffer, then copy into the slot
  bool sender_yield = false;  // senders yield the CPU after every send
  transport::ChannelParams transport;
  std::uint64_t seed = 1;
  std::int64_t stall_timeout_ms = 30000;  // without delivery progress
  std::int64_t settle_ms = 2000;
  std::uint64_t idle_sweeps = 10000;
  bool verify = true;  // record commits and deliveries, run the oracle
  std::vector<SubgroupPlan> explicit_subgroups;

  /// Unknown keys are an error.
  static ScenarioConfig from_kv(const config::KvConfig& kv);
  static ScenarioConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

  std::size_t effective_max_msg_size() const { return max_msg_size ? max_msg_size : message_size + 8; }
  config::Delay delay_of(NodeId node) const;
  /// Explicit subgroups if given, else `subgroups` copies spanning all nodes.
  std::vector<SubgroupPlan> resolve_subgroups() const;
  /// Throws config::ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
};

/// Random scenario for the randomized order suite.
ScenarioConfig random_scenario(std::uint64_t seed, std::size_t max_nodes, std::size_t max_senders,
                               std::int64_t max_total_messages);

struct NodeMetrics {
  NodeId node = 0;
  std::uint64_t delivered = 0;
  std::uint64_t delivered_bytes = 0;
  std::uint64_t skipped_nulls = 0;
  std::uint64_t nulls_committed = 0;
  std::uint64_t writes_posted = 0;
  std::int64_t posting_ns = 0;
  std::uint64_t parks = 0;
  std::uint64_t sweeps = 0;
  std::uint64_t posts_under_lock = 0;
  std::uint64_t delivery_copies = 0;
  std::uint64_t upcalls = 0;
  std::uint64_t lemma_violations = 0;
  std::int64_t last_delivery_ns = 0;  // since run start
};

struct Metrics {
  std::string scenario;
  bool completed = false;
  double duration_s = 0;  // run start to last delivery
  std::uint64_t committed_reals = 0;
  std::uint64_t expected_per_node = 0;  // summed over the node's subgroups
  std::uint64_t delivered_total = 0;
  std::uint64_t delivered_bytes_total = 0;
  std::uint64_t writes_posted = 0;
  std::uint64_t nulls_committed = 0;
  std::uint64_t nulls_during_settle = 0;
  std::uint64_t lemma_violations = 0;
  std::uint64_t posts_under_lock = 0;
  double throughput_bytes_per_s = 0;
  double throughput_msgs_per_s = 0;
  double writes_per_delivery = 0;
  Histogram send_batches;
  Histogram receive_batches;
  Histogram delivery_batches;
  std::vector<std::int64_t> latency_ns;
  std::vector<NodeMetrics> nodes;
  std::map<SubgroupId, Histogram> delivery_batches_by_sg;
  nlohmann::json layout;
  nlohmann::json config;
};

struct RunResult {
  Metrics metrics;
  std::vector<oracle::Verdict> verdicts;
  oracle::CommitLog commit_log;
  std::vector<oracle::DeliveryLine> deliveries;
  std::string state_dump;  // protocol state at a stall or failure

  bool passed() const;
  const oracle::Verdict* verdict(const std::string& name) const;
};

RunResult run_scenario(const ScenarioConfig& cfg);

/// metrics.json, send/receive/delivery_batches.csv, latency_percentiles.csv,
/// verdicts.txt, layout.json and, when recorded, commit_log.txt and
/// deliveries.txt.
void emit_report(const RunResult& result, const std::filesystem::path& dir);

/// Oracle verdicts from commit_log.txt and deliveries.txt in `dir`.
std::vector<oracle::Verdict> verify_logs(const std::filesystem::path& dir);

std::string format_verdicts(const std::vector<oracle::Verdict>& verdicts);

struct SweepRow {
  std::string value;
  RunResult result;
};

/// Runs `base` once per value of `param` (any config key).
std::vector<SweepRow> run_sweep(const config::KvConfig& base, const std::string& param,
                                const std::vector<std::string>& values, const std::filesystem::path& out_dir);

nlohmann::json metrics_to_json(const Metrics& m);

}  // namespace ringcast::harness
