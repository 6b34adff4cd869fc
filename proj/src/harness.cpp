#include "ringcast/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "ringcast/clock.hpp"
#include "ringcast/digest.hpp"
#include "ringcast/sst.hpp"

namespace ringcast::harness {

using config::ConfigError;
using config::Delay;
using config::KvConfig;

namespace {

std::vector<NodeId> parse_nodes(const std::string& key, const std::string& text) {
  std::vector<NodeId> out;
  for (const auto& item : config::split(text, ',')) {
    const auto v = config::parse_int(item);
    if (v < 0) throw ConfigError(key + ": negative node id");
    out.push_back(static_cast<NodeId>(v));
  }
  return out;
}

std::size_t sender_count(const std::string& pattern, std::size_t nodes) {
  if (pattern == "all") return nodes;
  if (pattern == "half") return (nodes + 1) / 2;
  if (pattern == "one") return 1;
  const auto v = config::parse_int(pattern);
  if (v < 0 || static_cast<std::size_t>(v) > nodes) {
    throw ConfigError("senders: " + pattern + " is not in [0, nodes]");
  }
  return static_cast<std::size_t>(v);
}

const std::set<std::string>& scalar_keys() {
  static const std::set<std::string> keys = {
      "name", "nodes", "senders", "subgroups", "active_subgroups", "messages_per_sender",
      "message_size", "sender_yield", "window", "max_msg_size", "sender_delay", "delivery_delay", "delivery_mode",
      "batching", "batch_send", "batch_receive", "batch_delivery", "nulls", "early_unlock", "copy_in",
      "transport", "post_cost_ns", "latency_one_byte_ns", "latency_knee_ns", "latency_knee_bytes",
      "latency_beyond_ns_per_byte", "jitter_ns", "seed", "stall_timeout_ms", "settle_ms",
      "idle_sweeps", "verify"};
  return keys;
}

const std::set<std::string>& subgroup_fields() {
  static const std::set<std::string> fields = {"members", "senders", "window", "max_msg_size", "delivery",
                                               "active"};
  return fields;
}

std::int64_t non_negative(const KvConfig& kv, const std::string& key, std::int64_t fallback) {
  const auto v = kv.get_int(key, fallback);
  if (v < 0) throw ConfigError(key + " must not be negative");
  return v;
}

}  // namespace

// ------------------------------------------------------------------ config

ScenarioConfig ScenarioConfig::from_kv(const KvConfig& kv) {
  ScenarioConfig c;
  std::map<SubgroupId, std::map<std::string, std::string>> explicit_sg;

  for (const auto& [key, value] : kv.entries()) {
    if (scalar_keys().count(key)) continue;
    if (key.rfind("delay.", 0) == 0) {
      const auto node = config::parse_int(key.substr(6));
      if (node < 0) throw ConfigError(key + ": bad node id");
      c.node_delays[static_cast<NodeId>(node)] = Delay::parse(value);
      continue;
    }
    if (key.rfind("subgroup.", 0) == 0) {
      const auto rest = key.substr(9);
      const auto dot = rest.find('.');
      if (dot != std::string::npos && subgroup_fields().count(rest.substr(dot + 1))) {
        const auto id = config::parse_int(rest.substr(0, dot));
        if (id < 0) throw ConfigError(key + ": bad subgroup id");
        explicit_sg[static_cast<SubgroupId>(id)][rest.substr(dot + 1)] = value;
        continue;
      }
    }
    throw ConfigError("unknown config key '" + key + "'");
  }

  c.name = kv.get_string("name", c.name);
  c.nodes = static_cast<std::size_t>(non_negative(kv, "nodes", static_cast<std::int64_t>(c.nodes)));
  c.senders = kv.get_string("senders", c.senders);
  c.subgroups = static_cast<std::size_t>(non_negative(kv, "subgroups", static_cast<std::int64_t>(c.subgroups)));
  c.active_subgroups = static_cast<std::size_t>(non_negative(kv, "active_subgroups", 0));
  c.messages_per_sender = non_negative(kv, "messages_per_sender", c.messages_per_sender);
  c.message_size = static_cast<std::size_t>(kv.get_size("message_size", static_cast<std::int64_t>(c.message_size)));
  c.window = static_cast<std::uint32_t>(non_negative(kv, "window", c.window));
  c.max_msg_size = static_cast<std::size_t>(kv.get_size("max_msg_size", 0));
  if (auto v = kv.get("sender_delay")) c.sender_delay = Delay::parse(*v);
  if (auto v = kv.get("delivery_delay")) c.delivery_delay = Delay::parse(*v);
  if (c.delivery_delay.infinite) throw ConfigError("delivery_delay cannot be infinite");
  if (auto v = kv.get("delivery_mode")) c.delivery_mode = multicast::parse_delivery_mode(*v);

  c.toggles.set_batching(kv.get_bool("batching", true));
  c.toggles.batch_send = kv.get_bool("batch_send", c.toggles.batch_send);
  c.toggles.batch_receive = kv.get_bool("batch_receive", c.toggles.batch_receive);
  c.toggles.batch_delivery = kv.get_bool("batch_delivery", c.toggles.batch_delivery);
  c.toggles.nulls = kv.get_bool("nulls", true);
  c.toggles.unlock_before_push = kv.get_bool("early_unlock", true);
  c.copy_in = kv.get_bool("copy_in", false);
  c.sender_yield = kv.get_bool("sender_yield", false);

  const std::string transport = kv.get_string("transport", "simulated");
  if (transport == "zero") {
    c.transport = transport::ChannelParams::zero_cost();
  } else if (transport != "simulated") {
    throw ConfigError("transport must be 'simulated' or 'zero'");
  }
  c.transport.post_cost_ns = non_negative(kv, "post_cost_ns", c.transport.post_cost_ns);
  c.transport.latency.one_byte_ns = non_negative(kv, "latency_one_byte_ns", c.transport.latency.one_byte_ns);
  c.transport.latency.knee_ns = non_negative(kv, "latency_knee_ns", c.transport.latency.knee_ns);
  c.transport.latency.knee_bytes = static_cast<std::size_t>(
      non_negative(kv, "latency_knee_bytes", static_cast<std::int64_t>(c.transport.latency.knee_bytes)));
  c.transport.latency.beyond_ns_per_byte =
      kv.get_double("latency_beyond_ns_per_byte", c.transport.latency.beyond_ns_per_byte);
  c.transport.jitter_ns = non_negative(kv, "jitter_ns", c.transport.jitter_ns);
  c.seed = static_cast<std::uint64_t>(non_negative(kv, "seed", static_cast<std::int64_t>(c.seed)));
  c.transport.seed = c.seed;
  c.stall_timeout_ms = non_negative(kv, "stall_timeout_ms", c.stall_timeout_ms);
  c.settle_ms = non_negative(kv, "settle_ms", c.settle_ms);
  c.idle_sweeps = static_cast<std::uint64_t>(non_negative(kv, "idle_sweeps", static_cast<std::int64_t>(c.idle_sweeps)));
  c.verify = kv.get_bool("verify", true);

  for (const auto& [id, fields] : explicit_sg) {
    SubgroupPlan p;
    p.config.id = id;
    auto field = [&](const std::string& f) -> std::optional<std::string> {
      auto it = fields.find(f);
      if (it == fields.end()) return std::nullopt;
      return it->second;
    };
    const std::string prefix = "subgroup." + std::to_string(id) + ".";
    auto members = field("members");
    if (!members) throw ConfigError(prefix + "members is required");
    p.config.members = parse_nodes(prefix + "members", *members);
    if (auto s = field("senders")) {
      p.config.senders = *s == "all" ? p.config.members : parse_nodes(prefix + "senders", *s);
    }
    p.config.window = c.window;
    if (auto w = field("window")) {
      const auto v = config::parse_int(*w);
      if (v < 0) throw ConfigError(prefix + "window must not be negative");
      p.config.window = static_cast<std::uint32_t>(v);
    }
    p.config.max_msg_size = 0;  // resolved later
    if (auto m = field("max_msg_size")) p.config.max_msg_size = static_cast<std::size_t>(config::parse_size(*m));
    p.mode = c.delivery_mode;
    if (auto d = field("delivery")) p.mode = multicast::parse_delivery_mode(*d);
    if (auto a = field("active")) p.active = config::parse_bool(*a);
    c.explicit_subgroups.push_back(std::move(p));
  }
  c.validate();
  return c;
}

ScenarioConfig ScenarioConfig::load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  KvConfig kv = KvConfig::load(path);
  for (const auto& o : overrides) kv.apply_override(o);
  return from_kv(kv);
}

Delay ScenarioConfig::delay_of(NodeId node) const {
  auto it = node_delays.find(node);
  return it == node_delays.end() ? sender_delay : it->second;
}

std::vector<SubgroupPlan> ScenarioConfig::resolve_subgroups() const {
  std::vector<SubgroupPlan> out;
  if (!explicit_subgroups.empty()) {
    out = explicit_subgroups;
    for (auto& p : out) {
      if (p.config.max_msg_size == 0) p.config.max_msg_size = effective_max_msg_size();
    }
    return out;
  }
  const std::size_t s = sender_count(senders, nodes);
  const std::size_t active = active_subgroups == 0 ? subgroups : std::min(active_subgroups, subgroups);
  for (std::size_t i = 0; i < subgroups; ++i) {
    SubgroupPlan p;
    p.config.id = static_cast<SubgroupId>(i);
    for (std::size_t n = 0; n < nodes; ++n) p.config.members.push_back(static_cast<NodeId>(n));
    p.config.senders.assign(p.config.members.begin(), p.config.members.begin() + static_cast<std::ptrdiff_t>(s));
    p.config.window = window;
    p.config.max_msg_size = effective_max_msg_size();
    p.mode = delivery_mode;
    p.active = i < active;
    out.push_back(std::move(p));
  }
  return out;
}

void ScenarioConfig::validate() const {
  if (nodes == 0) throw ConfigError("nodes must be at least 1");
  if (explicit_subgroups.empty()) {
    if (subgroups == 0) throw ConfigError("subgroups must be at least 1");
    sender_count(senders, nodes);
  }
  std::set<SubgroupId> ids;
  for (const auto& p : resolve_subgroups()) {
    try {
      p.config.validate(nodes);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("subgroup " + std::to_string(p.config.id) + ": " + e.what());
    }
    if (!ids.insert(p.config.id).second) throw ConfigError("duplicate subgroup id");
    const std::size_t room = p.config.max_msg_size > 8 ? p.config.max_msg_size - 8 : 0;
    if (p.active && !p.config.senders.empty() && message_size > room) {
      throw ConfigError("message_size " + std::to_string(message_size) + " does not fit max_msg_size " +
                        std::to_string(p.config.max_msg_size) + " (8 bytes go to the length prefix)");
    }
  }
  for (const auto& [node, d] : node_delays) {
    if (node >= nodes) throw ConfigError("delay." + std::to_string(node) + ": no such node");
  }
}

nlohmann::json ScenarioConfig::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["nodes"] = nodes;
  j["messages_per_sender"] = messages_per_sender;
  j["message_size"] = message_size;
  j["window"] = window;
  j["max_msg_size"] = effective_max_msg_size();
  j["sender_delay"] = sender_delay.to_string();
  nlohmann::json nd = nlohmann::json::object();
  for (const auto& [node, d] : node_delays) nd[std::to_string(node)] = d.to_string();
  j["node_delays"] = nd;
  j["delivery_delay"] = delivery_delay.to_string();
  j["delivery_mode"] = std::string(multicast::to_string(delivery_mode));
  j["batch_send"] = toggles.batch_send;
  j["batch_receive"] = toggles.batch_receive;
  j["batch_delivery"] = toggles.batch_delivery;
  j["nulls"] = toggles.nulls;
  j["early_unlock"] = toggles.unlock_before_push;
  j["copy_in"] = copy_in;
  j["sender_yield"] = sender_yield;
  j["post_cost_ns"] = transport.post_cost_ns;
  j["latency_one_byte_ns"] = transport.latency.one_byte_ns;
  j["latency_knee_ns"] = transport.latency.knee_ns;
  j["latency_knee_bytes"] = transport.latency.knee_bytes;
  j["latency_beyond_ns_per_byte"] = transport.latency.beyond_ns_per_byte;
  j["jitter_ns"] = transport.jitter_ns;
  j["seed"] = seed;
  j["stall_timeout_ms"] = stall_timeout_ms;
  j["settle_ms"] = settle_ms;
  j["idle_sweeps"] = idle_sweeps;
  j["verify"] = verify;
  auto& sgs = j["subgroups"] = nlohmann::json::array();
  for (const auto& p : resolve_subgroups()) {
    sgs.push_back({{"id", p.config.id},
                   {"members", p.config.members},
                   {"senders", p.config.senders},
                   {"window", p.config.window},
                   {"max_msg_size", p.config.max_msg_size},
                   {"delivery", std::string(multicast::to_string(p.mode))},
                   {"active", p.active}});
  }
  return j;
}

ScenarioConfig random_scenario(std::uint64_t seed, std::size_t max_nodes, std::size_t max_senders,
                               std::int64_t max_total_messages) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  auto chance = [&](double p) { return std::uniform_real_distribution<double>(0, 1)(rng) < p; };

  ScenarioConfig c;
  c.name = "random-" + std::to_string(seed);
  c.seed = seed;
  c.nodes = pick(std::min<std::size_t>(2, max_nodes), max_nodes);
  c.stall_timeout_ms = 30000;

  const std::size_t sgs = chance(0.25) ? 2 : 1;
  std::vector<NodeId> all(c.nodes);
  std::iota(all.begin(), all.end(), 0);
  std::size_t total_senders = 0;
  for (std::size_t g = 0; g < sgs; ++g) {
    SubgroupPlan p;
    p.config.id = static_cast<SubgroupId>(g);
    std::shuffle(all.begin(), all.end(), rng);
    const std::size_t members = g == 0 ? c.nodes : pick(1, c.nodes);
    p.config.members.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(members));
    std::sort(p.config.members.begin(), p.config.members.end());
    std::vector<NodeId> order = p.config.members;
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t senders = pick(1, std::min(members, max_senders));
    p.config.senders.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(senders));
    const std::uint32_t windows[] = {1, 2, 3, 5, 16, 100};
    p.config.window = windows[pick(0, 5)];
    p.config.max_msg_size = 0;
    const multicast::DeliveryMode modes[] = {multicast::DeliveryMode::kInPlace, multicast::DeliveryMode::kCopyOut,
                                             multicast::DeliveryMode::kBatched};
    p.mode = modes[pick(0, 2)];
    total_senders += senders;
    c.explicit_subgroups.push_back(std::move(p));
  }

  const std::size_t sizes[] = {0, 1, 8, 24, 100, 1024};
  c.message_size = sizes[pick(0, 5)];
  c.max_msg_size = c.message_size + 8 + (chance(0.3) ? pick(0, 64) : 0);

  bool any_silent = false;
  std::int64_t slowest = 0;
  for (NodeId n = 0; n < c.nodes; ++n) {
    const double r = std::uniform_real_distribution<double>(0, 1)(rng);
    Delay d;
    if (r < 0.15) {
      d = Delay::forever();
      any_silent = true;
    } else if (r < 0.5) {
      d = Delay::none();
    } else if (r < 0.75) {
      d = Delay{1000, false};
    } else if (r < 0.95) {
      d = Delay{100000, false};
    } else {
      d = Delay{1000000, false};
    }
    slowest = std::max(slowest, d.infinite ? 0 : d.ns);
    c.node_delays[n] = d;
  }

  // Keep each run to a few seconds of injected delay.
  std::int64_t cap = max_total_messages / static_cast<std::int64_t>(std::max<std::size_t>(total_senders, 1));
  if (slowest >= 1000000) cap = std::min<std::int64_t>(cap, 300);
  if (slowest >= 100000) cap = std::min<std::int64_t>(cap, 3000);
  cap = std::max<std::int64_t>(cap, 1);
  c.messages_per_sender = static_cast<std::int64_t>(pick(1, static_cast<std::size_t>(cap)));

  c.toggles.batch_send = chance(0.7);
  c.toggles.batch_receive = chance(0.7);
  c.toggles.batch_delivery = chance(0.7);
  c.toggles.unlock_before_push = chance(0.7);
  c.toggles.nulls = any_silent || chance(0.7);
  c.copy_in = chance(0.3);
  if (chance(0.5)) {
    c.transport = transport::ChannelParams::zero_cost();
  } else {
    c.transport.jitter_ns = chance(0.5) ? static_cast<std::int64_t>(pick(0, 5000)) : 0;
  }
  c.transport.seed = seed;
  c.delivery_delay = chance(0.1) ? Delay{1000, false} : Delay::none();
  c.validate();
  return c;
}

// --------------------------------------------------------------------- run

bool RunResult::passed() const {
  return std::all_of(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.pass; });
}

const oracle::Verdict* RunResult::verdict(const std::string& name) const {
  for (const auto& v : verdicts) {
    if (v.name == name) return &v;
  }
  return nullptr;
}

namespace {

struct NodeRecorder {
  std::vector<std::vector<oracle::DeliveryLine>> per_sg;  // by plan position
  std::vector<std::int64_t> latency_ns;
  std::atomic<std::uint64_t> delivered{0};
  std::atomic<std::int64_t> last_delivery_ns{0};
};

void record_delivery(NodeRecorder& rec, NodeId node, std::size_t plan_pos, const multicast::Delivery& d,
                     bool verify) {
  const std::int64_t now = now_ns();
  if (verify) rec.per_sg[plan_pos].push_back({node, d.sg, d.id.sender_rank, d.id.index, fnv1a64(d.body)});
  if (d.body.size() >= kStampBytes) {
    std::int64_t stamp = 0;
    std::memcpy(&stamp, d.body.data() + 16, sizeof stamp);
    rec.latency_ns.push_back(now - stamp);
  }
  rec.last_delivery_ns.store(now, std::memory_order_relaxed);
  rec.delivered.fetch_add(1, std::memory_order_relaxed);
}

// Fills `out` with the message header and filler.
void build_message(std::span<std::byte> out, NodeId node, SubgroupId sg, std::uint64_t counter,
                   std::span<const std::byte> filler) {
  std::byte header[kStampBytes];
  const std::uint32_t n32 = node;
  const std::uint32_t sg32 = sg;
  const std::int64_t stamp = now_ns();
  std::memcpy(header, &n32, 4);
  std::memcpy(header + 4, &sg32, 4);
  std::memcpy(header + 8, &counter, 8);
  std::memcpy(header + 16, &stamp, 8);
  const std::size_t head = std::min(out.size(), kStampBytes);
  std::memcpy(out.data(), header, head);
  if (out.size() > head) std::memcpy(out.data() + head, filler.data() + head, out.size() - head);
}

std::string dump_state(const std::vector<std::unique_ptr<multicast::Node>>& nodes,
                       const std::vector<SubgroupPlan>& plans, const sst::SstLayout& layout) {
  std::ostringstream out;
  for (const auto& p : plans) {
    const auto& cols = layout.columns(p.config.id);
    out << "subgroup " << p.config.id << " (rows: received_num delivered_num nulls_announced)\n";
    for (NodeId viewer : p.config.members) {
      out << "  as seen by node " << viewer << ":";
      const auto& t = nodes[viewer]->table();
      for (NodeId row : p.config.members) {
        out << "  [" << row << "] " << t.read(row, cols.received_num()) << ' ' << t.read(row, cols.delivered_num())
            << ' ' << t.read(row, cols.nulls_announced());
      }
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace

RunResult run_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  const auto plans = cfg.resolve_subgroups();
  std::vector<SubgroupConfig> configs;
  for (const auto& p : plans) configs.push_back(p.config);
  const sst::SstLayout layout = sst::build_layout(cfg.nodes, configs);

  transport::Fabric fabric(cfg.nodes, cfg.transport);
  std::vector<std::unique_ptr<NodeRecorder>> recs;
  for (std::size_t n = 0; n < cfg.nodes; ++n) {
    auto r = std::make_unique<NodeRecorder>();
    r->per_sg.resize(plans.size());
    recs.push_back(std::move(r));
  }

  std::mutex fatal_mu;
  std::string fatal_text;
  std::atomic<bool> fatal{false};

  // Expected deliveries per node: every real of every member subgroup.
  std::uint64_t committed_target = 0;
  std::vector<std::uint64_t> target(cfg.nodes, 0);
  for (const auto& p : plans) {
    if (!p.active) continue;
    std::uint64_t reals = 0;
    for (NodeId s : p.config.senders) {
      if (!cfg.delay_of(s).infinite) reals += static_cast<std::uint64_t>(cfg.messages_per_sender);
    }
    committed_target += reals;
    for (NodeId m : p.config.members) target[m] += reals;
  }

  std::vector<std::unique_ptr<multicast::Node>> nodes;
  for (NodeId n = 0; n < cfg.nodes; ++n) {
    std::vector<multicast::SubgroupSpec> specs;
    for (std::size_t i = 0; i < plans.size(); ++i) {
      multicast::SubgroupSpec spec;
      spec.config = plans[i].config;
      spec.mode = plans[i].mode;
      NodeRecorder* rec = recs[n].get();
      const bool verify = cfg.verify;
      const std::int64_t delay = cfg.delivery_delay.ns;
      spec.on_deliver = [rec, n, i, verify, delay](const multicast::Delivery& d) {
        record_delivery(*rec, n, i, d, verify);
        busy_wait_ns(delay);
      };
      spec.on_deliver_batch = [rec, n, i, verify, delay](std::span<const multicast::Delivery> batch) {
        for (const auto& d : batch) record_delivery(*rec, n, i, d, verify);
        busy_wait_ns(delay);
      };
      specs.push_back(std::move(spec));
    }
    multicast::EngineOptions opts;
    opts.toggles = cfg.toggles;
    opts.idle_sweeps_before_park = cfg.idle_sweeps;
    opts.record_commits = cfg.verify;
    opts.on_fatal = [&](NodeId who, std::exception_ptr e) {
      std::string what = "unknown error";
      try {
        std::rethrow_exception(e);
      } catch (const std::exception& ex) {
        what = ex.what();
      } catch (...) {
      }
      std::lock_guard lk(fatal_mu);
      fatal_text += "node " + std::to_string(who) + ": " + what + "\n";
      fatal.store(true);
    };
    nodes.push_back(std::make_unique<multicast::Node>(fabric, n, layout, std::move(specs), std::move(opts)));
  }

  for (auto& node : nodes) node->start();
  const std::int64_t t0 = now_ns();

  std::vector<std::thread> senders;
  for (const auto& p : plans) {
    if (!p.active) continue;
    for (NodeId s : p.config.senders) {
      const Delay d = cfg.delay_of(s);
      if (d.infinite || cfg.messages_per_sender == 0) continue;
      senders.emplace_back([&, s, sg = p.config.id, delay = d.ns] {
        std::vector<std::byte> filler(cfg.message_size);
        std::mt19937_64 rng(cfg.seed ^ (std::uint64_t{s} << 32) ^ (std::uint64_t{sg} << 48) ^ 0x9e3779b97f4a7c15ull);
        for (auto& b : filler) b = static_cast<std::byte>(rng());
        std::vector<std::byte> scratch(cfg.message_size);
        multicast::Node& node = *nodes[s];
        try {
          for (std::int64_t k = 0; k < cfg.messages_per_sender; ++k) {
            const auto counter = static_cast<std::uint64_t>(k);
            if (cfg.copy_in) {
              node.send(sg, cfg.message_size, [&](std::span<std::byte> out) {
                build_message(scratch, s, sg, counter, filler);
                if (!out.empty()) std::memcpy(out.data(), scratch.data(), out.size());
              });
            } else {
              node.send(sg, cfg.message_size,
                        [&](std::span<std::byte> out) { build_message(out, s, sg, counter, filler); });
            }
            busy_wait_ns(delay);
            if (cfg.sender_yield) std::this_thread::yield();
          }
        } catch (const std::runtime_error&) {
          // Node stopped before all messages went out (stall or failure).
        }
      });
    }
  }

  // Wait for completion, a stall or a failure.
  auto delivered_sum = [&] {
    std::uint64_t total = 0;
    for (const auto& r : recs) total += r->delivered.load(std::memory_order_relaxed);
    return total;
  };
  auto complete = [&] {
    for (std::size_t n = 0; n < cfg.nodes; ++n) {
      if (recs[n]->delivered.load(std::memory_order_relaxed) < target[n]) return false;
    }
    return true;
  };
  std::uint64_t last_seen = delivered_sum();
  std::int64_t last_progress = now_ns();
  bool completed = false;
  bool stalled = false;
  for (;;) {
    if (fatal.load()) break;
    if (complete()) {
      completed = true;
      break;
    }
    const std::uint64_t now_delivered = delivered_sum();
    const std::int64_t now = now_ns();
    if (now_delivered != last_seen) {
      last_seen = now_delivered;
      last_progress = now;
    } else if (now - last_progress > cfg.stall_timeout_ms * 1000000) {
      stalled = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }

  RunResult result;
  Metrics& m = result.metrics;
  auto nulls_now = [&] {
    std::uint64_t total = 0;
    for (const auto& node : nodes) total += node->nulls_committed();
    return total;
  };
  bool settled = false;
  if (completed && !fatal.load()) {
    const std::uint64_t before = nulls_now();
    std::this_thread::sleep_for(std::chrono::milliseconds(cfg.settle_ms));
    m.nulls_during_settle = nulls_now() - before;
    settled = !fatal.load();
  }
  if (stalled || fatal.load()) result.state_dump = dump_state(nodes, plans, layout);

  for (auto& node : nodes) node->stop();
  for (auto& t : senders) t.join();

  // Metrics.
  m.scenario = cfg.name;
  m.completed = completed && !fatal.load();
  m.committed_reals = committed_target;
  m.layout = layout.to_json();
  m.config = cfg.to_json();
  std::int64_t last = t0;
  for (NodeId n = 0; n < cfg.nodes; ++n) {
    const auto stats = nodes[n]->stats();
    NodeMetrics nm;
    nm.node = n;
    nm.sweeps = stats.sweeps;
    nm.parks = stats.parks;
    nm.posts_under_lock = stats.posts_under_lock;
    nm.writes_posted = fabric.writes_posted_by(n);
    nm.posting_ns = fabric.posting_ns(n);
    for (const auto& s : stats.subgroups) {
      nm.delivered += s.delivered_reals;
      nm.delivered_bytes += s.delivered_bytes;
      nm.skipped_nulls += s.skipped_nulls;
      nm.nulls_committed += s.nulls_committed;
      nm.delivery_copies += s.delivery_copies;
      nm.upcalls += s.upcalls;
      nm.lemma_violations += s.lemma_violations;
      m.send_batches.merge(s.send_batches);
      m.receive_batches.merge(s.receive_batches);
      m.delivery_batches.merge(s.delivery_batches);
      m.delivery_batches_by_sg[s.sg].merge(s.delivery_batches);
    }
    const std::int64_t ld = recs[n]->last_delivery_ns.load();
    nm.last_delivery_ns = ld > 0 ? ld - t0 : 0;
    last = std::max(last, ld);
    m.expected_per_node = std::max<std::uint64_t>(m.expected_per_node, target[n]);
    m.delivered_total += nm.delivered;
    m.delivered_bytes_total += nm.delivered_bytes;
    m.nulls_committed += nm.nulls_committed;
    m.lemma_violations += nm.lemma_violations;
    m.posts_under_lock += nm.posts_under_lock;
    m.latency_ns.insert(m.latency_ns.end(), recs[n]->latency_ns.begin(), recs[n]->latency_ns.end());
    m.nodes.push_back(nm);
  }
  m.writes_posted = fabric.writes_posted();
  m.duration_s = static_cast<double>(last - t0) / 1e9;
  if (m.duration_s > 0) {
    m.throughput_bytes_per_s = static_cast<double>(m.delivered_bytes_total) / m.duration_s;
    m.throughput_msgs_per_s = static_cast<double>(m.delivered_total) / m.duration_s;
  }
  if (m.delivered_total > 0) {
    m.writes_per_delivery = static_cast<double>(m.writes_posted) / static_cast<double>(m.delivered_total);
  }

  // Verdicts.
  if (cfg.verify) {
    for (const auto& p : plans) {
      result.commit_log.subgroups[p.config.id] = {static_cast<std::uint32_t>(p.config.senders.size()),
                                                  p.config.members};
    }
    for (const auto& node : nodes) {
      for (const auto& c : node->commit_log()) {
        result.commit_log.lines.push_back(
            {c.node, c.sg, c.rank, c.index, c.is_null ? oracle::Kind::kNull : oracle::Kind::kReal, c.digest});
      }
    }
    for (const auto& r : recs) {
      for (const auto& sg : r->per_sg) result.deliveries.insert(result.deliveries.end(), sg.begin(), sg.end());
    }
    for (auto& v : oracle::check_deliveries(result.commit_log, result.deliveries)) {
      result.verdicts.push_back(std::move(v));
    }
  }
  {
    oracle::Verdict v{"no-stall", completed, ""};
    if (!completed) {
      v.detail = "delivered " + std::to_string(delivered_sum()) + " of " +
                 std::to_string(std::accumulate(target.begin(), target.end(), std::uint64_t{0})) +
                 (stalled ? "; no progress for " + std::to_string(cfg.stall_timeout_ms) + " ms" : "; aborted");
    }
    result.verdicts.push_back(v);
  }
  {
    oracle::Verdict v{"quiescence", settled && m.nulls_during_settle == 0, ""};
    if (!settled) {
      v.detail = "run did not complete, no settle window";
    } else if (m.nulls_during_settle) {
      v.detail = std::to_string(m.nulls_during_settle) + " nulls committed during settle";
    }
    result.verdicts.push_back(v);
  }
  result.verdicts.push_back({"one-round-lemma", m.lemma_violations == 0,
                             m.lemma_violations ? std::to_string(m.lemma_violations) + " violations" : ""});
  {
    std::lock_guard lk(fatal_mu);
    std::string detail = fatal_text;
    if (!detail.empty() && detail.back() == '\n') detail.pop_back();
    result.verdicts.push_back({"node-health", fatal_text.empty(), detail});
  }
  return result;
}

// ------------------------------------------------------------------ output

std::string format_verdicts(const std::vector<oracle::Verdict>& verdicts) {
  std::ostringstream out;
  for (const auto& v : verdicts) {
    out << (v.pass ? "PASS " : "FAIL ") << v.name;
    if (!v.detail.empty()) out << ": " << v.detail;
    out << '\n';
  }
  return out.str();
}

nlohmann::json metrics_to_json(const Metrics& m) {
  auto hist = [](const Histogram& h) {
    nlohmann::json j;
    j["samples"] = h.samples();
    j["total"] = h.total();
    j["mean"] = h.mean();
    j["mode"] = h.mode();
    return j;
  };
  nlohmann::json j;
  j["scenario"] = m.scenario;
  j["completed"] = m.completed;
  j["duration_s"] = m.duration_s;
  j["committed_reals"] = m.committed_reals;
  j["expected_per_node"] = m.expected_per_node;
  j["delivered_total"] = m.delivered_total;
  j["delivered_bytes_total"] = m.delivered_bytes_total;
  j["writes_posted"] = m.writes_posted;
  j["writes_per_delivery"] = m.writes_per_delivery;
  j["nulls_committed"] = m.nulls_committed;
  j["nulls_during_settle"] = m.nulls_during_settle;
  j["lemma_violations"] = m.lemma_violations;
  j["posts_under_lock"] = m.posts_under_lock;
  j["throughput_bytes_per_s"] = m.throughput_bytes_per_s;
  j["throughput_msgs_per_s"] = m.throughput_msgs_per_s;
  j["send_batches"] = hist(m.send_batches);
  j["receive_batches"] = hist(m.receive_batches);
  j["delivery_batches"] = hist(m.delivery_batches);
  nlohmann::json lat;
  lat["samples"] = m.latency_ns.size();
  for (double p : {50.0, 90.0, 99.0, 99.9, 100.0}) {
    std::ostringstream key;
    key << "p" << p;
    lat[key.str()] = percentile(m.latency_ns, p);
  }
  j["latency_ns"] = lat;
  auto& nodes = j["nodes"] = nlohmann::json::array();
  for (const auto& n : m.nodes) {
    const double secs = static_cast<double>(n.last_delivery_ns) / 1e9;
    nodes.push_back({{"node", n.node},
                     {"delivered", n.delivered},
                     {"delivered_bytes", n.delivered_bytes},
                     {"bytes_per_s", secs > 0 ? static_cast<double>(n.delivered_bytes) / secs : 0.0},
                     {"skipped_nulls", n.skipped_nulls},
                     {"nulls_committed", n.nulls_committed},
                     {"writes_posted", n.writes_posted},
                     {"posting_ns", n.posting_ns},
                     {"parks", n.parks},
                     {"sweeps", n.sweeps},
                     {"posts_under_lock", n.posts_under_lock},
                     {"delivery_copies", n.delivery_copies},
                     {"upcalls", n.upcalls},
                     {"lemma_violations", n.lemma_violations},
                     {"last_delivery_ns", n.last_delivery_ns}});
  }
  j["config"] = m.config;
  return j;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_histogram(const std::filesystem::path& path, const Histogram& h) {
  auto out = open_out(path);
  out << "batch_size,count\n";
  for (const auto& [size, count] : h.bins()) out << size << ',' << count << '\n';
}

}  // namespace

void emit_report(const RunResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Metrics& m = result.metrics;
  open_out(dir / "metrics.json") << metrics_to_json(m).dump(2) << '\n';
  open_out(dir / "layout.json") << m.layout.dump(2) << '\n';
  write_histogram(dir / "send_batches.csv", m.send_batches);
  write_histogram(dir / "receive_batches.csv", m.receive_batches);
  write_histogram(dir / "delivery_batches.csv", m.delivery_batches);
  {
    auto out = open_out(dir / "latency_percentiles.csv");
    out << "percentile,latency_ns\n";
    if (!m.latency_ns.empty()) {
      for (double p : {50.0, 90.0, 99.0, 99.9, 100.0}) out << p << ',' << percentile(m.latency_ns, p) << '\n';
    }
  }
  open_out(dir / "verdicts.txt") << format_verdicts(result.verdicts);
  if (!result.commit_log.subgroups.empty()) {
    auto out = open_out(dir / "commit_log.txt");
    oracle::write_commit_log(out, result.commit_log);
    auto del = open_out(dir / "deliveries.txt");
    oracle::write_deliveries(del, result.deliveries);
  }
  if (!result.state_dump.empty()) open_out(dir / "state_dump.txt") << result.state_dump;
}

std::vector<oracle::Verdict> verify_logs(const std::filesystem::path& dir) {
  std::ifstream commits(dir / "commit_log.txt");
  if (!commits) throw std::runtime_error("cannot read " + (dir / "commit_log.txt").string());
  std::ifstream deliveries(dir / "deliveries.txt");
  if (!deliveries) throw std::runtime_error("cannot read " + (dir / "deliveries.txt").string());
  const auto log = oracle::read_commit_log(commits);
  const auto lines = oracle::read_deliveries(deliveries);
  return oracle::check_deliveries(log, lines);
}

std::vector<SweepRow> run_sweep(const KvConfig& base, const std::string& param, const std::vector<std::string>& values,
                                const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<SweepRow> rows;
  for (const auto& value : values) {
    KvConfig kv = base;
    kv.set(param, value);
    const auto cfg = ScenarioConfig::from_kv(kv);
    SweepRow row{value, run_scenario(cfg)};
    emit_report(row.result, out_dir / (param + "_" + value));
    rows.push_back(std::move(row));
  }
  auto out = open_out(out_dir / "sweep.csv");
  out << "param,value,slot_bytes_total,throughput_bytes_per_s,throughput_msgs_per_s,writes_per_delivery,"
         "latency_p50_ns,latency_p99_ns,pass\n";
  for (const auto& r : rows) {
    const Metrics& m = r.result.metrics;
    out << param << ',' << r.value << ',' << m.layout.value("total_slot_bytes", 0) << ',' << m.throughput_bytes_per_s
        << ',' << m.throughput_msgs_per_s << ',' << m.writes_per_delivery << ',' << percentile(m.latency_ns, 50)
        << ',' << percentile(m.latency_ns, 99) << ',' << (r.result.passed() ? 1 : 0) << '\n';
  }
  return rows;
}

}  // namespace ringcast::harness
