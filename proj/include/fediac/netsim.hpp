#pragma once

// Discrete-event timing model. Per phase: each client starts at its own time,
// emits its packets with exponential inter-arrival gaps at its trace-driven
// rate, a single switch serves arrivals FIFO with truncated-Gaussian service
// times, and broadcast packets leave through a shared egress paced at the
// download rate. The event queue pops in non-decreasing time with ties broken
// by (kind, subject id) so runs are reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <fstream>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "fediac/packet.hpp"
#include "fediac/rng.hpp"

namespace fediac {

enum class SwitchKind { kHigh, kLow };

// Per-packet aggregation cost constants for the two switch tiers.
constexpr double kHighServiceMean = 3.03e-7;
constexpr double kLowServiceMean = 3.03e-6;
constexpr double kServiceVariance = 2.15e-8;
constexpr double kDefaultDownloadMultiplier = 5.0;

struct RatePlan {
  std::vector<double> upload_rates;   // packets/s per client
  double download_rate = 0.0;         // packets/s, shared egress
  double service_mean = 0.0;          // seconds
  double service_var = 0.0;           // seconds^2
  std::vector<double> train_delays;   // seconds per client
};

inline double service_mean_for(SwitchKind kind) {
  return kind == SwitchKind::kHigh ? kHighServiceMean : kLowServiceMean;
}

inline RatePlan make_rate_plan(
    std::vector<double> upload_rates, SwitchKind kind,
    double train_delay_s,
    double download_multiplier = kDefaultDownloadMultiplier) {
  if (upload_rates.empty())
    throw std::invalid_argument("rate plan needs at least one client");
  double sum = 0.0;
  for (double r : upload_rates) {
    if (!(r > 0.0))
      throw std::invalid_argument("client upload rates must be positive");
    sum += r;
  }
  RatePlan plan;
  plan.download_rate = download_multiplier * sum /
                       static_cast<double>(upload_rates.size());
  plan.train_delays.assign(upload_rates.size(), train_delay_s);
  plan.upload_rates = std::move(upload_rates);
  plan.service_mean = service_mean_for(kind);
  plan.service_var = kServiceVariance;
  return plan;
}

// One non-negative rate (packets sent in one second) per line.
inline std::vector<double> load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file: " + path);
  std::vector<double> rates;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    std::size_t last = line.find_last_not_of(" \t\r");
    const std::string tok = line.substr(first, last - first + 1);
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size() || v < 0.0) throw std::invalid_argument(tok);
      rates.push_back(v);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": not a non-negative number: '" + tok + "'");
    }
  }
  if (rates.empty())
    throw std::runtime_error("trace file is empty: " + path);
  return rates;
}

// Round-robin assignment of trace entries to clients.
inline std::vector<double> assign_rates(const std::vector<double>& trace,
                                        int num_clients) {
  if (trace.empty()) throw std::invalid_argument("empty trace");
  std::vector<double> rates(static_cast<std::size_t>(num_clients));
  for (int i = 0; i < num_clients; ++i)
    rates[static_cast<std::size_t>(i)] =
        trace[static_cast<std::size_t>(i) % trace.size()];
  return rates;
}

// Gaussian(service_mean, service_var), resampled while <= 0.
inline double service_time(const RatePlan& plan, Rng& rng) {
  if (plan.service_var == 0.0) return plan.service_mean;
  const double sd = std::sqrt(plan.service_var);
  double s;
  do {
    s = normal(rng, plan.service_mean, sd);
  } while (s <= 0.0);
  return s;
}

// Decides when downlink packets are released as uplink packets finish
// service. Returns how many broadcast packets leave at that instant.
class PacketSink {
 public:
  virtual ~PacketSink() = default;
  virtual std::size_t on_served(const Packet& p) = 0;
  // Called once after every uplink packet has been served.
  virtual std::size_t on_phase_complete() = 0;
};

// Sink for phases whose broadcast happens only once everything arrived
// (vote phase, dense server-style aggregation).
class BarrierSink : public PacketSink {
 public:
  explicit BarrierSink(std::size_t broadcast_packets)
      : broadcast_packets_(broadcast_packets) {}
  std::size_t on_served(const Packet&) override { return 0; }
  std::size_t on_phase_complete() override { return broadcast_packets_; }

 private:
  std::size_t broadcast_packets_;
};

struct PhaseStats {
  double last_arrival = 0.0;   // last uplink packet hits the switch queue
  double last_service = 0.0;   // switch finishes its last fold
  double end = 0.0;            // last broadcast leaves the egress
  std::uint64_t packets_in = 0;
  std::uint64_t packets_served = 0;
  std::uint64_t packets_out = 0;
  double total_queue_wait = 0.0;  // sum over packets of service_start-arrival

  double mean_queue_wait() const {
    return packets_served ? total_queue_wait /
                                static_cast<double>(packets_served)
                          : 0.0;
  }
};

namespace detail {

enum class EventKind : int { kTrainDone = 0, kPktArrive = 1, kSvcDone = 2 };

struct Event {
  double time = 0.0;
  EventKind kind = EventKind::kTrainDone;
  std::uint32_t subject = 0;

  bool operator>(const Event& other) const {
    if (time != other.time) return time > other.time;
    if (kind != other.kind) return kind > other.kind;
    return subject > other.subject;
  }
};

}  // namespace detail

// Runs one phase. start_times[i] is when client i may emit its first packet;
// packets[i] are released in order with Exponential(1/rate_i) gaps. Broadcast
// releases are paced through the egress at Exponential(1/download_rate).
inline PhaseStats simulate_phase(const std::vector<double>& start_times,
                                 const std::vector<std::vector<Packet>>& packets,
                                 const RatePlan& plan, PacketSink& sink,
                                 Rng& rng) {
  const std::size_t n = plan.upload_rates.size();
  if (start_times.size() != n || packets.size() != n)
    throw std::invalid_argument("per-client inputs must match the rate plan");

  // Independent substreams so arrival draws never depend on interleaving.
  std::vector<Rng> arrival_rng;
  arrival_rng.reserve(n);
  for (std::size_t i = 0; i < n; ++i) arrival_rng.emplace_back(rng());
  Rng service_rng(rng());
  Rng egress_rng(rng());

  PhaseStats stats;
  std::priority_queue<detail::Event, std::vector<detail::Event>,
                      std::greater<detail::Event>>
      events;
  for (std::size_t i = 0; i < n; ++i) {
    events.push({start_times[i], detail::EventKind::kTrainDone,
                 static_cast<std::uint32_t>(i)});
    stats.packets_in += packets[i].size();
  }

  std::vector<std::size_t> next_pkt(n, 0);
  struct Arrived {
    std::size_t client;
    std::size_t index;
    double time;
  };
  std::deque<Arrived> fifo;
  bool busy = false;
  Arrived in_service{0, 0, 0.0};
  double egress_clock = 0.0;

  const auto release_broadcasts = [&](std::size_t count, double ready) {
    for (std::size_t i = 0; i < count; ++i) {
      egress_clock = std::max(egress_clock, ready) +
                     exponential(egress_rng, plan.download_rate);
      ++stats.packets_out;
    }
  };

  const auto schedule_arrival = [&](std::size_t client, double from) {
    if (next_pkt[client] >= packets[client].size()) return;
    const double gap =
        exponential(arrival_rng[client], plan.upload_rates[client]);
    events.push({from + gap, detail::EventKind::kPktArrive,
                 static_cast<std::uint32_t>(client)});
  };

  const auto start_service = [&](double now) {
    if (busy || fifo.empty()) return;
    busy = true;
    in_service = fifo.front();
    fifo.pop_front();
    stats.total_queue_wait += now - in_service.time;
    events.push({now + service_time(plan, service_rng),
                 detail::EventKind::kSvcDone,
                 static_cast<std::uint32_t>(in_service.client)});
  };

  double last_event_time = 0.0;
  for (double t : start_times) last_event_time = std::max(last_event_time, t);

  while (!events.empty()) {
    const detail::Event ev = events.top();
    events.pop();
    last_event_time = std::max(last_event_time, ev.time);
    switch (ev.kind) {
      case detail::EventKind::kTrainDone:
        schedule_arrival(ev.subject, ev.time);
        break;
      case detail::EventKind::kPktArrive: {
        const std::size_t client = ev.subject;
        fifo.push_back({client, next_pkt[client], ev.time});
        ++next_pkt[client];
        stats.last_arrival = std::max(stats.last_arrival, ev.time);
        schedule_arrival(client, ev.time);
        start_service(ev.time);
        break;
      }
      case detail::EventKind::kSvcDone: {
        busy = false;
        ++stats.packets_served;
        stats.last_service = ev.time;
        const std::size_t released =
            sink.on_served(packets[in_service.client][in_service.index]);
        release_broadcasts(released, ev.time);
        start_service(ev.time);
        break;
      }
    }
  }

  const double done = stats.packets_served ? stats.last_service
                                           : last_event_time;
  release_broadcasts(sink.on_phase_complete(), done);
  stats.end = stats.packets_out ? egress_clock : done;
  return stats;
}

// Single-phase round starting at the per-client training delays.
inline PhaseStats run_round(const std::vector<std::vector<Packet>>& packets,
                            const RatePlan& plan, PacketSink& sink, Rng& rng) {
  return simulate_phase(plan.train_delays, packets, plan, sink, rng);
}

}  // namespace fediac
