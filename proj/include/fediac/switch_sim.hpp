#pragma once

// Switch state machine. Phase 1 folds client vote packets into per-dimension
// counters and thresholds them into the global index array. Phase 2 runs the
// memory-bounded slot pool: one slot per packet sequence number accumulates
// 32-bit integer sums across clients and is broadcast and freed once every
// expected client has arrived; packets that cannot get a slot wait in a FIFO.
//
// Two counters are kept. aggregation_count() increments once per packet
// folded (either phase). slot_completions() increments once per finished
// per-sequence aggregation, vote sequences included, which is the unit the
// pipelined switch frees memory in.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fediac/compression.hpp"
#include "fediac/packet.hpp"

namespace fediac {

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Elementwise sum of client vote arrays, before thresholding.
struct GIACounts {
  std::vector<std::uint16_t> counts;
};

// How many values a data sequence carries and how many distinct clients are
// expected to send it. Dense schemes expect all N; block-sparse schemes only
// the clients whose block is non-empty.
struct SeqSpec {
  std::uint32_t seq = 0;
  std::uint32_t values = 0;
  std::uint32_t expected_clients = 0;
};

class SwitchState {
 public:
  SwitchState(std::size_t memory_budget, int num_clients, int threshold_a)
      : memory_budget_(memory_budget),
        num_clients_(num_clients),
        threshold_a_(threshold_a) {
    if (num_clients < 1)
      throw std::invalid_argument("switch needs at least one client");
    if (threshold_a < 1 || threshold_a > num_clients)
      throw std::invalid_argument("vote threshold must be in [1, N]");
  }

  // --- Phase 1 ---------------------------------------------------------

  void begin_vote_phase(std::size_t d, std::size_t capacity_bits) {
    const std::size_t counter_bytes = 2 * d;
    if (counter_bytes > memory_budget_)
      throw std::invalid_argument(
          "vote counters (" + std::to_string(counter_bytes) +
          " bytes) exceed the memory budget");
    vote_d_ = d;
    vote_capacity_ = capacity_bits;
    vote_counts_.assign(d, 0);
    vote_seen_.clear();
    vote_seq_folds_.clear();
    live_bytes_ += counter_bytes;
    note_memory();
  }

  void ingest_vote_packet(const Packet& p) {
    if (p.phase != Phase::kVote)
      throw ProtocolError("data packet during vote phase");
    if (vote_counts_.empty())
      throw ProtocolError("vote packet before vote phase start");
    const std::size_t start = p.seq * vote_capacity_;
    if (start >= vote_d_)
      throw ProtocolError("vote sequence " + std::to_string(p.seq) +
                          " out of range");
    if (p.client >= static_cast<std::uint32_t>(num_clients_))
      throw ProtocolError("unknown client " + std::to_string(p.client));
    if (!vote_seen_.insert((std::uint64_t(p.client) << 32) | p.seq).second)
      throw ProtocolError("duplicate vote packet from client " +
                          std::to_string(p.client));
    detail::BitReader r(p.payload);
    const std::size_t count = std::min(vote_capacity_, vote_d_ - start);
    for (std::size_t i = 0; i < count; ++i)
      vote_counts_[start + i] += static_cast<std::uint16_t>(r.read(1));
    ++agg_count_;
    if (++vote_seq_folds_[p.seq] == num_clients_) ++slot_completions_;
  }

  // One-shot wrapper: folds a complete packet set and deduces the GIA.
  VoteArray aggregate_votes(const std::vector<Packet>& packets, std::size_t d,
                            std::size_t capacity_bits = vote_capacity()) {
    begin_vote_phase(d, capacity_bits);
    for (const Packet& p : packets) ingest_vote_packet(p);
    return finish_vote_phase();
  }

  GIACounts vote_counts() const { return GIACounts{vote_counts_}; }

  // Thresholds the counters into the GIA and releases the counter memory.
  // Throws if any client's packet set is incomplete (timeout abort).
  VoteArray finish_vote_phase() {
    const std::size_t seqs = (vote_d_ + vote_capacity_ - 1) / vote_capacity_;
    if (vote_seen_.size() != seqs * static_cast<std::size_t>(num_clients_))
      throw ProtocolError("vote phase aborted: " +
                          std::to_string(vote_seen_.size()) + " of " +
                          std::to_string(seqs * num_clients_) +
                          " vote packets arrived");
    VoteArray gia(vote_d_);
    for (std::size_t l = 0; l < vote_d_; ++l)
      gia.bits[l] = vote_counts_[l] >= threshold_a_ ? 1 : 0;
    live_bytes_ -= 2 * vote_d_;
    vote_counts_.clear();
    vote_counts_.shrink_to_fit();
    return gia;
  }

  // --- Phase 2 ---------------------------------------------------------

  void begin_data_phase(const std::vector<SeqSpec>& seqs, int value_bits) {
    if (value_bits < 1 || value_bits > 32)
      throw std::invalid_argument("value width must be in [1, 32] bits");
    specs_.clear();
    for (const SeqSpec& s : seqs) {
      if (s.values < 1)
        throw std::invalid_argument("a sequence must carry at least one value");
      if (s.expected_clients < 1 ||
          s.expected_clients > static_cast<std::uint32_t>(num_clients_))
        throw std::invalid_argument("expected client count out of range");
      if (4 * static_cast<std::size_t>(s.values) > memory_budget_)
        throw std::invalid_argument(
            "a single slot exceeds the memory budget");
      specs_[s.seq] = s;
    }
    value_bits_ = value_bits;
    slots_.clear();
    pending_.clear();
    data_seen_.clear();
    completed_seqs_ = 0;
  }

  // Queues the packet and folds everything currently foldable. Folds into a
  // live slot happen regardless of queue position; memory for new slots is
  // granted strictly in arrival order. Returns any broadcast packets whose
  // aggregation completed as a result.
  std::vector<Packet> ingest_data_packet(const Packet& p) {
    if (p.phase != Phase::kData)
      throw ProtocolError("vote packet during data phase");
    const auto spec = specs_.find(p.seq);
    if (spec == specs_.end())
      throw ProtocolError("data sequence " + std::to_string(p.seq) +
                          " out of range");
    if (p.client >= static_cast<std::uint32_t>(num_clients_))
      throw ProtocolError("unknown client " + std::to_string(p.client));
    if (!data_seen_.insert((std::uint64_t(p.client) << 32) | p.seq).second)
      throw ProtocolError("duplicate data packet (client " +
                          std::to_string(p.client) + ", seq " +
                          std::to_string(p.seq) + ")");

    std::vector<Packet> completed;
    pending_.push_back(p);
    drain_pending(completed);
    return completed;
  }

  // Timeout-abort stub: a round must consume every expected packet.
  void finish_data_phase() const {
    if (!slots_.empty() || !pending_.empty())
      throw ProtocolError("data phase aborted with incomplete slots");
  }

  // --- Accounting ------------------------------------------------------

  std::uint64_t aggregation_count() const { return agg_count_; }
  std::uint64_t slot_completions() const { return slot_completions_; }
  std::size_t live_memory_bytes() const { return live_bytes_; }
  std::size_t peak_memory_bytes() const { return peak_bytes_; }
  std::size_t pending_packets() const { return pending_.size(); }

 private:
  struct Slot {
    SeqSpec spec;
    std::vector<std::int32_t> acc;
    std::vector<std::uint8_t> arrived;
    std::uint32_t arrived_count = 0;
  };

  std::map<std::uint32_t, Slot>::iterator allocate_slot(const SeqSpec& spec) {
    Slot s;
    s.spec = spec;
    s.acc.assign(spec.values, 0);
    s.arrived.assign(static_cast<std::size_t>(num_clients_), 0);
    live_bytes_ += 4 * static_cast<std::size_t>(spec.values);
    note_memory();
    return slots_.emplace(spec.seq, std::move(s)).first;
  }

  void fold(std::map<std::uint32_t, Slot>::iterator it, const Packet& p,
            std::vector<Packet>& completed) {
    Slot& slot = it->second;
    if (slot.arrived[p.client])
      throw ProtocolError("duplicate fold from client " +
                          std::to_string(p.client));
    const std::vector<std::int32_t> values =
        decode_data_payload(p, slot.spec.values, value_bits_);
    for (std::size_t i = 0; i < values.size(); ++i)
      slot.acc[i] = static_cast<std::int32_t>(
          static_cast<std::uint32_t>(slot.acc[i]) +
          static_cast<std::uint32_t>(values[i]));
    slot.arrived[p.client] = 1;
    ++slot.arrived_count;
    ++agg_count_;
    if (slot.arrived_count == slot.spec.expected_clients)
      complete_slot(it, p.iteration, completed);
  }

  void complete_slot(std::map<std::uint32_t, Slot>::iterator it,
                     std::uint32_t iteration, std::vector<Packet>& completed) {
    Slot& slot = it->second;
    const std::int32_t lo = value_bits_ == 32
                                ? std::numeric_limits<std::int32_t>::min()
                                : -(std::int32_t(1) << (value_bits_ - 1));
    const std::int32_t hi = value_bits_ == 32
                                ? std::numeric_limits<std::int32_t>::max()
                                : (std::int32_t(1) << (value_bits_ - 1)) - 1;
    for (std::int32_t v : slot.acc)
      if (v < lo || v > hi)
        throw ProtocolError("aggregate overflows the value width");
    std::vector<Packet> bcast = encode_data_packets(
        iteration, kBroadcastClient, slot.acc, value_bits_,
        std::max<std::size_t>(slot.acc.size(), 1));
    completed.push_back(std::move(bcast.front()));
    completed.back().seq = it->first;
    live_bytes_ -= 4 * static_cast<std::size_t>(slot.spec.values);
    slots_.erase(it);
    ++slot_completions_;
    ++completed_seqs_;
  }

  void drain_pending(std::vector<Packet>& completed) {
    bool progressed = true;
    while (progressed) {
      progressed = false;
      bool allocation_blocked = false;
      for (auto it = pending_.begin(); it != pending_.end(); ++it) {
        auto slot = slots_.find(it->seq);
        if (slot == slots_.end()) {
          const SeqSpec& spec = specs_.at(it->seq);
          if (allocation_blocked ||
              live_bytes_ + 4 * spec.values > memory_budget_) {
            allocation_blocked = true;  // later packets may only fold
            continue;
          }
          slot = allocate_slot(spec);
        }
        const Packet p = std::move(*it);
        pending_.erase(it);
        fold(slot, p, completed);
        progressed = true;  // a completion may have freed memory; rescan
        break;
      }
    }
  }

  void note_memory() {
    if (live_bytes_ > memory_budget_)
      throw std::logic_error("memory budget exceeded");
    peak_bytes_ = std::max(peak_bytes_, live_bytes_);
  }

  std::size_t memory_budget_;
  int num_clients_;
  int threshold_a_;

  std::size_t vote_d_ = 0;
  std::size_t vote_capacity_ = 0;
  std::vector<std::uint16_t> vote_counts_;
  std::set<std::uint64_t> vote_seen_;
  std::map<std::uint32_t, int> vote_seq_folds_;

  std::map<std::uint32_t, SeqSpec> specs_;
  std::map<std::uint32_t, Slot> slots_;
  std::deque<Packet> pending_;
  std::set<std::uint64_t> data_seen_;
  int value_bits_ = 0;
  std::size_t completed_seqs_ = 0;

  std::uint64_t agg_count_ = 0;
  std::uint64_t slot_completions_ = 0;
  std::size_t live_bytes_ = 0;
  std::size_t peak_bytes_ = 0;
};

}  // namespace fediac
