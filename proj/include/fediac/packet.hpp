#pragma once

// Wire format. Every packet is at most 1500 bytes: a 16-byte header of four
// 32-bit little-endian fields (iteration, phase, client, seq) followed by a
// bit-packed payload, LSB-first within each byte. Vote payloads carry one bit
// per dimension; data payloads carry b-bit two's-complement integers in
// ascending mask-index order. The last packet of a burst is zero-padded to a
// byte boundary.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fediac/compression.hpp"

namespace fediac {

constexpr std::size_t kPacketBytes = 1500;
constexpr std::size_t kHeaderBytes = 16;
constexpr std::size_t kPayloadBits = (kPacketBytes - kHeaderBytes) * 8;
constexpr std::uint32_t kBroadcastClient = 0xffffffffu;

enum class Phase : std::uint32_t { kVote = 0, kData = 1 };

struct Packet {
  std::uint32_t iteration = 0;
  Phase phase = Phase::kVote;
  std::uint32_t client = 0;
  std::uint32_t seq = 0;
  std::vector<std::uint8_t> payload;

  std::size_t wire_bytes() const { return kHeaderBytes + payload.size(); }
};

// Values (or bits) per packet at the default 1500-byte size.
inline std::size_t vote_capacity() { return kPayloadBits; }

inline std::size_t data_capacity(int bits) {
  if (bits < 1 || bits > 32)
    throw std::invalid_argument("value width must be in [1, 32] bits, got " +
                                std::to_string(bits));
  return kPayloadBits / static_cast<std::size_t>(bits);
}

namespace detail {

class BitWriter {
 public:
  void write(std::uint64_t value, int width) {
    for (int i = 0; i < width; ++i) {
      const std::size_t byte = pos_ >> 3;
      if (byte >= bytes_.size()) bytes_.push_back(0);
      if ((value >> i) & 1u) bytes_[byte] |= std::uint8_t(1u << (pos_ & 7));
      ++pos_;
    }
  }

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t read(int width) {
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      const std::size_t byte = pos_ >> 3;
      if (byte >= bytes_.size())
        throw std::out_of_range("payload exhausted");
      if ((bytes_[byte] >> (pos_ & 7)) & 1u) v |= std::uint64_t(1) << i;
      ++pos_;
    }
    return v;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::int32_t sign_extend(std::uint64_t raw, int bits) {
  if (bits < 32 && (raw >> (bits - 1)) & 1u)
    raw |= ~((std::uint64_t(1) << bits) - 1);
  return static_cast<std::int32_t>(static_cast<std::uint32_t>(raw));
}

}  // namespace detail

// Splits d vote bits into packets of capacity_bits each.
inline std::vector<Packet> encode_vote_packets(
    std::uint32_t iteration, std::uint32_t client, const VoteArray& votes,
    std::size_t capacity_bits = vote_capacity()) {
  if (capacity_bits < 1 || capacity_bits > kPayloadBits)
    throw std::invalid_argument("vote capacity out of range");
  std::vector<Packet> packets;
  for (std::size_t start = 0; start < votes.size(); start += capacity_bits) {
    const std::size_t count = std::min(capacity_bits, votes.size() - start);
    detail::BitWriter w;
    for (std::size_t i = 0; i < count; ++i)
      w.write(votes.bits[start + i] ? 1u : 0u, 1);
    Packet p;
    p.iteration = iteration;
    p.phase = Phase::kVote;
    p.client = client;
    p.seq = static_cast<std::uint32_t>(start / capacity_bits);
    p.payload = w.take();
    packets.push_back(std::move(p));
  }
  return packets;
}

// Inverse of encode_vote_packets; packets may arrive in any seq order.
inline VoteArray decode_vote_packets(const std::vector<Packet>& packets,
                                     std::size_t d,
                                     std::size_t capacity_bits = vote_capacity()) {
  VoteArray v(d);
  for (const Packet& p : packets) {
    detail::BitReader r(p.payload);
    const std::size_t start = p.seq * capacity_bits;
    const std::size_t count = std::min(capacity_bits, d - std::min(d, start));
    for (std::size_t i = 0; i < count; ++i)
      v.bits[start + i] = static_cast<std::uint8_t>(r.read(1));
  }
  return v;
}

// Splits integer values into packets of capacity_values each, b bits per
// value. The mapping from payload position to model index is owned by the
// caller (it is the ascending order of mask set-bits).
inline std::vector<Packet> encode_data_packets(std::uint32_t iteration,
                                               std::uint32_t client,
                                               std::span<const std::int32_t> values,
                                               int bits,
                                               std::size_t capacity_values = 0) {
  if (capacity_values == 0) capacity_values = data_capacity(bits);
  if (bits < 1 || bits > 32)
    throw std::invalid_argument("value width must be in [1, 32] bits");
  if (capacity_values * static_cast<std::size_t>(bits) > kPayloadBits)
    throw std::invalid_argument("data capacity exceeds packet payload");
  const std::uint64_t mask = (std::uint64_t(1) << bits) - 1;
  std::vector<Packet> packets;
  for (std::size_t start = 0; start < values.size(); start += capacity_values) {
    const std::size_t count = std::min(capacity_values, values.size() - start);
    detail::BitWriter w;
    for (std::size_t i = 0; i < count; ++i)
      w.write(static_cast<std::uint64_t>(
                  static_cast<std::uint32_t>(values[start + i])) &
                  mask,
              bits);
    Packet p;
    p.iteration = iteration;
    p.phase = Phase::kData;
    p.client = client;
    p.seq = static_cast<std::uint32_t>(start / capacity_values);
    p.payload = w.take();
    packets.push_back(std::move(p));
  }
  return packets;
}

// Decodes one data payload; count is how many values the packet carries.
inline std::vector<std::int32_t> decode_data_payload(const Packet& p,
                                                     std::size_t count,
                                                     int bits) {
  detail::BitReader r(p.payload);
  std::vector<std::int32_t> out(count);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = detail::sign_extend(r.read(bits), bits);
  return out;
}

inline std::vector<std::uint8_t> serialize(const Packet& p) {
  if (p.wire_bytes() > kPacketBytes)
    throw std::invalid_argument("packet exceeds 1500 bytes");
  std::vector<std::uint8_t> out;
  out.reserve(p.wire_bytes());
  const auto put32 = [&out](std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
  };
  put32(p.iteration);
  put32(static_cast<std::uint32_t>(p.phase));
  put32(p.client);
  put32(p.seq);
  out.insert(out.end(), p.payload.begin(), p.payload.end());
  return out;
}

inline Packet parse_packet(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes)
    throw std::invalid_argument("short packet: " +
                                std::to_string(bytes.size()) + " bytes");
  if (bytes.size() > kPacketBytes)
    throw std::invalid_argument("oversized packet");
  const auto get32 = [&bytes](std::size_t off) {
    return static_cast<std::uint32_t>(bytes[off]) |
           static_cast<std::uint32_t>(bytes[off + 1]) << 8 |
           static_cast<std::uint32_t>(bytes[off + 2]) << 16 |
           static_cast<std::uint32_t>(bytes[off + 3]) << 24;
  };
  Packet p;
  p.iteration = get32(0);
  const std::uint32_t phase = get32(4);
  if (phase > 1) throw std::invalid_argument("unknown phase field");
  p.phase = static_cast<Phase>(phase);
  p.client = get32(8);
  p.seq = get32(12);
  p.payload.assign(bytes.begin() + kHeaderBytes, bytes.end());
  return p;
}

}  // namespace fediac
