#pragma once

#include <cstdint>
#include <string>

#include "qsvpn/common/bytes.hpp"
#include "qsvpn/ike/key_schedule.hpp"

namespace qsvpn::ike {

struct EspPacket {
  std::string sa_id;
  std::uint64_t seq = 0;
  Bytes sealed;  // ciphertext || tag
};

/// Outbound half of an SA: AES-256-GCM, nonce = salt | be64(seq), seq from 1.
class EspSender {
 public:
  EspSender() = default;
  EspSender(std::string sa_id, EspDirectionKeys keys) : sa_id_(std::move(sa_id)), keys_(std::move(keys)) {}

  EspPacket protect(ByteView plaintext);
  std::uint64_t sent() const noexcept { return next_seq_ - 1; }

 private:
  std::string sa_id_;
  EspDirectionKeys keys_;
  std::uint64_t next_seq_ = 1;
};

/// Inbound half with a 64-packet anti-replay window.
class EspReceiver {
 public:
  static constexpr std::uint64_t kWindow = 64;

  EspReceiver() = default;
  EspReceiver(std::string sa_id, EspDirectionKeys keys) : sa_id_(std::move(sa_id)), keys_(std::move(keys)) {}

  // Throws DecryptFailure or ReplayedSequence; the window only advances on success.
  Bytes unprotect(const EspPacket& packet);
  std::uint64_t highest() const noexcept { return highest_; }

 private:
  std::string sa_id_;
  EspDirectionKeys keys_;
  std::uint64_t highest_ = 0;
  std::uint64_t bitmap_ = 0;  // bit i set: highest_ - i already seen
};

Bytes esp_nonce(ByteView salt, std::uint64_t seq);

}  // namespace qsvpn::ike
