#include "qsvpn/ike/esp.hpp"

#include "qsvpn/common/crypto.hpp"
#include "qsvpn/common/error.hpp"

namespace qsvpn::ike {

namespace {

Bytes aad_for(const std::string& sa_id, std::uint64_t seq) {
  Bytes aad = to_bytes(sa_id);
  append_u64_be(aad, seq);
  return aad;
}

}  // namespace

Bytes esp_nonce(ByteView salt, std::uint64_t seq) {
  Bytes n(salt.begin(), salt.end());
  append_u64_be(n, seq);
  return n;
}

EspPacket EspSender::protect(ByteView plaintext) {
  std::uint64_t seq = next_seq_++;
  return {sa_id_, seq, crypto::aes256_gcm_seal(keys_.key, esp_nonce(keys_.salt, seq), aad_for(sa_id_, seq), plaintext)};
}

Bytes EspReceiver::unprotect(const EspPacket& p) {
  if (p.seq == 0) fail(ErrorCode::ReplayedSequence, "sequence 0 is never sent");
  if (p.seq <= highest_) {
    std::uint64_t off = highest_ - p.seq;
    if (off >= kWindow || (bitmap_ >> off) & 1)
      fail(ErrorCode::ReplayedSequence, sa_id_ + " seq " + std::to_string(p.seq));
  }
  if (p.sa_id != sa_id_) fail(ErrorCode::DecryptFailure, "packet for " + p.sa_id + " on " + sa_id_);
  Bytes plain = crypto::aes256_gcm_open(keys_.key, esp_nonce(keys_.salt, p.seq), aad_for(sa_id_, p.seq), p.sealed);
  if (p.seq > highest_) {
    std::uint64_t shift = p.seq - highest_;
    bitmap_ = shift >= kWindow ? 0 : bitmap_ << shift;
    bitmap_ |= 1;
    highest_ = p.seq;
  } else {
    bitmap_ |= std::uint64_t{1} << (highest_ - p.seq);
  }
  return plain;
}

}  // namespace qsvpn::ike
