#include "qsvpn/sdn/agent.hpp"

#include "qsvpn/common/crypto.hpp"
#include "qsvpn/common/error.hpp"

namespace qsvpn::sdn {

namespace {
constexpr std::size_t kRelayTagSize = 16;
constexpr std::size_t kMinTaggedKey = 32;
}  // namespace

Bytes relay_tag(ByteView hop_key, ByteView payload, std::size_t hop) {
  if (hop_key.size() < kMinTaggedKey) return {};
  Bytes msg(payload.begin(), payload.end());
  append_u32_be(msg, static_cast<std::uint32_t>(hop));
  Bytes tag = crypto::hmac_sha512(hop_key.subspan(hop_key.size() / 2), msg);
  tag.resize(kRelayTagSize);
  return tag;
}

Agent::Agent(NodeDescriptor descriptor, keystore::KeyStore& store, std::uint64_t seed)
    : descriptor_(std::move(descriptor)), store_(store), rng_(seed ^ source_tag("agent:" + descriptor_.node_id.value)) {
  if (store_.owner() != descriptor_.node_id) fail(ErrorCode::InvalidDescriptor, "agent store belongs to another node");
}

void Agent::set_reachable(bool up) {
  std::lock_guard lock(mu_);
  reachable_ = up;
}

bool Agent::reachable() const {
  std::lock_guard lock(mu_);
  return reachable_;
}

Bytes Agent::fresh_key(std::size_t octets) {
  std::lock_guard lock(mu_);
  return rng_.bytes(octets);
}

RelayWireMessage Agent::wrap(std::size_t hop, const std::string& link_id, const NodeId& next, ByteView secret,
                             std::size_t block_bits, keystore::PeerSync& sync) {
  if (block_bits == 0 || secret.size() * 8 % block_bits != 0) fail(ErrorCode::BadSize, "relay size not a multiple of the block size");
  const std::size_t blocks = secret.size() * 8 / block_bits;
  RelayWireMessage m{hop, node(), next, link_id, {}, {}, {}};
  Bytes pad;
  try {
    for (std::size_t i = 0; i < blocks; ++i) {
      auto rec = store_.reserve({next, block_bits, std::nullopt, link_id});
      m.hop_key_ids.push_back(rec.ppk_id);
      sync.claim(next, rec.ppk_id, store_.now());
      pad.insert(pad.end(), rec.ppk.begin(), rec.ppk.end());
    }
  } catch (...) {
    for (const auto& id : m.hop_key_ids) {
      store_.discard(id);
      sync.discard(next, id);
    }
    throw;
  }
  for (const auto& id : m.hop_key_ids) store_.consume(id);
  m.payload = xor_bytes(secret, pad);
  m.tag = relay_tag(pad, m.payload, hop);
  return m;
}

Bytes Agent::unwrap(const RelayWireMessage& message) {
  if (message.to != node()) fail(ErrorCode::UnknownPeer, "relay message addressed to " + message.to.value);
  Bytes pad;
  for (const auto& id : message.hop_key_ids) {
    auto rec = store_.fetch_by_id(id);
    pad.insert(pad.end(), rec.ppk.begin(), rec.ppk.end());
  }
  if (pad.size() != message.payload.size()) fail(ErrorCode::BadSize, "hop key length differs from payload");
  if (!crypto::constant_time_equal(relay_tag(pad, message.payload, message.hop), message.tag))
    fail(ErrorCode::AuthFailure, "relay tag mismatch on " + message.link_id);
  return xor_bytes(message.payload, pad);
}

json Agent::link_report(const std::string& link_id, qkd::LinkStatus status, SimTime at) const {
  std::uint64_t bits = store_.has_source(link_id) ? store_.buffer_level(link_id).available_bits : 0;
  return json{{"type", "report"},
              {"node", node().value},
              {"link", link_id},
              {"status", std::string(qkd::to_string(status))},
              {"buffer_bits", bits},
              {"at_us", at.count()}};
}

}  // namespace qsvpn::sdn
