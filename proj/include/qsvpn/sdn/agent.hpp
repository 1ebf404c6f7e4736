#pragma once

#include <mutex>

#include "qsvpn/common/rng.hpp"
#include "qsvpn/sdn/types.hpp"

namespace qsvpn::sdn {

/// Local control element of one trusted node: owns the node's key store
/// and executes relay steps on the controller's behalf.
class Agent {
 public:
  Agent(NodeDescriptor descriptor, keystore::KeyStore& store, std::uint64_t seed = 0);

  const NodeId& node() const noexcept { return descriptor_.node_id; }
  const NodeDescriptor& descriptor() const noexcept { return descriptor_; }
  keystore::KeyStore& store() noexcept { return store_; }
  const keystore::KeyStore& store() const noexcept { return store_; }

  void set_reachable(bool up);
  bool reachable() const;

  // Fresh end-to-end key material at a relay origin.
  Bytes fresh_key(std::size_t octets);

  // Wraps `secret` for the next hop: draws hop-key blocks from `link_id`
  // (shared with `next`), claims them at the neighbour through `claim`,
  // and returns the wire message.
  RelayWireMessage wrap(std::size_t hop, const std::string& link_id, const NodeId& next, ByteView secret,
                        std::size_t block_bits, keystore::PeerSync& sync);
  // Recovers the secret from a wire message using this node's copy of the
  // hop key; throws AuthFailure if the tag does not verify.
  Bytes unwrap(const RelayWireMessage& message);

  // Report for the controller: link id -> available bits toward the peer.
  json link_report(const std::string& link_id, qkd::LinkStatus status, SimTime at) const;

 private:
  NodeDescriptor descriptor_;
  keystore::KeyStore& store_;
  mutable std::mutex mu_;
  bool reachable_ = true;
  DeterministicRng rng_;
};

// Tag over a relay payload; exposed for independent verification in tests.
Bytes relay_tag(ByteView hop_key, ByteView payload, std::size_t hop);

}  // namespace qsvpn::sdn
