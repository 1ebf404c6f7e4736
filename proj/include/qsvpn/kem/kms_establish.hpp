#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "qsvpn/common/bytes.hpp"
#include "qsvpn/common/sim_time.hpp"
#include "qsvpn/kem/kem.hpp"
#include "qsvpn/keystore/keystore.hpp"

namespace qsvpn::kem {

struct ChannelFrame {
  NodeId from;
  NodeId to;
  std::string kind;
  Bytes payload;
  Bytes tag;
};

/// Message channel between two KMS instances. Every frame carries an HMAC
/// tag under the sender's configured credential and is verified with the
/// receiver's; differing credentials therefore fail with AuthFailure.
class KmsControlChannel {
 public:
  KmsControlChannel(NodeId a, NodeId b, Bytes credential_a, Bytes credential_b);
  // Same credential configured at both ends.
  KmsControlChannel(NodeId a, NodeId b, Bytes shared_credential);

  const NodePair& pair() const noexcept { return pair_; }

  // Fault injection: the channel drops after `frames` more deliveries.
  void sever_after(std::size_t frames);
  void sever() { sever_after(0); }
  void restore();
  bool is_up() const;

  // Tamper hook: flip one bit in the payload of the next delivered frame.
  void corrupt_next_frame();

  // Returns the payload as accepted by the receiver.
  Bytes deliver(const NodeId& from, std::string kind, ByteView payload);

  std::vector<ChannelFrame> capture() const;
  std::size_t frames_delivered() const;

 private:
  const Bytes& credential_of(const NodeId& node) const;

  NodePair pair_;
  Bytes credential_a_;
  Bytes credential_b_;
  mutable std::mutex mu_;
  std::optional<std::size_t> budget_;
  bool corrupt_next_ = false;
  std::vector<ChannelFrame> capture_;
};

struct KemSession {
  std::string session_id;
  NodePair pair;
  Bytes shared_secret;
  SimTime established_at{0};
};

struct KmsEndpoint {
  NodeId node;
  keystore::KeyStore* store = nullptr;
};

struct KmsEstablishment {
  KemSession session;
  keystore::KeyBlock initiator_block;
  keystore::KeyBlock responder_block;
};

/// Establishes PQC key material between one KMS pair. Calls on one instance
/// are serialized; instances for distinct pairs are independent.
class KmsKeyEstablisher {
 public:
  KmsKeyEstablisher(KmsEndpoint initiator, KmsEndpoint responder, KmsControlChannel& channel, KemProvider& provider,
                    SimDuration key_lifetime = keystore::kDefaultKeyLifetime);

  // Source id under which both stores account the material, "pqc:<a>~<b>".
  const std::string& source_id() const noexcept { return source_id_; }
  static std::string source_id_for(const NodePair& pair);

  // ek transfer -> encaps -> ct transfer -> decaps -> KDF -> ingest at both
  // ends. Atomic: any failure leaves both stores untouched.
  KmsEstablishment establish(std::size_t out_bits, SimTime now);

  std::uint64_t sessions_completed() const;

 private:
  KmsEndpoint initiator_;
  KmsEndpoint responder_;
  KmsControlChannel& channel_;
  KemProvider& provider_;
  SimDuration lifetime_;
  std::string source_id_;
  mutable std::mutex mu_;
  std::uint64_t next_counter_ = 1;
};

// Free-function form of KmsKeyEstablisher::establish.
KmsEstablishment establish_kms_key(KmsKeyEstablisher& establisher, std::size_t out_bits, SimTime now);

}  // namespace qsvpn::kem
