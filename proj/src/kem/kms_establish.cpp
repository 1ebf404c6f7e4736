#include "qsvpn/kem/kms_establish.hpp"

#include "qsvpn/common/crypto.hpp"
#include "qsvpn/common/error.hpp"
#include "qsvpn/kem/kdf.hpp"

namespace qsvpn::kem {

namespace {

constexpr std::size_t kTagSize = 32;

Bytes frame_tag(ByteView credential, const ChannelFrame& f) {
  Bytes msg = to_bytes("kms-frame");
  for (const std::string* s : {&f.from.value, &f.to.value, &f.kind}) {
    msg.push_back(0);
    msg.insert(msg.end(), s->begin(), s->end());
  }
  msg.push_back(0);
  msg.insert(msg.end(), f.payload.begin(), f.payload.end());
  Bytes tag = crypto::hmac_sha512(credential, msg);
  tag.resize(kTagSize);
  return tag;
}

}  // namespace

KmsControlChannel::KmsControlChannel(NodeId a, NodeId b, Bytes credential_a, Bytes credential_b)
    : pair_(a, b), credential_a_(std::move(credential_a)), credential_b_(std::move(credential_b)) {
  if (pair_.first != a) std::swap(credential_a_, credential_b_);
}

KmsControlChannel::KmsControlChannel(NodeId a, NodeId b, Bytes shared_credential)
    : KmsControlChannel(std::move(a), std::move(b), shared_credential, shared_credential) {}

void KmsControlChannel::sever_after(std::size_t frames) {
  std::lock_guard lock(mu_);
  budget_ = frames;
}

void KmsControlChannel::restore() {
  std::lock_guard lock(mu_);
  budget_.reset();
}

bool KmsControlChannel::is_up() const {
  std::lock_guard lock(mu_);
  return !budget_ || *budget_ > 0;
}

void KmsControlChannel::corrupt_next_frame() {
  std::lock_guard lock(mu_);
  corrupt_next_ = true;
}

const Bytes& KmsControlChannel::credential_of(const NodeId& node) const {
  if (node == pair_.first) return credential_a_;
  if (node == pair_.second) return credential_b_;
  fail(ErrorCode::UnknownPeer, node.value + " is not an end of " + pair_.label());
}

Bytes KmsControlChannel::deliver(const NodeId& from, std::string kind, ByteView payload) {
  std::lock_guard lock(mu_);
  if (!pair_.contains(from)) fail(ErrorCode::UnknownPeer, from.value);
  if (budget_) {
    if (*budget_ == 0) fail(ErrorCode::ChannelDown, "kms channel " + pair_.label());
    --*budget_;
  }
  ChannelFrame f{from, pair_.other(from), std::move(kind), Bytes(payload.begin(), payload.end()), {}};
  f.tag = frame_tag(credential_of(from), f);
  if (corrupt_next_ && !f.payload.empty()) {
    f.payload[0] ^= 0x01;
    corrupt_next_ = false;
  }
  capture_.push_back(f);
  if (!crypto::constant_time_equal(frame_tag(credential_of(f.to), f), f.tag))
    fail(ErrorCode::AuthFailure, "kms frame tag mismatch on " + pair_.label());
  return f.payload;
}

std::vector<ChannelFrame> KmsControlChannel::capture() const {
  std::lock_guard lock(mu_);
  return capture_;
}

std::size_t KmsControlChannel::frames_delivered() const {
  std::lock_guard lock(mu_);
  return capture_.size();
}

KmsKeyEstablisher::KmsKeyEstablisher(KmsEndpoint initiator, KmsEndpoint responder, KmsControlChannel& channel,
                                     KemProvider& provider, SimDuration key_lifetime)
    : initiator_(std::move(initiator)),
      responder_(std::move(responder)),
      channel_(channel),
      provider_(provider),
      lifetime_(key_lifetime),
      source_id_(source_id_for(NodePair(initiator_.node, responder_.node))) {
  if (!initiator_.store || !responder_.store) fail(ErrorCode::UnknownPeer, "kms endpoint without a store");
  if (initiator_.node == responder_.node) fail(ErrorCode::UnknownPeer, "kms pair needs two distinct nodes");
  if (channel_.pair() != NodePair(initiator_.node, responder_.node))
    fail(ErrorCode::UnknownPeer, "control channel does not join " + source_id_);
}

std::string KmsKeyEstablisher::source_id_for(const NodePair& pair) { return "pqc:" + pair.label(); }

KmsEstablishment KmsKeyEstablisher::establish(std::size_t out_bits, SimTime now) {
  if (out_bits == 0 || out_bits % 8 != 0) fail(ErrorCode::BadLength, "out_bits must be a positive multiple of 8");
  std::lock_guard lock(mu_);

  // The responder generates the key pair and sends ek; the initiator
  // encapsulates and returns ct.
  KemKeyPair kp = provider_.keygen();
  Bytes ek = channel_.deliver(responder_.node, "kem-ek", kp.ek);
  Encapsulation enc;
  try {
    enc = provider_.encaps(ek);
  } catch (const Error& e) {
    fail(ErrorCode::KemFailure, std::string("encaps: ") + e.what());
  }
  Bytes ct = channel_.deliver(initiator_.node, "kem-ct", enc.ct);
  Bytes ss;
  try {
    ss = provider_.decaps(kp.dk, ct);
  } catch (const Error& e) {
    fail(ErrorCode::KemFailure, std::string("decaps: ") + e.what());
  }

  // Key confirmation: the responder proves it derived the same secret.
  Bytes confirm = crypto::hmac_sha512(ss, to_bytes("kms-confirm"));
  Bytes received = channel_.deliver(responder_.node, "kem-confirm", confirm);
  if (!crypto::constant_time_equal(received, crypto::hmac_sha512(enc.ss, to_bytes("kms-confirm"))))
    fail(ErrorCode::KemFailure, "shared secrets disagree on " + source_id_);

  Bytes material = kdf_expand(enc.ss, kms_context(initiator_.node, responder_.node), out_bits);
  const std::uint64_t counter = next_counter_++;
  KeyId id(source_tag(source_id_), counter);

  keystore::KeyBlock a{id, material, source_id_, responder_.node, keystore::Technology::PqcKem, now, now + lifetime_};
  keystore::KeyBlock b = a;
  b.peer = initiator_.node;

  initiator_.store->ingest(a);
  try {
    responder_.store->ingest(b);
  } catch (...) {
    initiator_.store->discard(id);
    throw;
  }

  KemSession session{source_id_ + "#" + std::to_string(counter), NodePair(initiator_.node, responder_.node),
                     std::move(enc.ss), now};
  return {std::move(session), std::move(a), std::move(b)};
}

std::uint64_t KmsKeyEstablisher::sessions_completed() const {
  std::lock_guard lock(mu_);
  return next_counter_ - 1;
}

KmsEstablishment establish_kms_key(KmsKeyEstablisher& establisher, std::size_t out_bits, SimTime now) {
  return establisher.establish(out_bits, now);
}

}  // namespace qsvpn::kem
