#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace qsvpn {

// One code space shared by every module; the wire schemas map these to
// status codes.
enum class ErrorCode {
  // keystore
  DuplicateKeyId,
  MalformedBlock,
  InsufficientKeyMaterial,
  NoSuchPair,
  UnknownPpkId,
  KeyExpired,
  KeyAlreadyConsumed,
  UnknownSource,
  // qkd-sim
  LinkUnknown,
  AlreadyStarted,
  // etsi-delivery
  BadSize,
  UnknownPeer,
  NoKeySourceForPair,
  ClosedSession,
  OutOfOrderIndex,
  UnknownSession,
  // pqc-kem
  UnknownParams,
  MalformedKey,
  MalformedCiphertext,
  ChannelDown,
  AuthFailure,
  KemFailure,
  BadLength,
  // sdn-control
  DuplicateNode,
  InvalidDescriptor,
  UnknownNode,
  UnknownLink,
  NoPathAvailable,
  NodeUnreachable,
  // skip
  NoKeyAvailable,
  SyncTimeout,
  // ike-dmvpn
  Timeout,
  TransportDown,
  BadPpk,
  PpkIdUnknownAtResponder,
  HubUnreachable,
  UnknownSpoke,
  NoRoute,
  DecryptFailure,
  ReplayedSequence,
  SaNotReady,
  // harness
  SchemaError,
  DisconnectedTopology,
  LinkDown,
  ScenarioPanic,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;
std::optional<ErrorCode> error_code_from_string(std::string_view name) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& detail = {});

}  // namespace qsvpn
