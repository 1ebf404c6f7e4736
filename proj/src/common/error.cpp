#include "qsvpn/common/error.hpp"

namespace qsvpn {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DuplicateKeyId: return "DuplicateKeyId";
    case ErrorCode::MalformedBlock: return "MalformedBlock";
    case ErrorCode::InsufficientKeyMaterial: return "InsufficientKeyMaterial";
    case ErrorCode::NoSuchPair: return "NoSuchPair";
    case ErrorCode::UnknownPpkId: return "UnknownPpkId";
    case ErrorCode::KeyExpired: return "KeyExpired";
    case ErrorCode::KeyAlreadyConsumed: return "KeyAlreadyConsumed";
    case ErrorCode::UnknownSource: return "UnknownSource";
    case ErrorCode::LinkUnknown: return "LinkUnknown";
    case ErrorCode::AlreadyStarted: return "AlreadyStarted";
    case ErrorCode::BadSize: return "BadSize";
    case ErrorCode::UnknownPeer: return "UnknownPeer";
    case ErrorCode::NoKeySourceForPair: return "NoKeySourceForPair";
    case ErrorCode::ClosedSession: return "ClosedSession";
    case ErrorCode::OutOfOrderIndex: return "OutOfOrderIndex";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::UnknownParams: return "UnknownParams";
    case ErrorCode::MalformedKey: return "MalformedKey";
    case ErrorCode::MalformedCiphertext: return "MalformedCiphertext";
    case ErrorCode::ChannelDown: return "ChannelDown";
    case ErrorCode::AuthFailure: return "AuthFailure";
    case ErrorCode::KemFailure: return "KemFailure";
    case ErrorCode::BadLength: return "BadLength";
    case ErrorCode::DuplicateNode: return "DuplicateNode";
    case ErrorCode::InvalidDescriptor: return "InvalidDescriptor";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::UnknownLink: return "UnknownLink";
    case ErrorCode::NoPathAvailable: return "NoPathAvailable";
    case ErrorCode::NodeUnreachable: return "NodeUnreachable";
    case ErrorCode::NoKeyAvailable: return "NoKeyAvailable";
    case ErrorCode::SyncTimeout: return "SyncTimeout";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::TransportDown: return "TransportDown";
    case ErrorCode::BadPpk: return "BadPpk";
    case ErrorCode::PpkIdUnknownAtResponder: return "PpkIdUnknownAtResponder";
    case ErrorCode::HubUnreachable: return "HubUnreachable";
    case ErrorCode::UnknownSpoke: return "UnknownSpoke";
    case ErrorCode::NoRoute: return "NoRoute";
    case ErrorCode::DecryptFailure: return "DecryptFailure";
    case ErrorCode::ReplayedSequence: return "ReplayedSequence";
    case ErrorCode::SaNotReady: return "SaNotReady";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::DisconnectedTopology: return "DisconnectedTopology";
    case ErrorCode::LinkDown: return "LinkDown";
    case ErrorCode::ScenarioPanic: return "ScenarioPanic";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

std::optional<ErrorCode> error_code_from_string(std::string_view name) noexcept {
  for (int i = 0; i <= static_cast<int>(ErrorCode::IoError); ++i) {
    auto code = static_cast<ErrorCode>(i);
    if (to_string(code) == name) return code;
  }
  return std::nullopt;
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(detail.empty() ? std::string(to_string(code))
                                        : std::string(to_string(code)) + ": " + detail),
      code_(code) {}

void fail(ErrorCode code, const std::string& detail) { throw Error(code, detail); }

}  // namespace qsvpn
