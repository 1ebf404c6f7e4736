#include "qsvpn/etsi/wire.hpp"

namespace qsvpn::etsi {

int http_status_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnknownPeer:
    case ErrorCode::AuthFailure:
      return 401;
    case ErrorCode::UnknownSession:
      return 404;
    case ErrorCode::InsufficientKeyMaterial:
    case ErrorCode::NoKeySourceForPair:
      return 503;
    default:
      return 400;
  }
}

WireResponse error_response(const Error& e) {
  return {http_status_for(e.code()),
          json{{"message", e.what()}, {"error", std::string(to_string(e.code()))}, {"schema_version", kWireSchemaVersion}}};
}

void raise_if_error(const WireResponse& response) {
  if (response.status >= 200 && response.status < 300) return;
  const json& b = response.body;
  std::string message = b.is_object() ? b.value("message", std::string{}) : std::string{};
  if (b.is_object() && b.contains("error") && b["error"].is_string()) {
    if (auto code = error_code_from_string(b["error"].get<std::string>())) {
      std::string prefix = std::string(to_string(*code)) + ": ";
      if (message.rfind(prefix, 0) == 0) message.erase(0, prefix.size());
      throw Error(*code, message == to_string(*code) ? std::string{} : message);
    }
  }
  fail(ErrorCode::IoError, "HTTP " + std::to_string(response.status) + " " + message);
}

}  // namespace qsvpn::etsi
