#pragma once

#include <functional>
#include <string>

#include <json.hpp>

#include "qsvpn/common/bytes.hpp"
#include "qsvpn/common/error.hpp"

namespace qsvpn::etsi {

using json = nlohmann::json;

inline constexpr int kWireSchemaVersion = 1;

// One request/response record on the key-delivery wire. `caller` is the SAE
// issuing the request (carried in the X-SAE-ID header over HTTP).
struct WireRequest {
  std::string method;  // "GET" | "POST"
  std::string path;
  NodeId caller;
  json body = json::object();
};

struct WireResponse {
  int status = 200;
  json body = json::object();
};

using WireTransport = std::function<WireResponse(const WireRequest&)>;

// HTTP status used for an error code, and the error body
// {"message": ..., "error": "<code name>", "schema_version": 1}.
int http_status_for(ErrorCode code) noexcept;
WireResponse error_response(const Error& e);

// Re-raises the Error carried by a non-2xx response; no-op on success.
void raise_if_error(const WireResponse& response);

}  // namespace qsvpn::etsi
