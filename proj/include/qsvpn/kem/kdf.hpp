#pragma once

#include <cstddef>
#include <string_view>

#include "qsvpn/common/bytes.hpp"

namespace qsvpn::kem {

inline constexpr std::string_view kKmsKdfLabel = "QSM-KMS-v1";

// Counter-mode expansion: T(i) = HMAC-SHA-512(secret, context || be32(i)),
// i = 1, 2, ...; output truncated to out_bits. out_bits must be a positive
// multiple of 8.
Bytes kdf_expand(ByteView secret, ByteView context, std::size_t out_bits);

// "QSM-KMS-v1" || 0x00 || initiator || 0x00 || responder
Bytes kms_context(const NodeId& initiator, const NodeId& responder);

}  // namespace qsvpn::kem
