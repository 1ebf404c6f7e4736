#include "qsvpn/kem/kdf.hpp"

#include "qsvpn/common/crypto.hpp"
#include "qsvpn/common/error.hpp"

namespace qsvpn::kem {

Bytes kdf_expand(ByteView secret, ByteView context, std::size_t out_bits) {
  if (out_bits == 0 || out_bits % 8 != 0) fail(ErrorCode::BadLength, "kdf output must be a positive multiple of 8 bits");
  const std::size_t out_len = out_bits / 8;
  Bytes out;
  out.reserve(out_len + crypto::kSha512Size);
  Bytes msg(context.begin(), context.end());
  const std::size_t prefix = msg.size();
  for (std::uint32_t i = 1; out.size() < out_len; ++i) {
    msg.resize(prefix);
    append_u32_be(msg, i);
    Bytes block = crypto::hmac_sha512(secret, msg);
    out.insert(out.end(), block.begin(), block.end());
  }
  out.resize(out_len);
  return out;
}

Bytes kms_context(const NodeId& initiator, const NodeId& responder) {
  Bytes ctx = to_bytes(kKmsKdfLabel);
  ctx.push_back(0);
  auto a = to_bytes(initiator.value);
  ctx.insert(ctx.end(), a.begin(), a.end());
  ctx.push_back(0);
  auto b = to_bytes(responder.value);
  ctx.insert(ctx.end(), b.begin(), b.end());
  return ctx;
}

}  // namespace qsvpn::kem
