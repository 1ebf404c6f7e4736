#pragma once

#include <cstddef>

#include "qsvpn/common/bytes.hpp"

// Thin wrappers over OpenSSL libcrypto. Everything here throws qsvpn::Error
// on library failure; none of it is specific to this project.
namespace qsvpn::crypto {

inline constexpr std::size_t kSha512Size = 64;

Bytes sha512(ByteView data);
Bytes hmac_sha512(ByteView key, ByteView message);

// IKEv2 prf+ over HMAC-SHA-512: T1 = prf(K, S|0x01), Tn = prf(K, Tn-1|S|n).
Bytes prf_plus(ByteView key, ByteView seed, std::size_t out_len);

bool constant_time_equal(ByteView a, ByteView b);

inline constexpr std::size_t kAesGcmKeySize = 32;
inline constexpr std::size_t kAesGcmNonceSize = 12;
inline constexpr std::size_t kAesGcmTagSize = 16;

// Returns ciphertext || tag.
Bytes aes256_gcm_seal(ByteView key, ByteView nonce, ByteView aad, ByteView plaintext);
// Throws Error(DecryptFailure) when the tag does not verify.
Bytes aes256_gcm_open(ByteView key, ByteView nonce, ByteView aad, ByteView sealed);

// NIST P-384 ECDH. Private keys are 48-octet big-endian scalars, public keys
// are 97-octet uncompressed points.
struct P384KeyPair {
  Bytes private_scalar;
  Bytes public_point;
};
inline constexpr std::size_t kP384ScalarSize = 48;
inline constexpr std::size_t kP384PointSize = 97;

P384KeyPair p384_generate();
// Returns the 48-octet x coordinate of the shared point.
Bytes p384_derive(ByteView private_scalar, ByteView peer_public_point);

}  // namespace qsvpn::crypto
