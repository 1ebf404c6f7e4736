#include "qsvpn/common/crypto.hpp"

#include <memory>
#include <openssl/core_names.h>
#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/param_build.h>
#include <openssl/sha.h>

#include "qsvpn/common/error.hpp"

namespace qsvpn::crypto {

namespace {

struct CtxFree {
  void operator()(EVP_CIPHER_CTX* p) const { EVP_CIPHER_CTX_free(p); }
  void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
  void operator()(EVP_PKEY_CTX* p) const { EVP_PKEY_CTX_free(p); }
  void operator()(OSSL_PARAM_BLD* p) const { OSSL_PARAM_BLD_free(p); }
  void operator()(OSSL_PARAM* p) const { OSSL_PARAM_free(p); }
  void operator()(BIGNUM* p) const { BN_free(p); }
};
template <typename T>
using Owned = std::unique_ptr<T, CtxFree>;

void check(int rc, const char* what) {
  if (rc != 1) fail(ErrorCode::KemFailure, std::string("openssl: ") + what);
}

}  // namespace

Bytes sha512(ByteView data) {
  Bytes out(kSha512Size);
  SHA512(data.data(), data.size(), out.data());
  return out;
}

Bytes hmac_sha512(ByteView key, ByteView message) {
  Bytes out(kSha512Size);
  unsigned int len = 0;
  // HMAC() with a null key pointer and zero length is rejected; use a
  // dummy non-null pointer for empty keys.
  static const unsigned char kEmpty = 0;
  const unsigned char* key_ptr = key.empty() ? &kEmpty : key.data();
  if (HMAC(EVP_sha512(), key_ptr, static_cast<int>(key.size()), message.data(), message.size(), out.data(),
           &len) == nullptr) {
    fail(ErrorCode::KemFailure, "HMAC-SHA-512 failed");
  }
  return out;
}

Bytes prf_plus(ByteView key, ByteView seed, std::size_t out_len) {
  Bytes out;
  Bytes prev;
  for (std::uint32_t n = 1; out.size() < out_len; ++n) {
    if (n > 255) fail(ErrorCode::BadLength, "prf+ output too long");
    Bytes msg = prev;
    msg.insert(msg.end(), seed.begin(), seed.end());
    msg.push_back(static_cast<std::uint8_t>(n));
    prev = hmac_sha512(key, msg);
    out.insert(out.end(), prev.begin(), prev.end());
  }
  out.resize(out_len);
  return out;
}

bool constant_time_equal(ByteView a, ByteView b) {
  return a.size() == b.size() && CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

Bytes aes256_gcm_seal(ByteView key, ByteView nonce, ByteView aad, ByteView plaintext) {
  if (key.size() != kAesGcmKeySize || nonce.size() != kAesGcmNonceSize) fail(ErrorCode::BadLength, "gcm key/nonce");
  Owned<EVP_CIPHER_CTX> ctx(EVP_CIPHER_CTX_new());
  check(EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()), "gcm init");
  int len = 0;
  if (!aad.empty()) check(EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())), "aad");
  Bytes out(plaintext.size() + kAesGcmTagSize);
  int written = 0;
  if (!plaintext.empty()) {
    check(EVP_EncryptUpdate(ctx.get(), out.data(), &len, plaintext.data(), static_cast<int>(plaintext.size())),
          "gcm update");
    written = len;
  }
  check(EVP_EncryptFinal_ex(ctx.get(), out.data() + written, &len), "gcm final");
  check(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kAesGcmTagSize, out.data() + plaintext.size()), "tag");
  return out;
}

Bytes aes256_gcm_open(ByteView key, ByteView nonce, ByteView aad, ByteView sealed) {
  if (key.size() != kAesGcmKeySize || nonce.size() != kAesGcmNonceSize) fail(ErrorCode::BadLength, "gcm key/nonce");
  if (sealed.size() < kAesGcmTagSize) fail(ErrorCode::DecryptFailure, "ciphertext shorter than tag");
  std::size_t body = sealed.size() - kAesGcmTagSize;
  Owned<EVP_CIPHER_CTX> ctx(EVP_CIPHER_CTX_new());
  check(EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()), "gcm init");
  int len = 0;
  if (!aad.empty()) check(EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())), "aad");
  Bytes out(body);
  int written = 0;
  if (body > 0) {
    check(EVP_DecryptUpdate(ctx.get(), out.data(), &len, sealed.data(), static_cast<int>(body)), "gcm update");
    written = len;
  }
  Bytes tag(sealed.begin() + static_cast<std::ptrdiff_t>(body), sealed.end());
  check(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kAesGcmTagSize, tag.data()), "set tag");
  if (EVP_DecryptFinal_ex(ctx.get(), out.data() + written, &len) != 1) {
    fail(ErrorCode::DecryptFailure, "GCM tag mismatch");
  }
  return out;
}

P384KeyPair p384_generate() {
  Owned<EVP_PKEY> key(EVP_PKEY_Q_keygen(nullptr, nullptr, "EC", "P-384"));
  if (!key) fail(ErrorCode::KemFailure, "P-384 keygen");
  BIGNUM* priv_raw = nullptr;
  check(EVP_PKEY_get_bn_param(key.get(), OSSL_PKEY_PARAM_PRIV_KEY, &priv_raw), "get priv");
  Owned<BIGNUM> priv(priv_raw);
  P384KeyPair kp;
  kp.private_scalar.resize(kP384ScalarSize);
  if (BN_bn2binpad(priv.get(), kp.private_scalar.data(), kP384ScalarSize) != static_cast<int>(kP384ScalarSize)) {
    fail(ErrorCode::KemFailure, "priv encode");
  }
  kp.public_point.resize(kP384PointSize);
  std::size_t len = 0;
  check(EVP_PKEY_set_utf8_string_param(key.get(), OSSL_PKEY_PARAM_EC_POINT_CONVERSION_FORMAT, "uncompressed"),
        "point format");
  check(EVP_PKEY_get_octet_string_param(key.get(), OSSL_PKEY_PARAM_ENCODED_PUBLIC_KEY, kp.public_point.data(),
                                        kp.public_point.size(), &len),
        "get pub");
  if (len != kP384PointSize) fail(ErrorCode::KemFailure, "unexpected point encoding");
  return kp;
}

namespace {

Owned<EVP_PKEY> import_key(const Bytes* priv, ByteView pub) {
  Owned<OSSL_PARAM_BLD> bld(OSSL_PARAM_BLD_new());
  check(OSSL_PARAM_BLD_push_utf8_string(bld.get(), OSSL_PKEY_PARAM_GROUP_NAME, "P-384", 0), "group");
  Owned<BIGNUM> bn;
  if (priv != nullptr) {
    bn.reset(BN_bin2bn(priv->data(), static_cast<int>(priv->size()), nullptr));
    check(OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_PRIV_KEY, bn.get()), "priv");
  }
  if (!pub.empty()) {
    check(OSSL_PARAM_BLD_push_octet_string(bld.get(), OSSL_PKEY_PARAM_PUB_KEY, pub.data(), pub.size()), "pub");
  }
  Owned<OSSL_PARAM> params(OSSL_PARAM_BLD_to_param(bld.get()));
  Owned<EVP_PKEY_CTX> ctx(EVP_PKEY_CTX_new_from_name(nullptr, "EC", nullptr));
  check(EVP_PKEY_fromdata_init(ctx.get()), "fromdata init");
  EVP_PKEY* raw = nullptr;
  int selection = priv != nullptr ? EVP_PKEY_KEYPAIR : EVP_PKEY_PUBLIC_KEY;
  if (EVP_PKEY_fromdata(ctx.get(), &raw, selection, params.get()) != 1) {
    fail(ErrorCode::MalformedKey, "P-384 key import");
  }
  return Owned<EVP_PKEY>(raw);
}

}  // namespace

Bytes p384_derive(ByteView private_scalar, ByteView peer_public_point) {
  if (private_scalar.size() != kP384ScalarSize) fail(ErrorCode::MalformedKey, "P-384 scalar length");
  if (peer_public_point.size() != kP384PointSize) fail(ErrorCode::MalformedKey, "P-384 point length");
  Bytes priv(private_scalar.begin(), private_scalar.end());
  auto mine = import_key(&priv, {});
  auto peer = import_key(nullptr, peer_public_point);
  Owned<EVP_PKEY_CTX> ctx(EVP_PKEY_CTX_new(mine.get(), nullptr));
  check(EVP_PKEY_derive_init(ctx.get()), "derive init");
  if (EVP_PKEY_derive_set_peer(ctx.get(), peer.get()) != 1) fail(ErrorCode::MalformedKey, "P-384 peer point");
  std::size_t len = 0;
  check(EVP_PKEY_derive(ctx.get(), nullptr, &len), "derive len");
  Bytes out(len);
  check(EVP_PKEY_derive(ctx.get(), out.data(), &len), "derive");
  out.resize(len);
  return out;
}

}  // namespace qsvpn::crypto
