#include "qsvpn/ike/key_schedule.hpp"

#include "qsvpn/common/crypto.hpp"
#include "qsvpn/common/error.hpp"
#include "qsvpn/kem/kdf.hpp"

namespace qsvpn::ike {

namespace {

Bytes spi_bytes(std::uint64_t spi_i, std::uint64_t spi_r) {
  Bytes out;
  append_u64_be(out, spi_i);
  append_u64_be(out, spi_r);
  return out;
}

}  // namespace

Bytes skeyseed(ByteView ni, ByteView nr, ByteView dh_shared) {
  return crypto::hmac_sha512(concat({ni, nr}), dh_shared);
}

Bytes derive_sk_d_prime(ByteView seed, ByteView ni, ByteView nr, std::uint64_t spi_i, std::uint64_t spi_r) {
  Bytes spis = spi_bytes(spi_i, spi_r);
  return crypto::prf_plus(seed, concat({ni, nr, spis}), kSkDSize);
}

Bytes mix_ppk(ByteView ppk, ByteView sk_d_prime) {
  if (ppk.size() < kMinPpkOctets)
    fail(ErrorCode::BadPpk, "PPK of " + std::to_string(ppk.size()) + " octets, need at least 16");
  return crypto::hmac_sha512(ppk, sk_d_prime);
}

KeySchedule build_key_schedule(ByteView dh_shared, ByteView ni, ByteView nr, std::uint64_t spi_i, std::uint64_t spi_r,
                               const std::optional<Bytes>& ppk, std::string dh_group) {
  KeySchedule ks;
  ks.dh_shared.assign(dh_shared.begin(), dh_shared.end());
  ks.sk_d_prime = derive_sk_d_prime(skeyseed(ni, nr, dh_shared), ni, nr, spi_i, spi_r);
  ks.ppk = ppk;
  ks.sk_d = ppk ? mix_ppk(*ppk, ks.sk_d_prime) : ks.sk_d_prime;
  ks.dh_group = std::move(dh_group);
  return ks;
}

Bytes auth_tag(ByteView psk, const std::string& label, ByteView ni, ByteView nr, std::uint64_t spi_i,
               std::uint64_t spi_r, ByteView sk_d) {
  Bytes confirm = crypto::hmac_sha512(sk_d, to_bytes("ppk-confirm"));
  Bytes spis = spi_bytes(spi_i, spi_r);
  Bytes l = to_bytes(label);
  return crypto::hmac_sha512(psk, concat({l, ni, nr, spis, confirm}));
}

EspKeys derive_esp_keys(ByteView sk_d, std::uint64_t spi_i, std::uint64_t spi_r) {
  Bytes spis = spi_bytes(spi_i, spi_r);
  Bytes label = to_bytes("QSM-ESP-v1");
  Bytes km = kem::kdf_expand(sk_d, concat({label, spis}), (32 + 4) * 2 * 8);
  auto take = [&](std::size_t off, std::size_t n) { return Bytes(km.begin() + off, km.begin() + off + n); };
  return {{take(0, 32), take(32, 4)}, {take(36, 32), take(68, 4)}};
}

}  // namespace qsvpn::ike
