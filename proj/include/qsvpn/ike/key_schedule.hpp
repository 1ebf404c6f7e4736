#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "qsvpn/common/bytes.hpp"

namespace qsvpn::ike {

inline constexpr std::size_t kSkDSize = 64;
inline constexpr std::size_t kMinPpkOctets = 16;
inline constexpr const char* kPrfName = "HMAC-SHA-512";
inline constexpr const char* kEncName = "AES-GCM-256";

struct KeySchedule {
  Bytes dh_shared;
  Bytes sk_d_prime;
  std::optional<Bytes> ppk;
  Bytes sk_d;
  std::string prf_name = kPrfName;
  std::string enc_name = kEncName;
  std::string dh_group;
};

// SKEYSEED = prf(Ni | Nr, g^ir)
Bytes skeyseed(ByteView ni, ByteView nr, ByteView dh_shared);
// SK'd: the first 64 octets of prf+(SKEYSEED, Ni | Nr | SPIi | SPIr).
Bytes derive_sk_d_prime(ByteView skeyseed, ByteView ni, ByteView nr, std::uint64_t spi_i, std::uint64_t spi_r);
// SK_d = prf(PPK, SK'd). Throws BadPpk below 16 octets.
Bytes mix_ppk(ByteView ppk, ByteView sk_d_prime);

// Runs the whole schedule; without a PPK sk_d equals sk_d_prime.
KeySchedule build_key_schedule(ByteView dh_shared, ByteView ni, ByteView nr, std::uint64_t spi_i, std::uint64_t spi_r,
                               const std::optional<Bytes>& ppk, std::string dh_group);

// AUTH payload: prf(psk, label | Ni | Nr | SPIi | SPIr | prf(SK_d, "ppk-confirm")).
Bytes auth_tag(ByteView psk, const std::string& label, ByteView ni, ByteView nr, std::uint64_t spi_i,
               std::uint64_t spi_r, ByteView sk_d);

struct EspDirectionKeys {
  Bytes key;   // 32 octets
  Bytes salt;  // 4 octets
};

struct EspKeys {
  EspDirectionKeys i2r;
  EspDirectionKeys r2i;
};

// kdf_expand(SK_d, "QSM-ESP-v1" | SPIi | SPIr), split key/salt per direction.
EspKeys derive_esp_keys(ByteView sk_d, std::uint64_t spi_i, std::uint64_t spi_r);

}  // namespace qsvpn::ike
