#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qsvpn/common/bytes.hpp"
#include "qsvpn/common/sim_time.hpp"
#include "qsvpn/keystore/keystore.hpp"

namespace qsvpn::qkd {

enum class LinkStatus { Up, Degraded, Down };
enum class DegradationKind { NoiseIncrease, FiberCut, Recovery };

std::string_view to_string(LinkStatus s) noexcept;
std::string_view to_string(DegradationKind k) noexcept;
LinkStatus link_status_from_string(std::string_view s);
DegradationKind degradation_from_string(std::string_view s);

// Default secret key rates; DV and CV differ only in these and the tag.
inline constexpr double kDefaultCvRateBps = 2000.0;
inline constexpr double kDefaultDvRateBps = 1000.0;
inline constexpr std::uint32_t kDefaultBlockBits = 256;

struct QkdLinkProfile {
  std::string link_id;
  NodeId a;
  NodeId b;
  keystore::Technology technology = keystore::Technology::DvQkd;
  double skr_bps = kDefaultDvRateBps;
  std::uint32_t block_size_bits = kDefaultBlockBits;
  LinkStatus status = LinkStatus::Up;
  double degraded_rate_factor = 1.0;
  SimDuration key_lifetime = keystore::kDefaultKeyLifetime;

  double effective_rate_bps() const;
};

struct DegradationEvent {
  std::string link_id;
  DegradationKind kind = DegradationKind::FiberCut;
  SimTime at{0};
  double rate_factor = 1.0;  // NoiseIncrease only
};

// Queued toward the SDN controller whenever a link changes state.
struct LinkStateReport {
  std::string link_id;
  LinkStatus status = LinkStatus::Up;
  double effective_rate_bps = 0.0;
  SimTime at{0};
};

/// Point-to-point QKD link pairs. Each link integrates its effective rate
/// into a bit accumulator and emits whole blocks, delivering byte-identical
/// copies to both endpoint stores. Key bytes are a pure function of
/// (seed, link id, block index).
class QkdNetwork {
 public:
  void add_link(QkdLinkProfile profile, keystore::KeyStore& store_a, keystore::KeyStore& store_b);

  void seed_stream(const std::string& link_id, std::uint64_t seed);

  // Advances the link clock by dt, applying any scheduled events that fall
  // inside the window at their exact instant.
  std::vector<keystore::KeyBlock> advance(const std::string& link_id, SimDuration dt);
  // Advances every link to absolute time `to`.
  std::vector<keystore::KeyBlock> advance_all_to(SimTime to);

  // Applies the event now if it is not in the link's future, else queues
  // it for piecewise integration. Returns the status the event produces.
  LinkStatus inject_event(const DegradationEvent& event);

  std::vector<LinkStateReport> drain_reports();

  const QkdLinkProfile& profile(const std::string& link_id) const;
  SimTime link_time(const std::string& link_id) const;
  std::uint64_t emitted_bits(const std::string& link_id) const;
  std::uint64_t emitted_blocks(const std::string& link_id) const;
  std::vector<std::string> link_ids() const;
  bool has_link(const std::string& link_id) const { return links_.count(link_id) != 0; }

  // Key material for a given block index, as the generator would produce it.
  Bytes block_bytes(const std::string& link_id, std::uint64_t index) const;

 private:
  struct Link {
    QkdLinkProfile profile;
    keystore::KeyStore* store_a = nullptr;
    keystore::KeyStore* store_b = nullptr;
    std::uint64_t seed = 0;
    bool started = false;
    SimTime now{0};
    // Accumulator in nano-bits so fractional rates integrate exactly.
    std::uint64_t acc_nano_bits = 0;
    std::uint64_t next_index = 0;
    std::uint64_t emitted_bits = 0;
    std::uint64_t tag = 0;
    std::deque<DegradationEvent> pending;  // sorted by time
  };

  Link& get(const std::string& link_id);
  const Link& get(const std::string& link_id) const;
  void integrate(Link& link, SimDuration dt, std::vector<keystore::KeyBlock>& out);
  void emit(Link& link, SimTime created, std::vector<keystore::KeyBlock>& out);
  LinkStatus apply(Link& link, const DegradationEvent& event);
  Bytes generate(const Link& link, std::uint64_t index) const;

  std::map<std::string, Link> links_;
  std::vector<LinkStateReport> reports_;
};

}  // namespace qsvpn::qkd
