#include "qsvpn/qkd/qkd_link.hpp"

#include <algorithm>
#include <cmath>

#include "qsvpn/common/crypto.hpp"
#include "qsvpn/common/error.hpp"

namespace qsvpn::qkd {

std::string_view to_string(LinkStatus s) noexcept {
  switch (s) {
    case LinkStatus::Up: return "UP";
    case LinkStatus::Degraded: return "DEGRADED";
    case LinkStatus::Down: return "DOWN";
  }
  return "?";
}

std::string_view to_string(DegradationKind k) noexcept {
  switch (k) {
    case DegradationKind::NoiseIncrease: return "NOISE_INCREASE";
    case DegradationKind::FiberCut: return "FIBER_CUT";
    case DegradationKind::Recovery: return "RECOVERY";
  }
  return "?";
}

LinkStatus link_status_from_string(std::string_view s) {
  if (s == "UP") return LinkStatus::Up;
  if (s == "DEGRADED") return LinkStatus::Degraded;
  if (s == "DOWN") return LinkStatus::Down;
  fail(ErrorCode::SchemaError, "unknown link status '" + std::string(s) + "'");
}

DegradationKind degradation_from_string(std::string_view s) {
  if (s == "NOISE_INCREASE") return DegradationKind::NoiseIncrease;
  if (s == "FIBER_CUT") return DegradationKind::FiberCut;
  if (s == "RECOVERY") return DegradationKind::Recovery;
  fail(ErrorCode::SchemaError, "unknown degradation kind '" + std::string(s) + "'");
}

double QkdLinkProfile::effective_rate_bps() const {
  switch (status) {
    case LinkStatus::Up: return skr_bps;
    case LinkStatus::Degraded: return skr_bps * degraded_rate_factor;
    case LinkStatus::Down: return 0.0;
  }
  return 0.0;
}

void QkdNetwork::add_link(QkdLinkProfile profile, keystore::KeyStore& store_a, keystore::KeyStore& store_b) {
  if (profile.skr_bps <= 0.0) fail(ErrorCode::SchemaError, "skr_bps must be positive");
  if (profile.block_size_bits == 0 || profile.block_size_bits % 8 != 0) {
    fail(ErrorCode::SchemaError, "block size must be a positive multiple of 8");
  }
  if (!(profile.degraded_rate_factor > 0.0 && profile.degraded_rate_factor <= 1.0)) {
    fail(ErrorCode::SchemaError, "degraded_rate_factor must be in (0,1]");
  }
  if (store_a.owner() != profile.a || store_b.owner() != profile.b) {
    fail(ErrorCode::SchemaError, "stores do not match link endpoints");
  }
  if (links_.count(profile.link_id) != 0) fail(ErrorCode::SchemaError, "duplicate link " + profile.link_id);
  Link link;
  link.tag = source_tag(profile.link_id);
  link.store_a = &store_a;
  link.store_b = &store_b;
  link.profile = std::move(profile);
  store_a.add_peer(link.profile.b);
  store_b.add_peer(link.profile.a);
  links_.emplace(link.profile.link_id, std::move(link));
}

QkdNetwork::Link& QkdNetwork::get(const std::string& link_id) {
  auto it = links_.find(link_id);
  if (it == links_.end()) fail(ErrorCode::LinkUnknown, link_id);
  return it->second;
}

const QkdNetwork::Link& QkdNetwork::get(const std::string& link_id) const {
  auto it = links_.find(link_id);
  if (it == links_.end()) fail(ErrorCode::LinkUnknown, link_id);
  return it->second;
}

void QkdNetwork::seed_stream(const std::string& link_id, std::uint64_t seed) {
  auto& link = get(link_id);
  if (link.started) fail(ErrorCode::AlreadyStarted, link_id);
  link.seed = seed;
}

Bytes QkdNetwork::generate(const Link& link, std::uint64_t index) const {
  Bytes key;
  append_u64_be(key, link.seed);
  Bytes msg = to_bytes(link.profile.link_id);
  msg.push_back(0);
  append_u64_be(msg, index);
  const std::size_t n = link.profile.block_size_bits / 8;
  Bytes out;
  for (std::uint32_t ctr = 0; out.size() < n; ++ctr) {
    Bytes m = msg;
    append_u32_be(m, ctr);
    Bytes chunk = crypto::hmac_sha512(key, m);
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  out.resize(n);
  return out;
}

Bytes QkdNetwork::block_bytes(const std::string& link_id, std::uint64_t index) const {
  return generate(get(link_id), index);
}

void QkdNetwork::integrate(Link& link, SimDuration dt, std::vector<keystore::KeyBlock>& out) {
  if (dt.count() <= 0) return;
  const double rate = link.profile.effective_rate_bps();
  link.now += dt;
  if (rate <= 0.0) return;
  // rate [bit/s] * dt [us] = rate_milli [mbit/s] * dt [us] nano-bits.
  const auto rate_milli = static_cast<std::uint64_t>(std::llround(rate * 1000.0));
  const std::uint64_t block_nano = std::uint64_t{link.profile.block_size_bits} * 1'000'000'000ULL;
  // Integrate in slices small enough that the product cannot overflow.
  const std::uint64_t max_slice = (std::uint64_t{1} << 62) / rate_milli;
  auto remaining = static_cast<std::uint64_t>(dt.count());
  const SimTime slice_start = link.now - dt;
  std::uint64_t elapsed = 0;
  while (remaining > 0) {
    std::uint64_t slice = std::min(remaining, max_slice);
    remaining -= slice;
    elapsed += slice;
    link.acc_nano_bits += rate_milli * slice;
    while (link.acc_nano_bits >= block_nano) {
      link.acc_nano_bits -= block_nano;
      emit(link, slice_start + SimDuration(static_cast<std::int64_t>(elapsed)), out);
    }
  }
}

void QkdNetwork::emit(Link& link, SimTime created, std::vector<keystore::KeyBlock>& out) {
  keystore::KeyBlock blk;
  blk.key_id = KeyId(link.tag, link.next_index);
  blk.bytes = generate(link, link.next_index);
  blk.origin = link.profile.link_id;
  blk.technology = link.profile.technology;
  blk.created_at = created;
  blk.expires_at = created + link.profile.key_lifetime;
  ++link.next_index;
  link.emitted_bits += link.profile.block_size_bits;

  blk.peer = link.profile.b;
  link.store_a->ingest(blk);
  blk.peer = link.profile.a;
  link.store_b->ingest(blk);
  out.push_back(std::move(blk));
}

LinkStatus QkdNetwork::apply(Link& link, const DegradationEvent& event) {
  auto& p = link.profile;
  switch (event.kind) {
    case DegradationKind::FiberCut: p.status = LinkStatus::Down; break;
    case DegradationKind::Recovery:
      p.status = LinkStatus::Up;
      p.degraded_rate_factor = 1.0;
      break;
    case DegradationKind::NoiseIncrease:
      if (!(event.rate_factor > 0.0 && event.rate_factor <= 1.0)) {
        fail(ErrorCode::SchemaError, "rate_factor must be in (0,1]");
      }
      p.degraded_rate_factor = event.rate_factor;
      if (p.status != LinkStatus::Down) p.status = LinkStatus::Degraded;
      break;
  }
  reports_.push_back({p.link_id, p.status, p.effective_rate_bps(), std::max(event.at, link.now)});
  return p.status;
}

std::vector<keystore::KeyBlock> QkdNetwork::advance(const std::string& link_id, SimDuration dt) {
  if (dt.count() <= 0) fail(ErrorCode::BadLength, "advance requires dt > 0");
  auto& link = get(link_id);
  link.started = true;
  std::vector<keystore::KeyBlock> out;
  const SimTime end = link.now + dt;
  while (!link.pending.empty() && link.pending.front().at <= end) {
    auto ev = link.pending.front();
    link.pending.pop_front();
    integrate(link, ev.at - link.now, out);
    apply(link, ev);
  }
  integrate(link, end - link.now, out);
  return out;
}

std::vector<keystore::KeyBlock> QkdNetwork::advance_all_to(SimTime to) {
  std::vector<keystore::KeyBlock> out;
  for (auto& [id, link] : links_) {
    if (to > link.now) {
      auto blocks = advance(id, to - link.now);
      out.insert(out.end(), std::make_move_iterator(blocks.begin()), std::make_move_iterator(blocks.end()));
    }
  }
  return out;
}

LinkStatus QkdNetwork::inject_event(const DegradationEvent& event) {
  auto& link = get(event.link_id);
  if (event.at <= link.now) return apply(link, event);
  auto pos = std::upper_bound(link.pending.begin(), link.pending.end(), event,
                              [](const DegradationEvent& x, const DegradationEvent& y) { return x.at < y.at; });
  link.pending.insert(pos, event);
  switch (event.kind) {
    case DegradationKind::FiberCut: return LinkStatus::Down;
    case DegradationKind::Recovery: return LinkStatus::Up;
    case DegradationKind::NoiseIncrease: return LinkStatus::Degraded;
  }
  return link.profile.status;
}

std::vector<LinkStateReport> QkdNetwork::drain_reports() {
  std::vector<LinkStateReport> out;
  out.swap(reports_);
  return out;
}

const QkdLinkProfile& QkdNetwork::profile(const std::string& link_id) const { return get(link_id).profile; }
SimTime QkdNetwork::link_time(const std::string& link_id) const { return get(link_id).now; }
std::uint64_t QkdNetwork::emitted_bits(const std::string& link_id) const { return get(link_id).emitted_bits; }
std::uint64_t QkdNetwork::emitted_blocks(const std::string& link_id) const { return get(link_id).next_index; }

std::vector<std::string> QkdNetwork::link_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : links_) out.push_back(id);
  return out;
}

}  // namespace qsvpn::qkd
