#pragma once

#include <map>
#include <memory>
#include <string>

#include "qsvpn/etsi/etsi004.hpp"
#include "qsvpn/etsi/etsi014.hpp"

namespace qsvpn::etsi {

/// Routes wire requests to the 014 endpoint of the calling SAE or to the
/// 004 stream service. Usable in-process (dispatch) or over local HTTP.
class EtsiHttpServer {
 public:
  EtsiHttpServer();
  ~EtsiHttpServer();

  EtsiHttpServer(const EtsiHttpServer&) = delete;
  EtsiHttpServer& operator=(const EtsiHttpServer&) = delete;

  void add_endpoint(Etsi014Endpoint& endpoint);
  void set_stream_service(Etsi004Service& service);

  WireResponse dispatch(const WireRequest& request);
  WireTransport in_process_transport();

  // Binds and serves on a background thread; port 0 picks a free port.
  // Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Serves on the calling thread until stop() is called elsewhere.
  void listen_blocking(const std::string& host, int port);
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::map<NodeId, Etsi014Endpoint*> endpoints_;
  Etsi004Service* streams_ = nullptr;
};

// Transport that sends requests to an EtsiHttpServer over HTTP.
WireTransport http_transport(const std::string& host, int port);

}  // namespace qsvpn::etsi
