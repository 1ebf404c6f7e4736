#include "qsvpn/etsi/http_server.hpp"

#include <atomic>
#include <thread>

#include <httplib.h>

namespace qsvpn::etsi {

namespace {
constexpr const char* kSaeHeader = "X-SAE-ID";
}

struct EtsiHttpServer::Impl {
  httplib::Server server;
  std::thread thread;
  std::atomic<bool> running{false};
};

EtsiHttpServer::EtsiHttpServer() : impl_(std::make_unique<Impl>()) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    WireRequest w;
    w.method = req.method;
    w.path = req.path;
    w.caller = req.get_header_value(kSaeHeader);
    WireResponse out;
    try {
      if (!req.body.empty()) w.body = json::parse(req.body);
      out = dispatch(w);
    } catch (const json::exception& e) {
      out = error_response(Error(ErrorCode::SchemaError, e.what()));
    }
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  };
  impl_->server.Get(R"(/api/v1/.*)", handler);
  impl_->server.Post(R"(/api/v1/.*)", handler);
}

EtsiHttpServer::~EtsiHttpServer() { stop(); }

void EtsiHttpServer::add_endpoint(Etsi014Endpoint& endpoint) { endpoints_[endpoint.sae()] = &endpoint; }

void EtsiHttpServer::set_stream_service(Etsi004Service& service) { streams_ = &service; }

WireResponse EtsiHttpServer::dispatch(const WireRequest& request) {
  if (request.path.rfind("/api/v1/ksid/", 0) == 0) {
    if (!streams_) return error_response(Error(ErrorCode::SchemaError, "no key stream service"));
    return streams_->handle(request);
  }
  auto it = endpoints_.find(request.caller);
  if (it == endpoints_.end()) return error_response(Error(ErrorCode::UnknownPeer, "unknown SAE " + request.caller.value));
  return it->second->handle(request);
}

WireTransport EtsiHttpServer::in_process_transport() {
  return [this](const WireRequest& r) { return dispatch(r); };
}

int EtsiHttpServer::start(const std::string& host, int port) {
  if (impl_->running) fail(ErrorCode::AlreadyStarted, "server already running");
  int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) fail(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
  impl_->running = true;
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void EtsiHttpServer::listen_blocking(const std::string& host, int port) {
  impl_->running = true;
  bool ok = impl_->server.listen(host, port);
  impl_->running = false;
  if (!ok) fail(ErrorCode::IoError, "cannot serve on " + host + ":" + std::to_string(port));
}

void EtsiHttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
  impl_->running = false;
}

bool EtsiHttpServer::running() const { return impl_->running; }

WireTransport http_transport(const std::string& host, int port) {
  return [host, port](const WireRequest& r) {
    httplib::Client client(host, port);
    client.set_connection_timeout(2, 0);
    httplib::Headers headers{{kSaeHeader, r.caller.value}};
    httplib::Result res = r.method == "GET" ? client.Get(r.path, headers)
                                            : client.Post(r.path, headers, r.body.dump(), "application/json");
    if (!res) fail(ErrorCode::IoError, "HTTP request failed: " + httplib::to_string(res.error()));
    WireResponse out;
    out.status = res->status;
    out.body = res->body.empty() ? json::object() : json::parse(res->body, nullptr, false);
    if (out.body.is_discarded()) fail(ErrorCode::SchemaError, "response is not JSON");
    return out;
  };
}

}  // namespace qsvpn::etsi
