#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <vector>

#include "clsr/model.hpp"

namespace clsr {

class SessionNotFound : public Error {
 public:
  using Error::Error;
};

class PayloadTooLarge : public Error {
 public:
  using Error::Error;
};

struct ServiceConfig {
  std::size_t max_sessions = 16;
  std::chrono::seconds idle_ttl{15 * 60};
  long long max_pixels = 4096LL * 4096LL;
};

struct SessionSummary {
  std::string id;
  int height = 0;
  int width = 0;
  /// gcm and pim spent building the context state; base is zero.
  FlopsBreakdown context_flops;
};

struct RoiResult {
  Image sr;
  /// Base-branch FLOPs of this request only.
  std::uint64_t roi_flops = 0;
  double elapsed_ms = 0;
};

/// Per-image context state cache. Creation and eviction take the map lock
/// exclusively; restorations share it and never mutate session artifacts.
class SessionStore {
 public:
  using Clock = std::chrono::steady_clock;

  SessionStore(std::shared_ptr<const ClsrModel<float>> model, ServiceConfig cfg = {},
               std::function<Clock::time_point()> now = [] { return Clock::now(); });

  SessionSummary create(const Image& context);
  RoiResult restore(const std::string& id, const RoiBox& box, std::optional<int> pad = std::nullopt);
  /// Idempotent; returns whether a session was removed.
  bool drop(const std::string& id);
  /// Removes sessions idle for longer than the TTL.
  std::size_t evict_idle();

  std::size_t size() const;
  bool contains(const std::string& id) const;
  /// Context FLOPs plus every accounted ROI request of the session.
  FlopsBreakdown spent(const std::string& id) const;

  const ClsrModel<float>& model() const { return *model_; }
  const ServiceConfig& config() const { return cfg_; }

 private:
  struct Session {
    std::string id;
    ContextState<float> ctx;
    Clock::time_point created;
    std::atomic<Clock::rep> last_used{0};
    std::atomic<std::uint64_t> roi_flops{0};
  };

  std::shared_ptr<Session> find(const std::string& id) const;
  void evict_lru_locked();
  std::string new_id();

  std::shared_ptr<const ClsrModel<float>> model_;
  ServiceConfig cfg_;
  std::function<Clock::time_point()> now_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex id_mu_;
  std::mt19937_64 id_rng_;
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
/// Throws DecodeError on malformed input; ASCII whitespace is ignored.
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Width and height from a PNG's IHDR chunk without decoding the image.
std::optional<std::pair<int, int>> png_dimensions(const std::vector<std::uint8_t>& bytes);

/// Hash of the model configuration and parameter values.
std::string model_hash(const ClsrModel<float>& model);

/// JSON-over-HTTP front end:
///   POST   /v1/sessions          {image_png_b64}
///   POST   /v1/sessions/{id}/roi {top, left, height, width, pad?}
///   DELETE /v1/sessions/{id}
///   GET    /v1/healthz
class HttpService {
 public:
  explicit HttpService(std::shared_ptr<SessionStore> store);
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  /// Binds and returns the port (an ephemeral one when port == 0).
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace clsr
