#include "clsr/service.hpp"

#include <cctype>
#include <cstring>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "clsr/flop_counter.hpp"

namespace clsr {

using nlohmann::json;

SessionStore::SessionStore(std::shared_ptr<const ClsrModel<float>> model, ServiceConfig cfg,
                           std::function<Clock::time_point()> now)
    : model_(std::move(model)), cfg_(cfg), now_(std::move(now)), id_rng_(std::random_device{}()) {
  if (!model_) throw ConfigError("session store needs a model");
  if (cfg_.max_sessions < 1) throw ConfigError("max_sessions must be >= 1");
}

std::string SessionStore::new_id() {
  std::lock_guard lock(id_mu_);
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(id_rng_()),
                static_cast<unsigned long long>(id_rng_()));
  return buf;
}

SessionSummary SessionStore::create(const Image& context) {
  if (context.channels() != 3) throw DecodeError("context must be RGB");
  if (static_cast<long long>(context.height()) * context.width() > cfg_.max_pixels) {
    throw PayloadTooLarge("image " + std::to_string(context.height()) + "x" + std::to_string(context.width()) +
                          " exceeds the " + std::to_string(cfg_.max_pixels) + "-pixel limit");
  }
  auto s = std::make_shared<Session>();
  s->id = new_id();
  s->ctx = model_->prepare_context(context);
  s->created = now_();
  s->last_used = s->created.time_since_epoch().count();

  SessionSummary out{s->id, context.height(), context.width(), s->ctx.flops};
  std::unique_lock lock(mu_);
  const auto t = now_().time_since_epoch().count();
  const auto ttl = std::chrono::duration_cast<Clock::duration>(cfg_.idle_ttl).count();
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    it = t - it->second->last_used.load() > ttl ? sessions_.erase(it) : std::next(it);
  }
  while (sessions_.size() >= cfg_.max_sessions) evict_lru_locked();
  sessions_.emplace(s->id, std::move(s));
  return out;
}

void SessionStore::evict_lru_locked() {
  auto oldest = sessions_.begin();
  for (auto it = sessions_.begin(); it != sessions_.end(); ++it) {
    if (it->second->last_used.load() < oldest->second->last_used.load()) oldest = it;
  }
  if (oldest != sessions_.end()) sessions_.erase(oldest);
}

std::shared_ptr<SessionStore::Session> SessionStore::find(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw SessionNotFound("unknown session " + id);
  return it->second;
}

RoiResult SessionStore::restore(const std::string& id, const RoiBox& box, std::optional<int> pad) {
  auto s = find(id);
  const auto start = Clock::now();
  const auto t = now_().time_since_epoch().count();
  const auto ttl = std::chrono::duration_cast<Clock::duration>(cfg_.idle_ttl).count();
  if (t - s->last_used.load() > ttl) {
    drop(id);
    throw SessionNotFound("session " + id + " expired");
  }
  s->last_used = t;
  const int p = pad.value_or(model_->config().pad);
  if (p < 0) throw BoundsError("pad must be >= 0");
  RoiResult out;
  {
    FlopScope scope;
    out.sr = restore_roi(*model_, s->ctx, box, p);
    out.roi_flops = scope.flops();
  }
  s->roi_flops += out.roi_flops;
  out.elapsed_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  return out;
}

bool SessionStore::drop(const std::string& id) {
  std::unique_lock lock(mu_);
  return sessions_.erase(id) > 0;
}

std::size_t SessionStore::evict_idle() {
  std::unique_lock lock(mu_);
  const auto t = now_().time_since_epoch().count();
  const auto ttl = std::chrono::duration_cast<Clock::duration>(cfg_.idle_ttl).count();
  std::size_t n = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (t - it->second->last_used.load() > ttl) {
      it = sessions_.erase(it);
      ++n;
    } else {
      ++it;
    }
  }
  return n;
}

std::size_t SessionStore::size() const {
  std::shared_lock lock(mu_);
  return sessions_.size();
}

bool SessionStore::contains(const std::string& id) const {
  std::shared_lock lock(mu_);
  return sessions_.count(id) > 0;
}

FlopsBreakdown SessionStore::spent(const std::string& id) const {
  auto s = find(id);
  FlopsBreakdown f = s->ctx.flops;
  f.base = s->roi_flops.load();
  return f;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) clean += c;
  }
  if (clean.size() % 4) throw DecodeError("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(clean.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw DecodeError("malformed base64 payload");
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::optional<std::pair<int, int>> png_dimensions(const std::vector<std::uint8_t>& b) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (b.size() < 24 || std::memcmp(b.data(), sig, 8) != 0 || std::memcmp(b.data() + 12, "IHDR", 4) != 0) {
    return std::nullopt;
  }
  auto be32 = [&](std::size_t o) {
    return static_cast<std::uint32_t>(b[o]) << 24 | static_cast<std::uint32_t>(b[o + 1]) << 16 |
           static_cast<std::uint32_t>(b[o + 2]) << 8 | static_cast<std::uint32_t>(b[o + 3]);
  };
  const auto w = be32(16), h = be32(20);
  if (w > 0x7fffffffu || h > 0x7fffffffu) return std::nullopt;
  return std::pair<int, int>{static_cast<int>(w), static_cast<int>(h)};
}

std::string model_hash(const ClsrModel<float>& model) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ull;
    }
  };
  const std::string cfg = to_json(model.config()).dump();
  mix(cfg.data(), cfg.size());
  const auto& names = model.params().ordered_names();
  const auto& vars = model.params().vars();
  for (std::size_t i = 0; i < vars.size(); ++i) {
    mix(names[i].data(), names[i].size());
    mix(vars[i].value().data(), vars[i].value().size() * sizeof(float));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct HttpService::Impl {
  std::shared_ptr<SessionStore> store;
  std::string hash;
  httplib::Server server;
};

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& msg) {
  reply(res, status, json{{"error", msg}});
}

/// Maps the error hierarchy onto HTTP status codes.
template <class F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const SessionNotFound& e) {
    reply_error(res, 404, e.what());
  } catch (const PayloadTooLarge& e) {
    reply_error(res, 413, e.what());
  } catch (const BoundsError& e) {
    reply_error(res, 422, e.what());
  } catch (const DecodeError& e) {
    reply_error(res, 400, e.what());
  } catch (const json::exception& e) {
    reply_error(res, 400, std::string("bad request body: ") + e.what());
  } catch (const std::exception& e) {
    reply_error(res, 500, e.what());
  }
}

int field_int(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_integer()) {
    throw DecodeError(std::string("missing integer field '") + key + "'");
  }
  return j[key].get<int>();
}

}  // namespace

HttpService::HttpService(std::shared_ptr<SessionStore> store) : impl_(std::make_unique<Impl>()) {
  impl_->store = std::move(store);
  impl_->hash = model_hash(impl_->store->model());
  auto& srv = impl_->server;
  Impl* self = impl_.get();
  srv.set_payload_max_length(512ull << 20);
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"}});
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Get("/v1/healthz", [self](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, json{{"status", "ok"}, {"model_hash", self->hash}});
  });

  srv.Post("/v1/sessions", [self](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = json::parse(req.body);
      if (!body.contains("image_png_b64") || !body["image_png_b64"].is_string()) {
        throw DecodeError("missing string field 'image_png_b64'");
      }
      const auto bytes = base64_decode(body["image_png_b64"].get<std::string>());
      if (auto dims = png_dimensions(bytes)) {
        if (static_cast<long long>(dims->first) * dims->second > self->store->config().max_pixels) {
          throw PayloadTooLarge("image " + std::to_string(dims->second) + "x" + std::to_string(dims->first) +
                                " exceeds the pixel limit");
        }
      }
      const Image img = decode_png(bytes);
      const auto s = self->store->create(img);
      reply(res, 200, json{{"session_id", s.id},
                           {"height", s.height},
                           {"width", s.width},
                           {"context_gflops", s.context_flops.gflops()},
                           {"context_flops", s.context_flops.total()}});
    });
  });

  srv.Post(R"(/v1/sessions/([0-9A-Za-z]+)/roi)", [self](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      if (!self->store->contains(id)) throw SessionNotFound("unknown session " + id);
      const json body = json::parse(req.body);
      const RoiBox box{field_int(body, "top"), field_int(body, "left"), field_int(body, "height"),
                       field_int(body, "width")};
      std::optional<int> pad;
      if (body.contains("pad") && !body["pad"].is_null()) pad = field_int(body, "pad");
      const auto r = self->store->restore(id, box, pad);
      reply(res, 200, json{{"sr_png_b64", base64_encode(encode_png(r.sr))},
                           {"roi_gflops", static_cast<double>(r.roi_flops) * 1e-9},
                           {"roi_flops", r.roi_flops},
                           {"elapsed_ms", r.elapsed_ms},
                           {"scale", self->store->model().scale()}});
    });
  });

  srv.Delete(R"(/v1/sessions/([0-9A-Za-z]+))", [self](const httplib::Request& req, httplib::Response& res) {
    self->store->drop(req.matches[1]);
    reply(res, 200, json::object());
  });
}

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  if (!impl_->server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpService::serve() { impl_->server.listen_after_bind(); }

void HttpService::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace clsr
