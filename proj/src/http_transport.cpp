#include "finre/http_transport.hpp"

#include <cstdlib>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "finre/errors.hpp"

namespace finre {

using nlohmann::json;

HttpTransport::HttpTransport(const ProviderConfig& cfg)
    : api_key_env_(cfg.api_key_env), timeout_seconds_(cfg.timeout_seconds) {
  const std::string& url = cfg.base_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("provider base_url '" + url + "' has no scheme");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  origin_ = url.substr(0, path_start);
  prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
}

json HttpTransport::post(Capability cap, const json& body) {
  const char* endpoint = cap == Capability::embedding    ? "/embeddings"
                         : cap == Capability::completion ? "/completions"
                                                         : "/score";
  httplib::Client client(origin_);
  const auto secs = static_cast<time_t>(timeout_seconds_);
  client.set_connection_timeout(secs);
  client.set_read_timeout(secs);
  client.set_write_timeout(secs);

  httplib::Headers headers;
  if (!api_key_env_.empty()) {
    if (const char* key = std::getenv(api_key_env_.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  const std::string path = prefix_ + endpoint;
  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    throw TransportError("POST " + origin_ + path + ": " + httplib::to_string(res.error()));
  }
  const int status = res->status;
  if (status == 408 || status == 429 || status >= 500) {
    if (cap == Capability::scoring && status == 501) {
      throw CapabilityUnsupported("POST " + origin_ + path + ": scoring not implemented");
    }
    throw TransportError("POST " + origin_ + path + ": HTTP " + std::to_string(status));
  }
  if (status == 404 && cap == Capability::scoring) {
    throw CapabilityUnsupported("POST " + origin_ + path + ": no scoring endpoint");
  }
  if (status >= 400) {
    throw ProviderRefusal("POST " + origin_ + path + ": HTTP " + std::to_string(status) + ": " +
                          res->body.substr(0, 200));
  }
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    throw TransportError("POST " + origin_ + path + ": malformed JSON response: " + e.what());
  }
}

}  // namespace finre
