#pragma once

#include <string>

#include "finre/providers.hpp"

namespace finre {

/// JSON-over-HTTP transport.
///
/// Endpoints are resolved relative to the configured base URL:
///   embedding  -> POST <base>/embeddings   {model, input:[...]}             -> {data:[{embedding}]}
///   completion -> POST <base>/completions  {model, prompt, temperature, max_tokens} -> {text}
///   scoring    -> POST <base>/score        {model, prompt, echo_target, logprobs:true}
///                                          -> {token_logprobs:[...]}
/// The bearer token is read from the environment variable named in the config
/// on every request.
///
/// Status mapping: 2xx parsed as JSON; 408/429/5xx and connection failures are
/// TransportError (retried by the client); 404/501 on scoring is
/// CapabilityUnsupported; any other 4xx is ProviderRefusal.
class HttpTransport : public Transport {
 public:
  explicit HttpTransport(const ProviderConfig& cfg);
  nlohmann::json post(Capability cap, const nlohmann::json& body) override;

  const std::string& scheme_host_port() const { return origin_; }
  const std::string& path_prefix() const { return prefix_; }

 private:
  std::string origin_;
  std::string prefix_;
  std::string api_key_env_;
  double timeout_seconds_;
};

}  // namespace finre
