#include "aegle/errors.hpp"
#include "aegle/model_gateway.hpp"

#include <httplib.h>

namespace aegle {

namespace {

// Splits "https://host:port/prefix" into the client origin and a path prefix.
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  const auto path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path_start == std::string::npos) {
    return {url, "/"};
  }
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpTransport default_http_transport(std::chrono::seconds timeout) {
  return [timeout](const std::string& url, const std::vector<std::pair<std::string, std::string>>& headers,
                   const std::string& body) -> HttpResult {
    const auto [origin, path] = split_url(url);
    httplib::Client client(origin);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers hdrs;
    std::string content_type = "application/json";
    for (const auto& [k, v] : headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        hdrs.emplace(k, v);
      }
    }
    auto res = client.Post(path, hdrs, body, content_type);
    if (!res) {
      throw NetworkError("transport error: " + httplib::to_string(res.error()));
    }
    return HttpResult{res->status, res->body};
  };
}

}  // namespace aegle
