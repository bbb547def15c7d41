#include <stdexcept>
#include <string>

#include <httplib.h>

namespace ofcre {

// Thin wrapper so gateway.cpp stays free of the httplib include.
std::string http_post_json(const std::string& host, const std::string& path, const std::string& body,
                           const char* bearer) {
    httplib::Client client(host);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(60, 0);
    httplib::Headers headers;
    if (bearer) headers.emplace("Authorization", std::string("Bearer ") + bearer);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) throw std::runtime_error("http transport error: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        throw std::runtime_error("http status " + std::to_string(res->status) + ": " + res->body);
    return res->body;
}

}  // namespace ofcre
