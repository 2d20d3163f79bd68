// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <condition_variable>
#include <string>
#include <thread>
#include <vector>

#include "addrtag/tagger.hpp"

namespace httplib {
class Server;
}

namespace addrtag {

struct ServiceConfig {
  /// Longest accepted "addresses" list; longer requests get 413.
  std::size_t max_addresses = 10000;
  /// Parse calls allowed to run at once; further requests wait.
  std::size_t max_concurrent_batches = 4;
  std::size_t batch_size = 32;
};

struct HttpReply {
  int status = 200;
  std::string body;
};

/// The JSON parse endpoint, independent of any transport. The model is set
/// once with load(); until then every route answers 503.
class ParseService {
 public:
  explicit ParseService(ServiceConfig config = {});

  void load(AddressParser parser);
  bool ready() const;

  HttpReply handle(const std::string& method, const std::string& path, const std::string& body) const;

  /// POST /parse body -> reply.
  HttpReply parse(const std::string& body) const;
  HttpReply health() const;

  const ServiceConfig& config() const { return config_; }

 private:
  class Slots {
   public:
    explicit Slots(std::size_t n) : free_(n) {}
    void acquire();
    void release();

   private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::size_t free_;
  };

  ServiceConfig config_;
  std::shared_ptr<const AddressParser> parser_;
  std::atomic<bool> ready_{false};
  mutable Slots slots_;
};

/// {"results":[...]} for a parse over `addresses`. Addresses that preprocess
/// to nothing become {"error":"empty_address"}; the others are parsed in one
/// batch so their results equal a direct parse() call.
std::string parse_response_json(const AddressParser& parser, const std::vector<std::string>& addresses,
                                 std::size_t batch_size);

/// cpp-httplib front end for a ParseService.
class HttpServer {
 public:
  explicit HttpServer(const ParseService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  /// Returns the bound port. Throws IoError when binding fails.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  const ParseService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

/// Command-line entry point. Returns 0 on success, 1 on usage or input
/// errors, 2 on internal errors. `args` excludes the program name.
int cli_main(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace addrtag
