#ifndef UAI_HTTP_SERVICE_H_
#define UAI_HTTP_SERVICE_H_

// JSON over HTTP in front of a RunManager.
//
//   GET  /health
//   GET  /datasets                 POST /datasets {"name", "source"}
//   GET  /datasets/{name}
//   GET  /runs                     POST /runs {"dataset", "expert", "config"}
//   GET  /runs/{id}
//   GET  /runs/{id}/queue
//   POST /runs/{id}/labels {"answers": [{"index", "label"}, ...]}
//   GET  /runs/{id}/metrics
//   GET  /runs/{id}/result
//   POST /runs/{id}/abort
//
// Mutations honor an Idempotency-Key header. Errors come back as
// {"error": {"code", "message"[, "offenders"]}} with 400 (bad request),
// 404, 409 (wrong state), 422 (rejected submission) or 500.

#include <memory>
#include <string>

#include "uai/run_manager.h"

namespace uai {

class HttpService {
 public:
  explicit HttpService(RunManager& manager);
  ~HttpService();

  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  // Binds to `port` (0 picks a free one) and returns the bound port, or -1.
  int bind(const std::string& host, int port);
  // Serves until stop(); call after bind().
  void serve();
  void stop();
  // Blocks until the server accepts connections.
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Status code and error code for a library exception.
struct ErrorMapping {
  int status;
  const char* code;
};
ErrorMapping map_error(const std::exception& e);

}  // namespace uai

#endif  // UAI_HTTP_SERVICE_H_
