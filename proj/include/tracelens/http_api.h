#ifndef TRACELENS_HTTP_API_H_
#define TRACELENS_HTTP_API_H_

// Read-only JSON API over a QueryService.
//
//   GET /api/runs
//   GET /api/runs/{id}/manifest
//   GET /api/runs/{id}/graph
//   GET /api/runs/{id}/layout
//   GET /api/runs/{id}/steps?trial=&category=&meta_key=&meta_value=
//   GET /api/runs/{id}/record?trial=&step=&node=&variant=&mode=&loss=&view=&sample=
//   GET /api/runs/{id}/outlier-trace?trial=&step=&sample=&z=
//   GET /api/runs/{id}/gradient-balance?trial=&step=&node=&loss=
//   GET /api/runs/{id}/network
//   GET /api/runs/{id}/notes?from=&to=
//   GET /api/runs/{id}/scalars?series=&from=&to=
//
// `trial` may be omitted for single-trial runs. `mode` is "forward",
// "gradient" (with `loss`) or "gradient:<loss>". `view` is "aggregate"
// (default), "per_neuron" or "sample" (with `sample`). Failures answer
// {"code", "message", "detail"} with the status from http_status().
// Anything outside /api/ is served from the UI directory when one is given.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "tracelens/error.h"
#include "tracelens/json_codec.h"
#include "tracelens/query.h"

namespace tracelens {

int http_status(ErrorCode code);
json error_json(const Error& e);

json to_json_value(const RunSummary& s);
json to_json_value(const StepListing& s);
json to_json_value(const RecordPayload& p);
json to_json_value(const OutlierHit& h);
json to_json_value(const GradientBalance& b);

class HttpApi {
 public:
  explicit HttpApi(std::shared_ptr<QueryService> service,
                   std::optional<std::filesystem::path> ui_dir = std::nullopt);
  ~HttpApi();
  HttpApi(const HttpApi&) = delete;
  HttpApi& operator=(const HttpApi&) = delete;

  // Binds without serving yet. Port 0 picks an ephemeral port. Returns the
  // bound port; throws kIo when the address is unavailable.
  int bind(const std::string& host, int port);
  // Serves until stop(). Call after bind().
  void run();
  void stop();
  // Blocks until the server accepts connections (or stop()).
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tracelens

#endif  // TRACELENS_HTTP_API_H_
