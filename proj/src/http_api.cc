#include "tracelens/http_api.h"

#include <charconv>
#include <limits>

#include <httplib.h>

namespace tracelens {
namespace {

constexpr const char* kJson = "application/json";

std::optional<std::string> param(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  return req.get_param_value(key);
}

std::string require(const httplib::Request& req, const char* key) {
  auto v = param(req, key);
  if (!v || v->empty()) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("missing query parameter '") + key + "'");
  }
  return *v;
}

std::uint64_t parse_u64(const std::string& text, const char* key) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("parameter '") + key + "' must be a non-negative integer");
  }
  return v;
}

double parse_real(const std::string& text, const char* key) {
  double v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("parameter '") + key + "' must be a number");
  }
  return v;
}

std::uint64_t u64_or(const httplib::Request& req, const char* key, std::uint64_t dflt) {
  auto v = param(req, key);
  return v ? parse_u64(*v, key) : dflt;
}

std::string trial_param(QueryService& q, const std::string& run,
                        const httplib::Request& req) {
  if (auto t = param(req, "trial"); t && !t->empty()) return *t;
  const auto& trials = q.run(run)->manifest().trial_ids;
  if (trials.size() != 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "run has several trials; pass 'trial'");
  }
  return trials.front();
}

Mode mode_param(const httplib::Request& req) {
  const std::string m = param(req, "mode").value_or("forward");
  if (m == "forward") return Mode::forward();
  if (m == "gradient") return Mode::gradient(require(req, "loss"));
  if (m.rfind("gradient:", 0) == 0 && m.size() > 9) return Mode::parse(m);
  throw Error(ErrorCode::kInvalidArgument, "mode must be 'forward' or 'gradient'");
}

View view_param(const httplib::Request& req) {
  const std::string v = param(req, "view").value_or("aggregate");
  if (v == "aggregate") return View::aggregate();
  if (v == "per_neuron") return View::per_neuron();
  if (v == "sample") {
    const auto i = parse_u64(require(req, "sample"), "sample");
    if (i > std::numeric_limits<std::uint32_t>::max()) {
      throw Error(ErrorCode::kInvalidArgument, "sample index out of range");
    }
    return View::sample(static_cast<std::uint32_t>(i));
  }
  throw Error(ErrorCode::kInvalidArgument,
              "view must be 'aggregate', 'per_neuron' or 'sample'");
}

std::optional<std::pair<std::string, std::string>> meta_param(
    const httplib::Request& req) {
  auto k = param(req, "meta_key");
  auto v = param(req, "meta_value");
  if (!k && !v) return std::nullopt;
  if (!k || !v) {
    throw Error(ErrorCode::kInvalidArgument,
                "meta_key and meta_value must be given together");
  }
  return std::make_pair(*k, *v);
}

std::optional<std::string> category_param(const httplib::Request& req) {
  auto c = param(req, "category");
  if (c && c->empty()) return std::nullopt;
  return c;
}

const char* view_name(ViewKind k) {
  switch (k) {
    case ViewKind::kAggregate: return "aggregate";
    case ViewKind::kPerNeuron: return "per_neuron";
    case ViewKind::kSample: return "sample";
  }
  return "aggregate";
}

json z_json(const ZScores& z) {
  json values = json::array();
  for (double v : z.z) values.push_back(number_or_null(v));
  json flags = json::array();
  for (bool f : z.degenerate) flags.push_back(f);
  return json{{"z", values}, {"degenerate", flags}};
}

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kEmptyTensor:
    case ErrorCode::kShape:
      return 400;
    case ErrorCode::kNotFound:
    case ErrorCode::kNotRecorded:
    case ErrorCode::kSampleNotRetained:
      return 404;
    case ErrorCode::kInsufficientData:
      return 422;
    case ErrorCode::kCyclicGraph:
    case ErrorCode::kDuplicateCategory:
    case ErrorCode::kDuplicateStep:
    case ErrorCode::kAlreadyFinalized:
      return 409;
    case ErrorCode::kVersion:
    case ErrorCode::kCorrupt:
    case ErrorCode::kIo:
      return 500;
  }
  return 500;
}

json error_json(const Error& e) {
  json detail = nullptr;
  if (!e.detail().empty()) {
    detail = json::parse(e.detail(), nullptr, false);
    if (detail.is_discarded()) detail = e.detail();
  }
  return json{{"code", error_code_name(e.code())}, {"message", e.what()}, {"detail", detail}};
}

json to_json_value(const RunSummary& s) {
  return json{{"run_id", s.run_id},
              {"finalized", s.finalized},
              {"trial_ids", s.trial_ids},
              {"categories", s.categories},
              {"losses", s.losses},
              {"recorded_steps", s.recorded_steps},
              {"node_count", s.node_count}};
}

json to_json_value(const StepListing& s) {
  return json{{"steps", s.steps},
              {"categories", s.categories},
              {"metadata_values", s.metadata_values}};
}

json to_json_value(const RecordPayload& p) {
  json j{{"trial", p.trial_id},
         {"step", p.step},
         {"category", p.category},
         {"node", p.node_id},
         {"variant", p.variant_key},
         {"mode", p.mode.key()},
         {"loss", p.mode.is_forward() ? json(nullptr) : json(p.mode.loss_id())},
         {"batch", p.batch},
         {"features", p.features},
         {"view", view_name(p.view.kind)},
         {"retained_samples", p.retained_samples}};
  switch (p.view.kind) {
    case ViewKind::kAggregate:
      j["aggregate"] = p.aggregate;
      break;
    case ViewKind::kPerNeuron:
      j["per_neuron"] = p.per_neuron;
      break;
    case ViewKind::kSample: {
      json values = json::array();
      for (float v : p.sample->values) values.push_back(number_or_null(v));
      json s = z_json(p.sample->z);
      s["index"] = p.sample->index;
      s["values"] = std::move(values);
      j["sample"] = std::move(s);
      break;
    }
  }
  return j;
}

json to_json_value(const OutlierHit& h) {
  return json{{"node", h.node_id},       {"variant", h.variant_key},
              {"layer", h.layer},        {"neuron", h.neuron},
              {"z", number_or_null(h.z)}, {"degenerate", h.degenerate}};
}

json to_json_value(const GradientBalance& b) {
  json succ = json::array();
  for (const auto& s : b.successors) {
    succ.push_back(json{{"node", s.node_id},
                        {"layer", s.layer},
                        {"abs_mean", number_or_null(s.abs_mean)},
                        {"variants", s.variants}});
  }
  return json{{"node", b.node_id},
              {"loss", b.loss_id},
              {"successors", succ},
              {"ratio", number_or_null(b.ratio)}};
}

struct HttpApi::Impl {
  std::shared_ptr<QueryService> service;
  httplib::Server server;
};

HttpApi::HttpApi(std::shared_ptr<QueryService> service,
                 std::optional<std::filesystem::path> ui_dir)
    : impl_(std::make_unique<Impl>()) {
  impl_->service = std::move(service);
  auto& srv = impl_->server;
  QueryService* q = impl_->service.get();
  // httplib defaults to SO_REUSEPORT, which would let a second server share a
  // busy port silently.
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });

  // Every handler runs through here so errors map to one JSON shape.
  auto route = [&srv](const std::string& pattern, auto body) {
    srv.Get(pattern, [body](const httplib::Request& req, httplib::Response& res) {
      try {
        res.set_content(body(req).dump(), kJson);
      } catch (const Error& e) {
        res.status = http_status(e.code());
        res.set_content(error_json(e).dump(), kJson);
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(
            json{{"code", "internal"}, {"message", e.what()}, {"detail", nullptr}}.dump(),
            kJson);
      }
    });
  };
  const std::string run = R"(/api/runs/([^/]+))";

  route("/api/runs", [q](const httplib::Request&) {
    json out = json::array();
    for (const auto& s : q->list_runs()) out.push_back(to_json_value(s));
    return out;
  });
  route(run + "/manifest", [q](const httplib::Request& req) {
    return json(q->get_manifest(req.matches[1]));
  });
  route(run + "/graph", [q](const httplib::Request& req) {
    return json(q->get_graph(req.matches[1]));
  });
  route(run + "/layout", [q](const httplib::Request& req) {
    return json{{"layers", q->get_layout(req.matches[1])}};
  });
  route(run + "/steps", [q](const httplib::Request& req) {
    const std::string id = req.matches[1];
    const std::string trial = trial_param(*q, id, req);
    json j = to_json_value(q->list_steps(id, trial, category_param(req), meta_param(req)));
    j["trial"] = trial;
    return j;
  });
  route(run + "/record", [q](const httplib::Request& req) {
    const std::string id = req.matches[1];
    SelectorTuple sel;
    sel.trial_id = trial_param(*q, id, req);
    sel.category_filter = category_param(req);
    sel.metadata_filter = meta_param(req);
    sel.step = parse_u64(require(req, "step"), "step");
    sel.node_id = require(req, "node");
    sel.variant_key = param(req, "variant").value_or("default");
    sel.mode = mode_param(req);
    sel.view = view_param(req);
    return to_json_value(q->get_record(id, sel));
  });
  route(run + "/outlier-trace", [q](const httplib::Request& req) {
    const std::string id = req.matches[1];
    const auto sample = parse_u64(require(req, "sample"), "sample");
    if (sample > std::numeric_limits<std::uint32_t>::max()) {
      throw Error(ErrorCode::kInvalidArgument, "sample index out of range");
    }
    const double z = param(req, "z") ? parse_real(*param(req, "z"), "z") : 3.0;
    json hits = json::array();
    for (const auto& h : q->outlier_trace(id, trial_param(*q, id, req),
                                          parse_u64(require(req, "step"), "step"),
                                          static_cast<std::uint32_t>(sample), z)) {
      hits.push_back(to_json_value(h));
    }
    return json{{"threshold", z}, {"nodes", hits}};
  });
  route(run + "/gradient-balance", [q](const httplib::Request& req) {
    const std::string id = req.matches[1];
    return to_json_value(q->gradient_balance(
        id, trial_param(*q, id, req), parse_u64(require(req, "step"), "step"),
        require(req, "node"), param(req, "loss")));
  });
  route(run + "/network", [q](const httplib::Request& req) {
    return json(q->get_network_tree(req.matches[1]));
  });
  route(run + "/notes", [q](const httplib::Request& req) {
    return json(q->get_notes(req.matches[1], u64_or(req, "from", 0),
                             u64_or(req, "to", std::numeric_limits<std::uint64_t>::max())));
  });
  route(run + "/scalars", [q](const httplib::Request& req) {
    const std::string id = req.matches[1];
    auto series = param(req, "series");
    if (!series || series->empty()) return json{{"series", q->list_series(id)}};
    return json(q->get_scalars(id, *series, u64_or(req, "from", 0),
                               u64_or(req, "to", std::numeric_limits<std::uint64_t>::max())));
  });
  route(R"(/api/.*)", [](const httplib::Request& req) -> json {
    throw Error(ErrorCode::kNotFound, "no endpoint " + req.path);
  });

  if (ui_dir && std::filesystem::is_directory(*ui_dir)) {
    srv.set_mount_point("/", ui_dir->string());
  }
}

HttpApi::~HttpApi() { stop(); }

int HttpApi::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  if (port == 0) {
    const int bound = srv.bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorCode::kIo, "cannot bind " + host);
    return bound;
  }
  if (!srv.bind_to_port(host, port)) {
    throw Error(ErrorCode::kIo,
                "cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
  }
  return port;
}

void HttpApi::run() { impl_->server.listen_after_bind(); }

void HttpApi::stop() {
  if (impl_) impl_->server.stop();
}

void HttpApi::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace tracelens
