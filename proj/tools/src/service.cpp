// SPDX-License-Identifier: Apache-2.0
#include "cutie_tools/service.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cutie/errors.hpp"
#include "cutie/image_io.hpp"
#include "cutie/session.hpp"

namespace cutie::tools {

using nlohmann::json;

RunLengths rle_encode(const LabelMap &mask) {
  RunLengths runs;
  for (std::uint8_t v : mask.labels) {
    if (!runs.empty() && runs.back().first == v) {
      ++runs.back().second;
    } else {
      runs.emplace_back(v, 1u);
    }
  }
  return runs;
}

LabelMap rle_decode(const RunLengths &runs, std::size_t height, std::size_t width) {
  LabelMap mask(height, width);
  std::size_t pos = 0;
  for (const auto &[label, count] : runs) {
    if (count > mask.labels.size() - pos) {
      throw FormatError("run lengths exceed the mask size");
    }
    std::fill_n(mask.labels.begin() + static_cast<std::ptrdiff_t>(pos), count, label);
    pos += count;
  }
  if (pos != mask.labels.size()) {
    throw FormatError("run lengths do not cover the mask");
  }
  return mask;
}

namespace {

enum class Status { Idle, Propagating, Error };

const char *status_name(Status s) {
  switch (s) {
  case Status::Idle:
    return "idle";
  case Status::Propagating:
    return "propagating";
  case Status::Error:
    return "error";
  }
  return "unknown";
}

struct Reference {
  LabelMap mask;
  bool permanent = false;
};

struct Session {
  std::string id;
  InferenceConfig config;

  std::mutex mu;
  std::condition_variable cv;
  std::vector<Image> frames;
  std::map<std::size_t, Reference> references;
  std::map<std::size_t, LabelMap> results;
  Status status = Status::Idle;
  std::string error;
  std::uint64_t job = 0;
  std::size_t progress = 0, total = 0;
  std::vector<std::string> events;
  bool closed = false;

  std::mutex worker_mu;
  std::jthread worker; // declared last: joined before the state above is destroyed
};

struct HttpError {
  int status;
  std::string code;
  std::string message;
};

void send_error(httplib::Response &res, int status, const std::string &code, const std::string &message) {
  res.status = status;
  res.set_content(json{{"code", code}, {"message", message}}.dump(), "application/json");
}

void send_json(httplib::Response &res, int status, const json &body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json config_json(const InferenceConfig &c) {
  return {{"mem_interval", c.mem_interval}, {"t_max", c.t_max}, {"top_k", c.top_k},
          {"max_short_edge", c.max_short_edge}};
}

InferenceConfig parse_overrides(const std::string &body) {
  InferenceConfig config;
  if (body.empty()) {
    return config;
  }
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception &e) {
    throw HttpError{400, "invalid_json", e.what()};
  }
  if (!j.is_object()) {
    throw HttpError{400, "invalid_config", "config overrides must be a JSON object"};
  }
  static const std::vector<std::string> fixed = {"channels",   "key_channels", "num_blocks",       "num_queries",
                                                 "num_heads",  "ffn_hidden",   "decoder_channels", "stem_channels",
                                                 "encoder_channels"};
  for (const auto &[key, value] : j.items()) {
    std::size_t *slot = nullptr;
    if (key == "mem_interval") {
      slot = &config.mem_interval;
    } else if (key == "t_max") {
      slot = &config.t_max;
    } else if (key == "top_k") {
      slot = &config.top_k;
    } else if (key == "max_short_edge") {
      slot = &config.max_short_edge;
    } else if (std::find(fixed.begin(), fixed.end(), key) != fixed.end()) {
      throw HttpError{400, "invalid_config", "'" + key + "' is fixed by the server's model"};
    } else {
      throw HttpError{400, "invalid_config", "unknown config key '" + key + "'"};
    }
    if (!value.is_number_unsigned() || value.get<std::uint64_t>() == 0) {
      throw HttpError{400, "invalid_config", "'" + key + "' must be a positive integer"};
    }
    *slot = value.get<std::size_t>();
  }
  try {
    config.validate();
  } catch (const ConfigError &e) {
    throw HttpError{400, "invalid_config", e.what()};
  }
  return config;
}

std::string new_session_id() {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mu);
  char buf[33];
  std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(rng()),
                static_cast<unsigned long long>(rng()));
  return buf;
}

std::size_t parse_index(const std::string &text) {
  if (text.empty() || text.size() > 9 || !std::all_of(text.begin(), text.end(), ::isdigit)) {
    throw HttpError{400, "invalid_frame", "bad frame index '" + text + "'"};
  }
  return static_cast<std::size_t>(std::stoul(text));
}

std::span<const std::uint8_t> bytes_of(const std::string &s) {
  return {reinterpret_cast<const std::uint8_t *>(s.data()), s.size()};
}

std::string to_string(const std::vector<std::uint8_t> &bytes) { return std::string(bytes.begin(), bytes.end()); }

} // namespace

struct SessionService::Impl {
  std::shared_ptr<const SegmentationNetwork> network;
  std::mutex mu;
  std::map<std::string, std::shared_ptr<Session>> sessions;

  ~Impl() {
    std::map<std::string, std::shared_ptr<Session>> all;
    {
      std::lock_guard lock(mu);
      all.swap(sessions);
    }
    for (auto &[id, s] : all) {
      shutdown(*s);
    }
  }

  static void shutdown(Session &s) {
    {
      std::lock_guard lock(s.mu);
      s.closed = true;
    }
    s.cv.notify_all();
    std::lock_guard wl(s.worker_mu);
    if (s.worker.joinable()) {
      s.worker.request_stop();
      s.worker.join();
    }
  }

  std::shared_ptr<Session> find(const std::string &id) {
    std::lock_guard lock(mu);
    const auto it = sessions.find(id);
    if (it == sessions.end()) {
      throw HttpError{404, "session_not_found", "no session '" + id + "'"};
    }
    return it->second;
  }

  static void push_event(Session &s, const json &event) {
    s.events.push_back(event.dump());
    s.cv.notify_all();
  }

  void propagate_worker(Session *s, std::size_t from, std::uint64_t job, std::stop_token stop) {
    std::vector<Image> frames;
    std::map<std::size_t, Reference> refs;
    InferenceConfig config;
    {
      std::lock_guard lock(s->mu);
      frames = s->frames;
      refs = s->references;
      config = s->config;
    }
    try {
      InferenceSession session(network, config);
      for (std::size_t t = refs.begin()->first; t < frames.size(); ++t) {
        if (stop.stop_requested()) {
          break;
        }
        LabelMap labels;
        const auto ref = refs.find(t);
        if (ref != refs.end()) {
          session.add_reference(frames[t], ref->second.mask, ref->second.permanent);
          labels = ref->second.mask;
        } else {
          labels = session.step(frames[t]);
        }
        if (t < from) {
          continue;
        }
        json runs = json::array();
        for (const auto &[label, count] : rle_encode(labels)) {
          runs.push_back({label, count});
        }
        std::lock_guard lock(s->mu);
        s->results[t] = std::move(labels);
        ++s->progress;
        push_event(*s, {{"type", "progress"},
                        {"job", job},
                        {"frame", t},
                        {"done", s->progress},
                        {"total", s->total},
                        {"preview", {{"height", frames[t].height}, {"width", frames[t].width}, {"rle", runs}}}});
      }
      std::lock_guard lock(s->mu);
      s->status = Status::Idle;
      push_event(*s, {{"type", "done"}, {"job", job}, {"cancelled", stop.stop_requested()}});
    } catch (const std::exception &e) {
      std::lock_guard lock(s->mu);
      s->status = Status::Error;
      s->error = e.what();
      push_event(*s, {{"type", "error"}, {"job", job}, {"message", e.what()}});
    }
  }

  // -- handlers --------------------------------------------------------------

  void create(const httplib::Request &req, httplib::Response &res) {
    auto s = std::make_shared<Session>();
    s->config = parse_overrides(req.body);
    s->id = new_session_id();
    {
      std::lock_guard lock(mu);
      sessions.emplace(s->id, s);
    }
    send_json(res, 201, {{"id", s->id}, {"config", config_json(s->config)}});
  }

  void status(const std::string &id, httplib::Response &res) {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    json refs = json::array();
    for (const auto &[t, r] : s->references) {
      refs.push_back({{"frame", t}, {"permanent", r.permanent}});
    }
    json computed = json::array();
    for (const auto &[t, m] : s->results) {
      computed.push_back(t);
    }
    json body{{"id", s->id},
              {"status", status_name(s->status)},
              {"job", s->job},
              {"progress", s->progress},
              {"total", s->total},
              {"frame_count", s->frames.size()},
              {"references", refs},
              {"computed", computed},
              {"config", config_json(s->config)}};
    if (!s->frames.empty()) {
      body["height"] = s->frames.front().height;
      body["width"] = s->frames.front().width;
    }
    if (s->status == Status::Error) {
      body["error"] = s->error;
    }
    send_json(res, 200, body);
  }

  void remove(const std::string &id, httplib::Response &res) {
    std::shared_ptr<Session> s;
    {
      std::lock_guard lock(mu);
      const auto it = sessions.find(id);
      if (it == sessions.end()) {
        throw HttpError{404, "session_not_found", "no session '" + id + "'"};
      }
      s = it->second;
      sessions.erase(it);
    }
    shutdown(*s);
    res.status = 204;
  }

  void upload_frames(const std::string &id, const httplib::Request &req, httplib::Response &res) {
    auto s = find(id);
    std::vector<std::string> payloads;
    if (req.is_multipart_form_data()) {
      std::vector<std::pair<std::string, std::string>> parts;
      for (const auto &[name, file] : req.files) {
        parts.emplace_back(name, file.content);
      }
      std::stable_sort(parts.begin(), parts.end(), [](const auto &a, const auto &b) { return a.first < b.first; });
      for (auto &p : parts) {
        payloads.push_back(std::move(p.second));
      }
    } else {
      payloads.push_back(req.body);
    }
    if (payloads.empty() || (payloads.size() == 1 && payloads.front().empty())) {
      throw HttpError{400, "no_frames", "request carries no images"};
    }
    std::vector<Image> decoded;
    decoded.reserve(payloads.size());
    for (const std::string &p : payloads) {
      try {
        decoded.push_back(decode_png_image(bytes_of(p)));
      } catch (const Error &e) {
        throw HttpError{400, "invalid_image", e.what()};
      }
    }
    std::lock_guard lock(s->mu);
    if (s->status == Status::Propagating) {
      throw HttpError{409, "session_busy", "session is propagating"};
    }
    const std::size_t h = s->frames.empty() ? decoded.front().height : s->frames.front().height;
    const std::size_t w = s->frames.empty() ? decoded.front().width : s->frames.front().width;
    for (const Image &img : decoded) {
      if (img.height != h || img.width != w) {
        throw HttpError{400, "dimension_mismatch",
                        "frame is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                            ", session frames are " + std::to_string(h) + "x" + std::to_string(w)};
      }
    }
    if (h < kSizeMultiple || w < kSizeMultiple) {
      throw HttpError{400, "invalid_image", "frames must be at least 16x16"};
    }
    for (Image &img : decoded) {
      s->frames.push_back(std::move(img));
    }
    send_json(res, 200, {{"frame_count", s->frames.size()}});
  }

  void get_frame(const std::string &id, const std::string &index, httplib::Response &res) {
    auto s = find(id);
    const std::size_t t = parse_index(index);
    std::lock_guard lock(s->mu);
    if (t >= s->frames.size()) {
      throw HttpError{404, "frame_not_found", "no frame " + index};
    }
    res.set_content(to_string(encode_png_image(s->frames[t])), "image/png");
  }

  void set_mask(const std::string &id, const std::string &index, const httplib::Request &req,
                httplib::Response &res) {
    auto s = find(id);
    const std::size_t t = parse_index(index);
    const std::string flag = req.get_param_value("permanent");
    const bool permanent = flag == "1" || flag == "true";
    LabelMap mask;
    {
      std::lock_guard lock(s->mu);
      if (t >= s->frames.size()) {
        throw HttpError{404, "frame_not_found", "no frame " + index};
      }
      if (s->status == Status::Propagating) {
        throw HttpError{409, "session_busy", "session is propagating"};
      }
    }
    try {
      mask = decode_mask(bytes_of(req.body));
    } catch (const Error &e) {
      throw HttpError{400, "invalid_mask", e.what()};
    }
    std::lock_guard lock(s->mu);
    if (s->status == Status::Propagating) {
      throw HttpError{409, "session_busy", "session is propagating"};
    }
    const Image &frame = s->frames[t];
    if (mask.height != frame.height || mask.width != frame.width) {
      throw HttpError{400, "dimension_mismatch",
                      "mask is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) + ", frame is " +
                          std::to_string(frame.height) + "x" + std::to_string(frame.width)};
    }
    json ids = mask.object_ids();
    s->results[t] = mask;
    s->references[t] = Reference{std::move(mask), permanent};
    send_json(res, 200, {{"frame", t}, {"permanent", permanent}, {"objects", ids}});
  }

  void get_mask(const std::string &id, const std::string &index, httplib::Response &res) {
    auto s = find(id);
    const std::size_t t = parse_index(index);
    std::lock_guard lock(s->mu);
    if (t >= s->frames.size()) {
      throw HttpError{404, "frame_not_found", "no frame " + index};
    }
    const auto it = s->results.find(t);
    if (it == s->results.end()) {
      throw HttpError{404, "mask_not_ready", "frame " + index + " has no mask yet"};
    }
    res.set_content(to_string(encode_mask_png(it->second)), "image/png");
  }

  void propagate(const std::string &id, const httplib::Request &req, httplib::Response &res) {
    auto s = find(id);
    json body = json::object();
    if (!req.body.empty()) {
      try {
        body = json::parse(req.body);
      } catch (const json::exception &e) {
        throw HttpError{400, "invalid_json", e.what()};
      }
      if (!body.is_object()) {
        throw HttpError{400, "invalid_request", "propagate body must be a JSON object"};
      }
    }
    const std::string direction = body.value("direction", std::string("forward"));
    if (direction != "forward") {
      throw HttpError{400, "unsupported_direction", "only forward propagation is supported"};
    }
    std::size_t from = 0;
    std::uint64_t job = 0;
    {
      std::lock_guard lock(s->mu);
      if (s->status == Status::Propagating) {
        throw HttpError{409, "session_busy", "a propagation is already running"};
      }
      if (s->references.empty()) {
        throw HttpError{409, "no_reference", "set a mask on at least one frame first"};
      }
      const std::size_t first = s->references.begin()->first;
      from = first;
      if (body.contains("from")) {
        if (!body["from"].is_number_unsigned()) {
          throw HttpError{400, "invalid_request", "'from' must be a frame index"};
        }
        from = std::max(first, body["from"].get<std::size_t>());
      }
      if (from >= s->frames.size()) {
        throw HttpError{400, "invalid_request", "'from' is past the last frame"};
      }
      s->status = Status::Propagating;
      s->error.clear();
      ++s->job;
      job = s->job;
      s->progress = 0;
      s->total = s->frames.size() - from;
    }
    {
      std::lock_guard wl(s->worker_mu);
      if (s->worker.joinable()) {
        s->worker.join();
      }
      s->worker = std::jthread([this, raw = s.get(), from, job](std::stop_token st) {
        propagate_worker(raw, from, job, st);
      });
    }
    send_json(res, 202, {{"job", job}, {"from", from}, {"to", s->frames.size() - 1}});
  }

  void events(const std::string &id, const httplib::Request &req, httplib::Response &res) {
    auto s = find(id);
    std::size_t since = 0;
    if (req.has_param("since")) {
      since = parse_index(req.get_param_value("since"));
    }
    const std::string until = req.get_param_value("until_idle");
    const bool until_idle = until == "1" || until == "true";
    auto cursor = std::make_shared<std::size_t>(since);
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("application/x-ndjson", [s, cursor, until_idle](std::size_t,
                                                                                     httplib::DataSink &sink) {
      std::vector<std::string> lines;
      bool finished = false;
      {
        std::unique_lock lock(s->mu);
        s->cv.wait_for(lock, std::chrono::milliseconds(250), [&] {
          return s->events.size() > *cursor || s->closed || (until_idle && s->status != Status::Propagating);
        });
        for (; *cursor < s->events.size(); ++*cursor) {
          lines.push_back(s->events[*cursor] + "\n");
        }
        finished = s->closed || (until_idle && s->status != Status::Propagating);
      }
      for (const std::string &line : lines) {
        if (!sink.write(line.data(), line.size())) {
          return false;
        }
      }
      if (finished) {
        sink.done();
        return true;
      }
      return sink.is_writable();
    });
  }
};

SessionService::SessionService(std::shared_ptr<const SegmentationNetwork> network) : impl_(std::make_unique<Impl>()) {
  if (!network) {
    throw ConfigError("service needs a network");
  }
  impl_->network = std::move(network);
}

SessionService::~SessionService() = default;

void SessionService::mount(httplib::Server &server) {
  Impl *impl = impl_.get();
  // Route wrapper: maps HttpError and engine errors to JSON error bodies.
  auto wrap = [](auto fn) {
    return [fn](const httplib::Request &req, httplib::Response &res) {
      try {
        fn(req, res);
      } catch (const HttpError &e) {
        send_error(res, e.status, e.code, e.message);
      } catch (const InputError &e) {
        send_error(res, 400, "invalid_input", e.what());
      } catch (const std::exception &e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, PUT, DELETE, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(/.*)", [](const httplib::Request &, httplib::Response &res) { res.status = 204; });

  server.Post("/sessions", wrap([impl](const auto &req, auto &res) { impl->create(req, res); }));
  server.Get(R"(/sessions/([0-9a-f]+))",
             wrap([impl](const auto &req, auto &res) { impl->status(req.matches[1], res); }));
  server.Delete(R"(/sessions/([0-9a-f]+))",
                wrap([impl](const auto &req, auto &res) { impl->remove(req.matches[1], res); }));
  server.Post(R"(/sessions/([0-9a-f]+)/frames)",
              wrap([impl](const auto &req, auto &res) { impl->upload_frames(req.matches[1], req, res); }));
  server.Get(R"(/sessions/([0-9a-f]+)/frames/(\d+))",
             wrap([impl](const auto &req, auto &res) { impl->get_frame(req.matches[1], req.matches[2], res); }));
  server.Put(R"(/sessions/([0-9a-f]+)/masks/(\d+))", wrap([impl](const auto &req, auto &res) {
               impl->set_mask(req.matches[1], req.matches[2], req, res);
             }));
  server.Get(R"(/sessions/([0-9a-f]+)/masks/(\d+))",
             wrap([impl](const auto &req, auto &res) { impl->get_mask(req.matches[1], req.matches[2], res); }));
  server.Post(R"(/sessions/([0-9a-f]+)/propagate)",
              wrap([impl](const auto &req, auto &res) { impl->propagate(req.matches[1], req, res); }));
  server.Get(R"(/sessions/([0-9a-f]+)/events)",
             wrap([impl](const auto &req, auto &res) { impl->events(req.matches[1], req, res); }));
}

} // namespace cutie::tools
