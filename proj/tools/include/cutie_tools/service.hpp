// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cutie/image.hpp"
#include "cutie/network.hpp"

namespace httplib {
class Server;
}

namespace cutie::tools {

/// Run-length encoding of a label map in row-major order: (label, run) pairs.
using RunLengths = std::vector<std::pair<std::uint8_t, std::uint32_t>>;
RunLengths rle_encode(const LabelMap &mask);
LabelMap rle_decode(const RunLengths &runs, std::size_t height, std::size_t width);

/// Session-oriented annotation service. Routes (all errors are JSON
/// {"code", "message"}):
///
///   POST   /sessions                       JSON config overrides -> {"id", "config"}
///   GET    /sessions/{id}                  status, frame count, references, computed frames
///   DELETE /sessions/{id}
///   POST   /sessions/{id}/frames           PNG body, or multipart with one PNG per part
///                                          (parts taken in field-name order) -> {"frame_count"}
///   GET    /sessions/{id}/frames/{i}       PNG
///   PUT    /sessions/{id}/masks/{i}        mask body (PNG/PGM); ?permanent=true pins the frame
///   GET    /sessions/{id}/masks/{i}        indexed PNG; 404 until computed
///   POST   /sessions/{id}/propagate        JSON {"from": i, "direction": "forward"} -> 202
///   GET    /sessions/{id}/events           NDJSON stream of progress events; ?since=n skips
///                                          the first n events, ?until_idle=1 closes once idle
///
/// Propagation replays the session from its first reference with fresh
/// memories, registering every stored reference on its frame, and stores
/// results only for frames >= from. Frames before `from` keep their masks.
class SessionService {
public:
  explicit SessionService(std::shared_ptr<const SegmentationNetwork> network);
  ~SessionService();
  SessionService(const SessionService &) = delete;
  SessionService &operator=(const SessionService &) = delete;

  void mount(httplib::Server &server);

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace cutie::tools
