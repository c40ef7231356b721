// SPDX-License-Identifier: Apache-2.0
#include <csignal>
#include <iostream>

#include <CLI11.hpp>
#include <httplib.h>

#include "cutie/errors.hpp"
#include "cutie/weights_io.hpp"
#include "cutie_tools/cli.hpp"
#include "cutie_tools/service.hpp"

namespace {
httplib::Server *g_server = nullptr;
void on_signal(int) {
  if (g_server) {
    g_server->stop();
  }
}
} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Annotation session server"};
  std::string host = "127.0.0.1", weights;
  int port = 8080;
  std::uint64_t seed = 0;
  app.add_option("--host", host)->capture_default_str();
  app.add_option("--port", port)->capture_default_str()->check(CLI::Range(0, 65535));
  auto *w = app.add_option("--weights", weights, "Weight file");
  auto *r = app.add_option("--random-init", seed, "Use random weights with this seed");
  w->excludes(r);
  CLI11_PARSE(app, argc, argv);
  if (w->count() == 0 && r->count() == 0) {
    std::cerr << "error: one of --weights or --random-init is required\n";
    return cutie::tools::kExitUsage;
  }

  std::shared_ptr<const cutie::SegmentationNetwork> network;
  try {
    const cutie::ModelConfig model;
    network = r->count() ? std::make_shared<cutie::SegmentationNetwork>(cutie::SegmentationNetwork::random(model, seed))
                         : std::make_shared<cutie::SegmentationNetwork>(cutie::load_weights(weights), model);
  } catch (const cutie::CompatibilityError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return cutie::tools::kExitIncompatibleWeights;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return cutie::tools::kExitMissingInput;
  }

  httplib::Server server;
  {
    cutie::tools::SessionService service(network);
    service.mount(server);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "listening on " << host << ":" << port << std::endl;
    if (!server.listen(host, port)) {
      std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
      return cutie::tools::kExitFailure;
    }
  }
  return cutie::tools::kExitOk;
}
