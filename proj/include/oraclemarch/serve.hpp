// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>

#include "oraclemarch/error.hpp"
#include "oraclemarch/image.hpp"
#include "oraclemarch/metrics.hpp"
#include "oraclemarch/render.hpp"
#include "oraclemarch/train.hpp"

namespace oraclemarch::serve {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

constexpr uint32_t kFlagClamped = 1u;

struct PoseRequest {
  uint32_t id;
  Vec3 position;
  double yaw_deg;
  double pitch_deg;
};

/// Parses a client pose message; throws MalformedMessage.
inline PoseRequest parse_pose_request(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedMessage, std::string("invalid JSON: ") + e.what());
  }
  auto number = [&](const nlohmann::json& v, const char* what) {
    require(v.is_number() && std::isfinite(v.get<double>()), ErrorCode::MalformedMessage,
            std::string(what) + " must be a finite number");
    return v.get<double>();
  };
  require(j.is_object(), ErrorCode::MalformedMessage, "message must be a JSON object");
  require(j.contains("id") && j["id"].is_number_unsigned() && j["id"].get<uint64_t>() <= UINT32_MAX,
          ErrorCode::MalformedMessage, "id must be an unsigned 32-bit integer");
  require(j.contains("pos") && j["pos"].is_array() && j["pos"].size() == 3, ErrorCode::MalformedMessage,
          "pos must be an array of three numbers");
  require(j.contains("yaw") && j.contains("pitch"), ErrorCode::MalformedMessage, "yaw and pitch are required");
  PoseRequest r;
  r.id = j["id"].get<uint32_t>();
  for (int k = 0; k < 3; ++k) r.position[k] = number(j["pos"][k], "pos entry");
  r.yaw_deg = number(j["yaw"], "yaw");
  r.pitch_deg = number(j["pitch"], "pitch");
  return r;
}

/// 16-byte little-endian header (id, width, height, flags) followed by RGB8 pixels.
inline std::vector<uint8_t> encode_frame(uint32_t id, const Image& img, uint32_t flags) {
  const auto rgb = to_rgb8(img);
  std::vector<uint8_t> out(16 + rgb.size());
  const uint32_t head[4] = {id, uint32_t(img.width), uint32_t(img.height), flags};
  std::memcpy(out.data(), head, sizeof head);
  std::memcpy(out.data() + 16, rgb.data(), rgb.size());
  return out;
}

struct FrameHeader {
  uint32_t id, width, height, flags;
};

inline FrameHeader decode_frame_header(std::span<const uint8_t> data) {
  require(data.size() >= 16, ErrorCode::MalformedMessage, "frame shorter than its header");
  FrameHeader h;
  std::memcpy(&h, data.data(), 16);
  return h;
}

struct ServeOptions {
  std::string host = "127.0.0.1";
  uint16_t port = 8080;  // 0 picks an ephemeral port
  int width = 64;
  int height = 64;
  int render_threads = 1;
};

/// Immutable state shared by every connection.
struct Shared {
  Checkpoint checkpoint;
  Pipeline pipeline;
  ServeOptions options;
  asio::thread_pool workers;

  Shared(Checkpoint ck, ServeOptions opt)
      : checkpoint(std::move(ck)),
        pipeline(checkpoint.make_pipeline()),
        options(std::move(opt)),
        workers(size_t(std::max(1, options.render_threads))) {}

  nlohmann::json info() const {
    const auto& c = checkpoint.cell;
    return {{"scene", checkpoint.scene},
            {"view_cell",
             {{"center", vec_json(c.center())},
              {"size", vec_json(c.size())},
              {"box_min", vec_json(c.box_min())},
              {"box_max", vec_json(c.box_max())},
              {"forward", vec_json(c.forward())},
              {"max_pitch_deg", c.max_pitch_deg()},
              {"max_yaw_deg", c.max_yaw_deg()}}},
            {"fov_deg", checkpoint.fov_deg},
            {"resolution", {options.width, options.height}},
            {"samples", checkpoint.pipeline.samples},
            {"mode", std::string(to_string(checkpoint.pipeline.mode))},
            {"oracle", std::string(to_string(checkpoint.pipeline.oracle.kind))},
            {"mflop_per_pixel", double(pipeline_flops_per_pixel(checkpoint)) / 1e6}};
  }
};

/// One websocket connection. At most one render is in flight; a newer pose replaces
/// a pending one, which is acknowledged as superseded.
class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket socket, std::shared_ptr<Shared> shared)
      : ws_(std::move(socket)), shared_(std::move(shared)) {}

  template <typename Request>
  void start(Request req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&Session::on_accept, shared_from_this()));
  }

 private:
  struct Outgoing {
    bool binary;
    std::shared_ptr<std::vector<uint8_t>> data;
  };

  void on_accept(beast::error_code ec) {
    if (!ec) read();
  }

  void read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&Session::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, size_t) {
    if (ec) return;  // closed or failed; pending work holds its own reference
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    try {
      require(ws_.got_text(), ErrorCode::MalformedMessage, "pose messages must be text frames");
      const auto req = parse_pose_request(text);
      if (pending_) send_json({{"type", "superseded"}, {"id", pending_->id}});
      pending_ = req;
      maybe_render();
    } catch (const Error& e) {
      send_json({{"type", "error"}, {"code", std::string(to_string(e.code()))}, {"message", e.what()}});
    }
    read();
  }

  void maybe_render() {
    if (rendering_ || !pending_) return;
    rendering_ = true;
    const PoseRequest req = *pending_;
    pending_.reset();
    auto self = shared_from_this();
    asio::post(shared_->workers, [self, req] {
      const auto& sh = *self->shared_;
      const auto t0 = std::chrono::steady_clock::now();
      const Pose raw = make_pose(sh.checkpoint.cell, req.position, req.yaw_deg, req.pitch_deg,
                                 sh.checkpoint.fov_deg);
      const auto cp = clamp_pose(sh.checkpoint.cell, raw);
      auto frame = std::make_shared<std::vector<uint8_t>>();
      nlohmann::json meta;
      try {
        const auto img = render_image(cp.pose, sh.pipeline, sh.options.width, sh.options.height, 1);
        *frame = encode_frame(req.id, img.image, cp.clamped ? kFlagClamped : 0u);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        meta = {{"type", "meta"},
                {"id", req.id},
                {"clamped", cp.clamped},
                {"pose",
                 {{"pos", vec_json(cp.pose.position)}, {"yaw", cp.pose.yaw_deg}, {"pitch", cp.pose.pitch_deg}}},
                {"width", sh.options.width},
                {"height", sh.options.height},
                {"render_ms", ms}};
      } catch (const Error& e) {
        frame.reset();
        meta = {{"type", "error"}, {"id", req.id}, {"code", std::string(to_string(e.code()))}, {"message", e.what()}};
      }
      asio::post(self->ws_.get_executor(), [self, meta = std::move(meta), frame] {
        self->send_json(meta);
        if (frame) self->send({true, frame});
        self->rendering_ = false;
        self->maybe_render();
      });
    });
  }

  void send_json(const nlohmann::json& j) {
    const std::string s = j.dump();
    send({false, std::make_shared<std::vector<uint8_t>>(s.begin(), s.end())});
  }

  void send(Outgoing msg) {
    queue_.push_back(std::move(msg));
    if (queue_.size() == 1) write_next();
  }

  void write_next() {
    auto& m = queue_.front();
    ws_.binary(m.binary);
    ws_.async_write(asio::buffer(*m.data), beast::bind_front_handler(&Session::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, size_t) {
    if (ec) {
      queue_.clear();
      return;
    }
    queue_.pop_front();
    if (!queue_.empty()) write_next();
  }

  websocket::stream<beast::tcp_stream> ws_;
  std::shared_ptr<Shared> shared_;
  beast::flat_buffer buffer_;
  std::optional<PoseRequest> pending_;
  bool rendering_ = false;
  std::deque<Outgoing> queue_;
};

/// Plain HTTP connection: serves /info or upgrades /stream to a websocket.
class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, std::shared_ptr<Shared> shared)
      : stream_(std::move(socket)), shared_(std::move(shared)) {}

  void start() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, size_t) {
    if (ec) return;
    const std::string target(req_.target());
    if (websocket::is_upgrade(req_)) {
      if (target == "/stream") {
        stream_.expires_never();
        std::make_shared<Session>(stream_.release_socket(), shared_)->start(std::move(req_));
        return;
      }
    }
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->keep_alive(req_.keep_alive());
    res->set(http::field::server, "oraclemarch");
    res->set(http::field::access_control_allow_origin, "*");
    if (target == "/info" && req_.method() == http::verb::get) {
      res->result(http::status::ok);
      res->set(http::field::content_type, "application/json");
      res->body() = shared_->info().dump();
    } else {
      res->result(http::status::not_found);
      res->set(http::field::content_type, "text/plain");
      res->body() = "not found\n";
    }
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code e, size_t) {
      if (e || !res->keep_alive()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->read();
    });
  }

  beast::tcp_stream stream_;
  std::shared_ptr<Shared> shared_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

class Server {
 public:
  Server(Checkpoint ck, ServeOptions opt)
      : shared_(std::make_shared<Shared>(std::move(ck), std::move(opt))), acceptor_(ioc_) {
    require(shared_->checkpoint.shading.has_value(), ErrorCode::IncompatibleCheckpoint,
            "serve needs a checkpoint with a shading network");
    require(shared_->options.width > 0 && shared_->options.height > 0, ErrorCode::InvalidArgument,
            "resolution must be positive");
    try {
      const tcp::endpoint ep(asio::ip::make_address(shared_->options.host), shared_->options.port);
      acceptor_.open(ep.protocol());
      acceptor_.set_option(asio::socket_base::reuse_address(true));
      acceptor_.bind(ep);
      acceptor_.listen();
    } catch (const boost::system::system_error& e) {
      throw Error(ErrorCode::BindError, shared_->options.host + ":" + std::to_string(shared_->options.port) +
                                            ": " + e.what());
    }
  }

  ~Server() { stop(); }

  uint16_t port() const { return acceptor_.local_endpoint().port(); }

  /// Runs the network loop on a background thread.
  void start() {
    accept();
    thread_ = std::thread([this] { ioc_.run(); });
  }

  /// Runs the network loop on the calling thread until stop().
  void run() {
    accept();
    ioc_.run();
  }

  /// Like run(), but returns after SIGINT or SIGTERM.
  void run_until_signal() {
    asio::signal_set signals(ioc_, SIGINT, SIGTERM);
    signals.async_wait([this](beast::error_code, int) {
      acceptor_.close();
      ioc_.stop();
    });
    run();
  }

  void stop() {
    if (stopped_.exchange(true)) return;
    ioc_.stop();
    if (thread_.joinable()) thread_.join();
    shared_->workers.join();
  }

 private:
  void accept() {
    acceptor_.async_accept(asio::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (!ec) {
        beast::error_code ignored;
        socket.set_option(tcp::no_delay(true), ignored);
        std::make_shared<HttpSession>(std::move(socket), shared_)->start();
      }
      if (acceptor_.is_open()) accept();
    });
  }

  asio::io_context ioc_;
  std::shared_ptr<Shared> shared_;
  tcp::acceptor acceptor_;
  std::thread thread_;
  std::atomic<bool> stopped_{false};
};

}  // namespace oraclemarch::serve
