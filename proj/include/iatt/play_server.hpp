#pragma once

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "iatt/play.hpp"

namespace iatt {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

// Builds a session for the requested role; may throw ConfigError.
using SessionFactory = std::function<std::unique_ptr<PlaySession>(std::optional<Role> requested, int connection)>;

struct ServerOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 0;  // 0 = pick a free port
  std::chrono::milliseconds tick{1000 / kTickHz};
};

// Websocket endpoint /session. Everything runs on one io_context thread, so
// sessions need no locking; the finished-log list is shared with callers.
class PlayServer {
 public:
  PlayServer(SessionFactory factory, ServerOptions opts)
      : factory_(std::move(factory)), opts_(opts), acceptor_(ioc_) {
    tcp::endpoint ep(net::ip::make_address(opts_.address), opts_.port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
  }
  ~PlayServer() { stop(); }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  void start() {
    accept();
    thread_ = std::thread([this] { ioc_.run(); });
  }
  // Blocks the caller until stop() is called from elsewhere.
  void run() {
    accept();
    ioc_.run();
  }
  void stop() {
    ioc_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::vector<SessionLog> logs() const {
    std::lock_guard<std::mutex> lk(mu_);
    return logs_;
  }
  void on_log(std::function<void(const SessionLog&)> cb) { log_cb_ = std::move(cb); }

 private:
  class Connection : public std::enable_shared_from_this<Connection> {
   public:
    Connection(PlayServer& srv, tcp::socket sock, int id) : srv_(srv), ws_(std::move(sock)), timer_(srv.ioc_), id_(id) {}

    void start() {
      http::async_read(ws_.next_layer(), buf_, req_,
                       [self = shared_from_this()](beast::error_code ec, size_t) { self->on_request(ec); });
    }

   private:
    void on_request(beast::error_code ec) {
      if (ec) return;
      std::string target(req_.target());
      if (auto q = target.find('?'); q != std::string::npos) target.resize(q);
      if (!websocket::is_upgrade(req_) || target != "/session") {
        auto res = std::make_shared<http::response<http::string_body>>(http::status::not_found, req_.version());
        res->set(http::field::content_type, "text/plain");
        res->body() = "websocket endpoint is /session\n";
        res->prepare_payload();
        http::async_write(ws_.next_layer(), *res, [self = shared_from_this(), res](beast::error_code, size_t) {
          beast::error_code ignored;
          self->ws_.next_layer().shutdown(tcp::socket::shutdown_both, ignored);
        });
        return;
      }
      ws_.text(true);
      ws_.async_accept(req_, [self = shared_from_this()](beast::error_code e) {
        if (!e) self->read();
      });
    }

    void read() {
      ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, size_t) { self->on_read(ec); });
    }

    void on_read(beast::error_code ec) {
      if (ec) {
        closed_ = true;
        timer_.cancel();
        finish();
        return;
      }
      const std::string text = beast::buffers_to_string(in_.data());
      in_.consume(in_.size());
      handle(text);
      read();
    }

    void handle(const std::string& text) {
      ClientMessage m;
      try {
        m = parse_client_message(text);
      } catch (const ProtocolError& e) {
        send(error_message(e.what()));
        return;
      }
      if (m.type == ClientMessage::Type::join) {
        if (session_) {
          send(error_message("already joined"));
          return;
        }
        if (m.version != kProtocolVersion) {
          send(error_message("protocol version " + std::to_string(m.version) + " unsupported, server speaks " +
                             std::to_string(kProtocolVersion)));
          return;
        }
        try {
          session_ = srv_.factory_(m.role, id_);
        } catch (const std::exception& e) {
          send(error_message(e.what()));
          return;
        }
        send(session_->joined_message());
        send(session_->state_message());
        schedule_tick();
      } else {
        if (!session_) {
          send(error_message("join before sending actions"));
          return;
        }
        session_->post(m.key);
      }
    }

    void schedule_tick() {
      timer_.expires_after(srv_.opts_.tick);
      timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
        if (!ec) self->on_tick();
      });
    }

    void on_tick() {
      if (closed_ || !session_ || session_->finished()) return;
      for (const auto& msg : session_->tick()) send(msg);
      if (session_->finished()) {
        finish();
        close_after_send_ = true;
        if (out_.empty()) close();
        return;
      }
      schedule_tick();
    }

    void send(const json& msg) {
      out_.push_back(msg.dump());
      if (out_.size() == 1) write();
    }

    void write() {
      ws_.async_write(net::buffer(out_.front()), [self = shared_from_this()](beast::error_code ec, size_t) {
        if (ec) {
          self->out_.clear();
          return;
        }
        self->out_.pop_front();
        if (!self->out_.empty()) {
          self->write();
        } else if (self->close_after_send_) {
          self->close();
        }
      });
    }

    void close() {
      ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {});
    }

    void finish() {
      if (!session_ || logged_) return;
      logged_ = true;
      if (!session_->finished()) session_->abort();
      {
        std::lock_guard<std::mutex> lk(srv_.mu_);
        srv_.logs_.push_back(session_->log());
      }
      if (srv_.log_cb_) srv_.log_cb_(session_->log());
    }

    PlayServer& srv_;
    websocket::stream<tcp::socket> ws_;
    net::steady_timer timer_;
    beast::flat_buffer buf_;
    beast::flat_buffer in_;
    http::request<http::string_body> req_;
    std::deque<std::string> out_;
    std::unique_ptr<PlaySession> session_;
    int id_;
    bool closed_ = false;
    bool logged_ = false;
    bool close_after_send_ = false;
  };

  void accept() {
    acceptor_.async_accept([this](beast::error_code ec, tcp::socket sock) {
      if (!ec) std::make_shared<Connection>(*this, std::move(sock), next_id_++)->start();
      if (acceptor_.is_open()) accept();
    });
  }

  SessionFactory factory_;
  ServerOptions opts_;
  net::io_context ioc_;
  tcp::acceptor acceptor_;
  std::thread thread_;
  mutable std::mutex mu_;
  std::vector<SessionLog> logs_;
  std::function<void(const SessionLog&)> log_cb_;
  int next_id_ = 0;
};

}  // namespace iatt
