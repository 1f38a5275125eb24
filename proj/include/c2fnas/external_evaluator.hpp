#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "c2fnas/errors.hpp"
#include "c2fnas/evaluation.hpp"

extern char** environ;

namespace c2fnas {

inline constexpr int kProtocolVersion = 1;

struct ExternalConfig {
  std::string command;              // run through /bin/sh -c
  double timeout_seconds = 600.0;   // per request
  double handshake_seconds = 30.0;
};

// One child process speaking the line-delimited JSON protocol on its stdin/stdout.
// A session is owned by one thread; run one session per worker for concurrency.
// After any transport or protocol failure the session is closed and further calls throw.
class ExternalSession final : public Evaluator {
 public:
  explicit ExternalSession(ExternalConfig config) : config_(std::move(config)) {
    spawn();
    handshake();
  }

  ExternalSession(const ExternalSession&) = delete;
  ExternalSession& operator=(const ExternalSession&) = delete;

  ~ExternalSession() override { shutdown(); }

  EvaluationResult evaluate(const EvaluationRequest& request) override {
    if (!alive_) throw ChildExitedError("external evaluator session is closed");
    EvaluationRequest r = request;
    r.id = next_id_++;
    const auto start = std::chrono::steady_clock::now();
    const auto deadline = start + to_duration(config_.timeout_seconds);
    send_line(request_to_wire(r).dump(), deadline);
    const std::string line = read_line(deadline);

    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail();
      throw MalformedResponseError(std::string("unparseable response: ") + e.what(), line);
    }
    if (!reply.is_object() || !reply.contains("id") || !reply["id"].is_number_integer()) {
      fail();
      throw MalformedResponseError("response lacks an integer \"id\"", line);
    }
    const long long got = reply["id"].get<long long>();
    if (got != r.id) {
      fail();
      throw IdMismatchError(r.id, got, line);
    }
    if (reply.contains("error"))
      throw EvaluationError("evaluator rejected request " + std::to_string(r.id) + ": " +
                                reply["error"].dump(),
                            line);
    if (!reply.contains("score") || !reply["score"].is_number())
      throw MalformedResponseError("response lacks a numeric \"score\"", line);

    EvaluationResult out;
    out.id = got;
    out.score = reply["score"].get<double>();
    if (!std::isfinite(out.score) || out.score < 0.0 || out.score > 1.0)
      throw ScoreRangeError("score " + reply["score"].dump() + " outside [0, 1]", line);
    if (reply.contains("metrics")) {
      if (!reply["metrics"].is_object()) throw MalformedResponseError("\"metrics\" is not an object", line);
      for (const auto& [k, v] : reply["metrics"].items()) {
        if (!v.is_number()) throw MalformedResponseError("metric \"" + k + "\" is not a number", line);
        out.metrics[k] = v.get<double>();
      }
    }
    out.duration = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
  }

  bool alive() const noexcept { return alive_; }
  pid_t pid() const noexcept { return pid_; }
  long long requests_sent() const noexcept { return next_id_ - 1; }

 private:
  using Clock = std::chrono::steady_clock;

  static Clock::duration to_duration(double seconds) {
    return std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(seconds));
  }

  void spawn() {
    int to_child[2];
    int from_child[2];
    // socketpair for the request channel so writes can use MSG_NOSIGNAL
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, to_child) != 0)
      throw EvaluationError(std::string("socketpair: ") + std::strerror(errno));
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw EvaluationError(std::string("pipe: ") + std::strerror(errno));
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, to_child[1], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);

    std::string sh = "/bin/sh", dash_c = "-c", cmd = config_.command;
    char* argv[] = {sh.data(), dash_c.data(), cmd.data(), nullptr};
    // own process group, so a kill also reaches whatever the shell started
    posix_spawnattr_t attr;
    posix_spawnattr_init(&attr);
    posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
    posix_spawnattr_setpgroup(&attr, 0);
    const int rc = ::posix_spawn(&pid_, "/bin/sh", &actions, &attr, argv, environ);
    posix_spawnattr_destroy(&attr);
    posix_spawn_file_actions_destroy(&actions);
    ::close(to_child[1]);
    ::close(from_child[1]);
    if (rc != 0) {
      ::close(to_child[0]);
      ::close(from_child[0]);
      throw EvaluationError("cannot launch evaluator \"" + config_.command + "\": " + std::strerror(rc));
    }
    write_fd_ = to_child[0];
    read_fd_ = from_child[0];
    alive_ = true;
  }

  void handshake() {
    const auto deadline = Clock::now() + to_duration(config_.handshake_seconds);
    send_line(nlohmann::ordered_json{{"cmd", "hello"}, {"version", kProtocolVersion}}.dump(), deadline);
    const std::string line = read_line(deadline);
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      fail();
      throw MalformedResponseError("unparseable handshake", line);
    }
    if (!reply.is_object() || reply.value("cmd", "") != "hello") {
      fail();
      throw MalformedResponseError("expected hello handshake", line);
    }
    if (reply.value("version", -1) != kProtocolVersion) {
      fail();
      throw EvaluationError("evaluator protocol version " + reply.value("version", nlohmann::json()).dump() +
                                ", expected " + std::to_string(kProtocolVersion),
                            line);
    }
  }

  void send_line(std::string line, Clock::time_point deadline) {
    line.push_back('\n');
    std::size_t off = 0;
    while (off < line.size()) {
      if (!wait_fd(write_fd_, POLLOUT, deadline)) {
        fail();
        throw TimeoutError("timed out writing request to evaluator");
      }
      const ssize_t n = ::send(write_fd_, line.data() + off, line.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        child_gone("evaluator closed its input");
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line(Clock::time_point deadline) {
    while (true) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        return line;
      }
      if (!wait_fd(read_fd_, POLLIN, deadline)) {
        fail();
        throw TimeoutError("evaluator did not answer within " + std::to_string(config_.timeout_seconds) + " s",
                           buffer_);
      }
      char chunk[4096];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        child_gone(std::string("read failed: ") + std::strerror(errno));
      }
      if (n == 0) child_gone("evaluator closed its output");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  static bool wait_fd(int fd, short events, Clock::time_point deadline) {
    while (true) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
      if (left <= 0) return false;
      pollfd p{fd, events, 0};
      const int rc = ::poll(&p, 1, static_cast<int>(std::min<long long>(left, 1 << 30)));
      if (rc > 0) return true;
      if (rc < 0 && errno != EINTR) return true;  // let the read/write report it
    }
  }

  [[noreturn]] void child_gone(const std::string& what) {
    const std::string pending = buffer_;
    const int status = reap(std::chrono::milliseconds(500));
    std::string detail = what;
    if (status >= 0) {
      if (WIFEXITED(status)) detail += " (exit status " + std::to_string(WEXITSTATUS(status)) + ")";
      else if (WIFSIGNALED(status)) detail += " (killed by signal " + std::to_string(WTERMSIG(status)) + ")";
    }
    fail();
    throw ChildExitedError(detail, pending);
  }

  // Waits up to `grace` for the child; returns its wait status or -1.
  int reap(std::chrono::milliseconds grace) {
    if (pid_ <= 0) return -1;
    const auto until = Clock::now() + grace;
    int status = 0;
    while (true) {
      const pid_t r = ::waitpid(pid_, &status, WNOHANG);
      if (r == pid_) {
        pid_ = -1;
        return status;
      }
      if (r < 0 || Clock::now() >= until) return -1;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }

  void fail() {
    alive_ = false;
    close_fds();
    if (pid_ > 0) {
      ::kill(-pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
      pid_ = -1;
    }
  }

  void close_fds() {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    write_fd_ = read_fd_ = -1;
  }

  void shutdown() {
    alive_ = false;
    close_fds();  // EOF on stdin asks the child to exit
    if (pid_ > 0 && reap(std::chrono::milliseconds(2000)) < 0 && pid_ > 0) {
      ::kill(-pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
      pid_ = -1;
    }
  }

  ExternalConfig config_;
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  bool alive_ = false;
  long long next_id_ = 1;
  std::string buffer_;
};

}  // namespace c2fnas
