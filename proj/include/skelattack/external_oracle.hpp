#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "skelattack/errors.hpp"
#include "skelattack/oracle.hpp"
#include "skelattack/png_io.hpp"
#include "skelattack/util.hpp"

extern char** environ;

namespace skelattack {

struct ExternalOracleConfig {
  std::string command;
  std::vector<std::string> args;
  std::uint64_t query_budget = 1'000'000;
  int timeout_ms = 30'000;
  int startup_timeout_ms = 60'000;
};

/// Wire format of one request line (no trailing newline).
inline std::string encode_oracle_request(std::uint64_t id, const GrayImage& img) {
  nlohmann::ordered_json req;
  req["id"] = id;
  req["png_b64"] = base64_encode(png::encode(img));
  return req.dump();
}

/// Child process speaking newline-delimited JSON on stdin/stdout.
///
/// The child must print `{"ready":true}` before anything else, then answer
/// each `{"id":N,"png_b64":...}` line with `{"id":N,"latex":...}` or
/// `{"id":N,"error":...}`. Requests are serialised: one in flight at a time.
/// Any protocol violation, error response, crash or timeout surfaces as
/// OracleUnavailable.
class ExternalProcessOracle final : public VictimOracle {
 public:
  explicit ExternalProcessOracle(ExternalOracleConfig cfg)
      : VictimOracle(cfg.query_budget), cfg_(std::move(cfg)) {
    // A dead child must surface as an error on write, not kill us.
    ::signal(SIGPIPE, SIG_IGN);
    spawn();
    const auto line = read_line(cfg_.startup_timeout_ms);
    if (!line) {
      shutdown();
      throw OracleUnavailable("external oracle '" + cfg_.command +
                              "' did not complete the handshake");
    }
    bool ready = false;
    try {
      const auto j = nlohmann::json::parse(*line);
      ready = j.is_object() && j.value("ready", false);
    } catch (const nlohmann::json::exception&) {
    }
    if (!ready) {
      shutdown();
      throw OracleUnavailable("external oracle sent bad handshake: " + *line);
    }
  }

  ~ExternalProcessOracle() override { shutdown(); }

  pid_t pid() const { return pid_; }

 protected:
  std::string transcribe(const GrayImage& img) override {
    std::lock_guard lock(mutex_);
    if (pid_ <= 0) throw OracleUnavailable("external oracle is not running");
    const std::uint64_t id = next_id_++;
    nlohmann::json resp;
    try {
      write_all(encode_oracle_request(id, img) + "\n");
      const auto line = read_line(cfg_.timeout_ms);
      if (!line) {
        throw OracleUnavailable("external oracle timed out or exited on request " +
                                std::to_string(id));
      }
      try {
        resp = nlohmann::json::parse(*line);
      } catch (const nlohmann::json::exception&) {
        throw OracleUnavailable("external oracle sent malformed response: " + *line);
      }
      if (!resp.is_object() || !resp.contains("id") || !resp["id"].is_number_unsigned() ||
          resp["id"].get<std::uint64_t>() != id) {
        throw OracleUnavailable("external oracle response id mismatch: " + *line);
      }
    } catch (const OracleUnavailable&) {
      // The stream can no longer be trusted to stay in step.
      shutdown();
      throw;
    }
    if (resp.contains("error")) {
      throw OracleUnavailable("external oracle error on request " + std::to_string(id) + ": " +
                              resp["error"].dump());
    }
    if (!resp.contains("latex") || !resp["latex"].is_string()) {
      throw OracleUnavailable("external oracle response lacks latex: " + resp.dump());
    }
    return resp["latex"].get<std::string>();
  }

 private:
  void spawn() {
    int in_pipe[2];
    int out_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw OracleUnavailable("pipe failed");
    if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      throw OracleUnavailable("pipe failed");
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);

    std::vector<std::string> argv_store;
    argv_store.push_back(cfg_.command);
    argv_store.insert(argv_store.end(), cfg_.args.begin(), cfg_.args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());
    argv.push_back(nullptr);

    const int rc = ::posix_spawnp(&pid_, cfg_.command.c_str(), &actions, nullptr, argv.data(),
                                  environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    if (rc != 0) {
      ::close(in_pipe[1]);
      ::close(out_pipe[0]);
      pid_ = -1;
      throw OracleUnavailable("cannot start external oracle '" + cfg_.command +
                              "': " + std::strerror(rc));
    }
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
  }

  void write_all(const std::string& data) {
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::write(to_child_, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw OracleUnavailable(std::string("writing to external oracle failed: ") +
                                std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  /// Next '\n'-terminated line, or nullopt on EOF/timeout.
  std::optional<std::string> read_line(int timeout_ms) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                            deadline - std::chrono::steady_clock::now())
                            .count();
      if (left <= 0 || from_child_ < 0) return std::nullopt;
      pollfd pfd{from_child_, POLLIN, 0};
      const int pr = ::poll(&pfd, 1, static_cast<int>(left));
      if (pr < 0) {
        if (errno == EINTR) continue;
        return std::nullopt;
      }
      if (pr == 0) return std::nullopt;
      char chunk[65536];
      const ssize_t n = ::read(from_child_, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR) continue;
        return std::nullopt;
      }
      if (n == 0) return std::nullopt;
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  void shutdown() {
    if (to_child_ >= 0) {
      ::close(to_child_);
      to_child_ = -1;
    }
    if (pid_ > 0) {
      int status = 0;
      const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(2);
      while (::waitpid(pid_, &status, WNOHANG) == 0) {
        if (std::chrono::steady_clock::now() > deadline) {
          ::kill(pid_, SIGKILL);
          ::waitpid(pid_, &status, 0);
          break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
      }
      pid_ = -1;
    }
    if (from_child_ >= 0) {
      ::close(from_child_);
      from_child_ = -1;
    }
  }

  ExternalOracleConfig cfg_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::uint64_t next_id_ = 0;
  std::mutex mutex_;
};

/// Fixed set of long-lived child processes shared by many short-lived
/// per-cell oracles. A lease holds one child exclusively and carries its own
/// query budget; a child that died is respawned on the next acquire.
class ExternalOraclePool {
 public:
  ExternalOraclePool(ExternalOracleConfig cfg, std::size_t size) : cfg_(std::move(cfg)) {
    if (size == 0) throw InputError("external oracle pool needs at least one process");
    cfg_.query_budget = std::numeric_limits<std::uint64_t>::max();
    for (std::size_t i = 0; i < size; ++i) {
      idle_.push_back(std::make_unique<ExternalProcessOracle>(cfg_));
    }
  }

  class Lease final : public VictimOracle {
   public:
    Lease(ExternalOraclePool& pool, std::uint64_t budget)
        : VictimOracle(budget), pool_(pool), child_(pool.acquire()) {}
    ~Lease() override { pool_.release(std::move(child_)); }

   protected:
    std::string transcribe(const GrayImage& img) override { return child_->query(img).latex; }

   private:
    ExternalOraclePool& pool_;
    std::unique_ptr<ExternalProcessOracle> child_;
  };

  std::unique_ptr<VictimOracle> lease(std::uint64_t budget) {
    return std::make_unique<Lease>(*this, budget);
  }

 private:
  std::unique_ptr<ExternalProcessOracle> acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return !idle_.empty(); });
    auto child = std::move(idle_.back());
    idle_.pop_back();
    lock.unlock();
    if (child && child->pid() > 0) return child;
    try {
      return std::make_unique<ExternalProcessOracle>(cfg_);
    } catch (...) {
      release(nullptr);
      throw;
    }
  }

  void release(std::unique_ptr<ExternalProcessOracle> child) {
    {
      std::lock_guard lock(mutex_);
      idle_.push_back(std::move(child));
    }
    cv_.notify_one();
  }

  ExternalOracleConfig cfg_;
  std::vector<std::unique_ptr<ExternalProcessOracle>> idle_;
  std::mutex mutex_;
  std::condition_variable cv_;
};

}  // namespace skelattack
