#pragma once

#include <chrono>
#include <string>
#include <sys/types.h>
#include <vector>

namespace leafdiag {

/// Child process whose stdin and stdout are one end of a socket pair, for
/// line-oriented conversations. stderr is inherited.
class ChildProcess {
 public:
  /// Spawns argv[0] (PATH lookup) with the given arguments.
  explicit ChildProcess(std::vector<std::string> argv);
  ~ChildProcess();

  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  /// Sends `line` plus '\n'. Returns false if the peer has gone away.
  bool write_line(std::string_view line);

  enum class ReadStatus { line, timeout, closed };
  struct ReadResult {
    ReadStatus status;
    std::string line;
  };

  /// Waits up to `timeout` for one complete line (without the '\n').
  ReadResult read_line(std::chrono::milliseconds timeout);

  /// Closes our end so the child sees EOF, then reaps it.
  void close();

  const std::string& command() const noexcept { return command_; }
  pid_t pid() const noexcept { return pid_; }

 private:
  std::string command_;
  pid_t pid_ = -1;
  int fd_ = -1;
  std::string buffer_;
};

}  // namespace leafdiag
