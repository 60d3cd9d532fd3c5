#pragma once

// Append-only canonical-line log. Replay stops at the first torn or
// unparsable line and truncates it, so a crash mid-append loses at most the
// record being written.

#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>

#include "lpm/canonical.hpp"
#include "lpm/log.hpp"

namespace lpm::cloud {

class StorageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AppendLog {
 public:
  explicit AppendLog(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  }

  // Calls f for every intact record and truncates anything after them.
  std::size_t replay(const std::function<void(const Json&)>& f) {
    std::lock_guard lock(mu_);
    if (!std::filesystem::exists(path_)) return 0;
    std::ifstream in(path_, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::size_t pos = 0, n = 0;
    while (pos < data.size()) {
      const auto nl = data.find('\n', pos);
      if (nl == std::string::npos) break;
      Json j;
      try {
        j = parse_canonical(std::string_view(data).substr(pos, nl - pos));
      } catch (const FormatError& e) {
        log::warn("store", path_.string(), ": dropping corrupt tail: ", e.what());
        break;
      }
      f(j);
      ++n;
      pos = nl + 1;
    }
    if (pos != data.size()) std::filesystem::resize_file(path_, pos);
    return n;
  }

  void append(const Json& record) {
    std::lock_guard lock(mu_);
    if (!out_.is_open()) {
      out_.open(path_, std::ios::binary | std::ios::app);
      if (!out_) throw StorageError("cannot open " + path_.string());
    }
    out_ << to_canonical(record) << '\n';
    out_.flush();
    if (!out_) {
      out_.close();
      throw StorageError("write failed: " + path_.string());
    }
  }

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
  std::ofstream out_;
};

}  // namespace lpm::cloud
