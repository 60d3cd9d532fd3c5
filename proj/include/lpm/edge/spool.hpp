#pragma once

// Edge-local append-only store of every scored window.
//
// Layout under the spool directory:
//   <segment_id>.open     segment being appended to (at most one)
//   <segment_id>.closed   sealed, waiting for batch upload
//   uploaded.mark         highest window index already acknowledged by the cloud
//
// segment_id is "<edge_id>-<start window, 12 digits>" so names sort by time.
// Each record is one canonical line; a torn trailing line left by a crash is
// truncated away on open.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lpm/canonical.hpp"
#include "lpm/protocol.hpp"

namespace lpm::edge {

class SpoolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ClosedSegment {
  std::string segment_id;
  std::filesystem::path path;
};

class Spool {
 public:
  Spool(std::filesystem::path dir, std::string edge_id, std::size_t segment_windows)
      : dir_(std::move(dir)), edge_id_(std::move(edge_id)), segment_windows_(segment_windows) {
    std::filesystem::create_directories(dir_);
    recover();
  }

  // First window index not yet durably spooled (or uploaded).
  std::int64_t next_window_index() const {
    std::lock_guard lock(mu_);
    return next_index_;
  }

  void append(const protocol::RawRecord& r) {
    std::lock_guard lock(mu_);
    if (r.window_index < next_index_)
      throw SpoolError("window index " + std::to_string(r.window_index) + " not increasing");
    if (!out_.is_open()) open_segment(r.window_index);
    const auto line = to_canonical(protocol::detail::to_json(r)) + "\n";
    out_ << line;
    out_.flush();
    if (!out_) throw SpoolError("spool write failed: " + active_path_.string());
    bytes_written_ += line.size();
    next_index_ = r.window_index + 1;
    if (++active_records_ >= segment_windows_) close_locked();
  }

  // Seals the active segment so it becomes eligible for upload.
  void close_active() {
    std::lock_guard lock(mu_);
    close_locked();
  }

  std::vector<ClosedSegment> closed_segments() const {
    std::lock_guard lock(mu_);
    std::vector<ClosedSegment> out;
    for (const auto& e : std::filesystem::directory_iterator(dir_))
      if (e.path().extension() == ".closed") out.push_back({e.path().stem().string(), e.path()});
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.segment_id < b.segment_id; });
    return out;
  }

  static std::vector<protocol::RawRecord> read_segment(const std::filesystem::path& path) {
    std::vector<protocol::RawRecord> out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      out.push_back(protocol::detail::raw_record_from_json(parse_canonical(line)));
    }
    return out;
  }

  // Drops an uploaded segment and advances the upload watermark.
  void remove_segment(const ClosedSegment& seg, std::int64_t last_window_index) {
    std::lock_guard lock(mu_);
    if (last_window_index > uploaded_mark_) {
      uploaded_mark_ = last_window_index;
      write_canonical_file(dir_ / "uploaded.mark", Json{{"last_window_index", uploaded_mark_}});
    }
    std::filesystem::remove(seg.path);
  }

  std::uint64_t bytes_written() const {
    std::lock_guard lock(mu_);
    return bytes_written_;
  }

  std::size_t pending_records() const {
    std::size_t n = 0;
    for (const auto& s : closed_segments()) n += read_segment(s.path).size();
    std::lock_guard lock(mu_);
    return n + active_records_;
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::string segment_id_for(std::int64_t start) const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%012lld", static_cast<long long>(start));
    return edge_id_ + "-" + buf;
  }

  void open_segment(std::int64_t start) {
    active_path_ = dir_ / (segment_id_for(start) + ".open");
    out_.open(active_path_, std::ios::binary | std::ios::app);
    if (!out_) throw SpoolError("cannot open spool segment " + active_path_.string());
    active_records_ = 0;
  }

  void close_locked() {
    if (!out_.is_open()) return;
    out_.close();
    auto closed = active_path_;
    closed.replace_extension(".closed");
    if (active_records_ == 0) {
      std::filesystem::remove(active_path_);
    } else {
      std::filesystem::rename(active_path_, closed);
    }
    active_records_ = 0;
  }

  // Truncates a torn tail and returns the last complete record's window index.
  static std::optional<std::int64_t> repair(const std::filesystem::path& path, std::size_t& records) {
    std::ifstream in(path, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::size_t good = 0;
    std::optional<std::int64_t> last;
    records = 0;
    std::size_t pos = 0;
    while (pos < data.size()) {
      auto nl = data.find('\n', pos);
      if (nl == std::string::npos) break;
      try {
        auto r = protocol::detail::raw_record_from_json(parse_canonical(std::string_view(data).substr(pos, nl - pos)));
        if (last && r.window_index <= *last) break;
        last = r.window_index;
      } catch (const FormatError&) {
        break;
      }
      ++records;
      good = nl + 1;
      pos = nl + 1;
    }
    if (good != data.size()) std::filesystem::resize_file(path, good);
    return last;
  }

  void recover() {
    if (auto mark = dir_ / "uploaded.mark"; std::filesystem::exists(mark)) {
      uploaded_mark_ = detail::int_at(read_canonical_file(mark), "last_window_index");
      next_index_ = uploaded_mark_ + 1;
    }
    for (const auto& e : std::filesystem::directory_iterator(dir_)) {
      const auto ext = e.path().extension();
      if (ext != ".open" && ext != ".closed") continue;
      std::size_t records = 0;
      auto last = repair(e.path(), records);
      if (last) next_index_ = std::max(next_index_, *last + 1);
      if (ext == ".open") {
        // A crash left this segment open; seal it so it is uploaded as is.
        auto closed = e.path();
        closed.replace_extension(".closed");
        if (records == 0)
          std::filesystem::remove(e.path());
        else
          std::filesystem::rename(e.path(), closed);
      }
    }
  }

  std::filesystem::path dir_;
  std::string edge_id_;
  std::size_t segment_windows_;
  mutable std::mutex mu_;
  std::ofstream out_;
  std::filesystem::path active_path_;
  std::size_t active_records_ = 0;
  std::int64_t next_index_ = 0;
  std::int64_t uploaded_mark_ = -1;
  std::uint64_t bytes_written_ = 0;
};

}  // namespace lpm::edge
