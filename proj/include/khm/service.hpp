#pragma once

// Labelling session and the JSON-over-HTTP API used by the classification UI.
//
//   GET  /api/meta              n, grid shape, wave id
//   GET  /api/member/{i}        field values (row-major) and current label
//   GET  /api/observation       observation values
//   POST /api/label             {"index": i, "label": 0|1|2} -> tally
//   GET  /api/classification    every label and the tally
//   POST /api/save              writes the classification file, returns its path

#include "khm/ensemble.hpp"
#include "khm/kernel_selection.hpp"

#include <array>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace khm {

class LabelSession {
 public:
  /// Labels are persisted to working_path after every change and written to
  /// output_path on save. An existing working file is resumed.
  LabelSession(Ensemble ensemble, std::filesystem::path output_path, int wave_id = 1);

  [[nodiscard]] const Ensemble& ensemble() const { return ensemble_; }
  [[nodiscard]] int wave_id() const { return wave_id_; }
  [[nodiscard]] const std::filesystem::path& output_path() const { return output_path_; }
  [[nodiscard]] const std::filesystem::path& working_path() const { return working_path_; }

  [[nodiscard]] Classification snapshot() const;
  /// Throws ValidationError for a label outside {0, 1, 2}, std::out_of_range
  /// for an unknown index.
  std::array<int, 3> set_label(Eigen::Index index, int label);
  std::filesystem::path save();

 private:
  Ensemble ensemble_;
  std::filesystem::path output_path_;
  std::filesystem::path working_path_;
  int wave_id_;
  mutable std::mutex mutex_;
  Classification labels_;
};

class LabelServer {
 public:
  explicit LabelServer(std::shared_ptr<LabelSession> session);
  ~LabelServer();
  LabelServer(const LabelServer&) = delete;
  LabelServer& operator=(const LabelServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  void install_routes();
  std::shared_ptr<LabelSession> session_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace khm
