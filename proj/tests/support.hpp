#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "seqgrasp/energy.hpp"
#include "seqgrasp/error.hpp"
#include "seqgrasp/geometry.hpp"
#include "seqgrasp/hand_model.hpp"

namespace testsupport {

namespace fs = std::filesystem;

inline fs::path source_dir() { return fs::path(SEQGRASP_SOURCE_DIR); }
inline fs::path reference_hand_path() { return source_dir() / "assets/hands/reference_hand.json"; }
inline fs::path toy_hand_path() { return source_dir() / "assets/hands/toy_hand.json"; }
inline fs::path objects_dir() { return source_dir() / "assets/objects"; }

inline const seqgrasp::hand::HandSpec& reference_hand() {
  static const seqgrasp::hand::HandSpec spec = seqgrasp::hand::load_hand_spec(reference_hand_path());
  return spec;
}

inline const seqgrasp::hand::HandSpec& toy_hand() {
  static const seqgrasp::hand::HandSpec spec = seqgrasp::hand::load_hand_spec(toy_hand_path());
  return spec;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            ("seqgrasp_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Collects warnings for the lifetime of the object.
class WarningCapture {
 public:
  WarningCapture() {
    previous_ = seqgrasp::set_warning_handler([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { seqgrasp::set_warning_handler(previous_); }
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  std::vector<std::string> messages;

 private:
  seqgrasp::WarningHandler previous_;
};

/// Object model from a mesh already centered in its own frame.
inline std::shared_ptr<const seqgrasp::energy::ObjectModel> make_object(const std::string& id,
                                                                       seqgrasp::geometry::TriMesh mesh,
                                                                       int resolution = 64,
                                                                       std::size_t surface_points = 256) {
  seqgrasp::geometry::SdfOptions o;
  o.resolution = resolution;
  seqgrasp::geometry::SdfGrid sdf = seqgrasp::geometry::build_sdf(mesh, o);
  seqgrasp::Rng rng(0xB0B);
  return seqgrasp::energy::make_object(id, 1.0, std::move(mesh), std::move(sdf), surface_points, rng);
}

inline std::shared_ptr<const seqgrasp::energy::ObjectModel> sphere_object(double radius, int resolution = 64) {
  return make_object("sphere", seqgrasp::geometry::make_icosphere(radius, 3), resolution);
}

inline std::shared_ptr<const seqgrasp::energy::ObjectModel> box_object(const Eigen::Vector3d& half,
                                                                      int resolution = 64) {
  return make_object("box", seqgrasp::geometry::make_box(half), resolution);
}

inline Eigen::Matrix3d random_rotation(seqgrasp::Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

inline Eigen::Vector3d random_vec(seqgrasp::Rng& rng, double scale = 1.0) {
  return scale * Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
}

}  // namespace testsupport
