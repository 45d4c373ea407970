#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "seqgrasp/energy.hpp"
#include "seqgrasp/geometry.hpp"
#include "seqgrasp/hand_model.hpp"
#include "seqgrasp/rng.hpp"
#include "seqgrasp/sampler.hpp"
#include "seqgrasp/validation.hpp"

namespace seqgrasp::dataset {

using ObjectPtr = std::shared_ptr<const energy::ObjectModel>;

// ---------------------------------------------------------------------------
// Object library

/// FNV-1a over vertex and face bytes.
std::uint64_t mesh_hash(const geometry::TriMesh& mesh);

struct LibraryOptions {
  geometry::SdfOptions sdf;
  std::size_t surface_points = 256;  // FPS sample kept per object for held-object checks
  bool use_cache = true;             // read and write <dir>/.sdf/<id>.sdf
};

/// Meshes found under a directory, recentered on their volume centroid at
/// unit scale, each with an SDF. Scaled instances share the base SDF.
class ObjectLibrary {
 public:
  struct Entry {
    std::string id;  // file stem
    std::filesystem::path path;
    geometry::TriMesh mesh;
    geometry::SdfGrid sdf;
    double extent = 0.0;  // longest AABB edge at unit scale
  };

  ObjectLibrary() = default;
  /// Loads every .obj/.stl file (sorted by name). Unreadable meshes are
  /// listed in failures() and skipped.
  static ObjectLibrary load(const std::filesystem::path& dir, const LibraryOptions& options = {});

  void add(std::string id, geometry::TriMesh mesh, const LibraryOptions& options = {});

  const std::vector<Entry>& entries() const { return entries_; }
  const std::vector<std::string>& failures() const { return failures_; }
  std::vector<std::string> ids() const;
  const Entry* find(const std::string& id) const;
  std::size_t size() const { return entries_.size(); }

  /// Object `id` uniformly scaled by `scale`. Throws DataError for unknown ids.
  ObjectPtr instantiate(const std::string& id, double scale) const;

 private:
  std::vector<Entry> entries_;
  std::vector<std::string> failures_;
  std::size_t surface_points_ = 256;
};

struct SdfCacheReport {
  std::vector<std::string> built, reused, failed;
};

/// Builds or refreshes <dir>/.sdf/<id>.sdf for every mesh in `dir`. A cache
/// whose stored hash matches the mesh and options is left untouched.
SdfCacheReport build_sdf_cache(const std::filesystem::path& dir, const geometry::SdfOptions& options);

std::filesystem::path sdf_cache_path(const std::filesystem::path& dir, const std::string& id);
std::uint64_t sdf_cache_key(const geometry::TriMesh& mesh, const geometry::SdfOptions& options);

// ---------------------------------------------------------------------------
// Sequence plans

/// `n_sets` distinct object sets, each in `perms_per_set` distinct orders.
/// Throws DataError if the pool cannot supply them.
std::vector<std::vector<std::string>> plan_sequences(const std::vector<std::string>& pool,
                                                     std::size_t n_sets,
                                                     std::size_t objects_per_set,
                                                     std::size_t perms_per_set, Rng& rng);

// ---------------------------------------------------------------------------
// Records

struct ObjectRef {
  std::string id;
  double scale = 1.0;
};

struct Verdict {
  bool success = false;
  bool contact_ok = false;
  int contacts_a = 0, contacts_b = 0;
  double penetration = 0.0;  // m
  bool penetration_ok = false;
  std::array<bool, 6> wrench{};
  std::string failure;
};

Verdict to_verdict(const validation::ObjectVerdict& v);

/// One grasp of one sequence. Fields other than sequence, objects, index,
/// os_id and g may be absent, as in sampled grasps that were never scored.
struct GraspRecord {
  int sequence = 0;
  std::vector<ObjectRef> objects;  // the whole planned sequence
  int index = 0;                   // grasp n, target = objects[index]
  int os_id = -1;
  std::string os_label;
  std::vector<std::uint8_t> mask;  // J_n at selection; empty = catalog mask
  Eigen::VectorXd g;
  std::optional<energy::EnergyBreakdown> energy;
  int contact_a = -1, contact_b = -1;
  int chain = -1;
  bool chain_accepted = false;
  std::optional<std::vector<int>> os_remaining;  // available OS ids after this grasp
  std::optional<Verdict> verdict;
  bool retained = false;  // this grasp and every earlier one in the sequence passed
  std::uint64_t seed = 0;
  double wall_time = 0.0;  // s
};

inline constexpr const char* kRecordHeader = "#seqgrasp-records v1";

nlohmann::ordered_json record_to_json(const GraspRecord& r);
GraspRecord record_from_json(const nlohmann::json& j);

/// "<byte length>\t<json>\n"
std::string format_record(const GraspRecord& r);

/// Append-only writer. A new or empty file gets the header; an existing file
/// must already start with it.
class RecordWriter {
 public:
  explicit RecordWriter(const std::filesystem::path& path);
  ~RecordWriter();
  RecordWriter(const RecordWriter&) = delete;
  RecordWriter& operator=(const RecordWriter&) = delete;

  void append(const GraspRecord& r);
  void flush();

 private:
  std::filesystem::path path_;
  std::unique_ptr<std::ofstream> out_;
};

struct ReadResult {
  std::vector<GraspRecord> records;
  int skipped_tail = 0;  // 0 or 1
};

/// Reads a record file. A damaged last line is skipped with a warning; damage
/// anywhere else throws DataError.
ReadResult read_records(const std::filesystem::path& path);
ReadResult read_records(std::istream& in, const std::string& name = "<stream>");

// ---------------------------------------------------------------------------
// Generation

struct GenerateOptions {
  sampler::SamplerParams sampler;
  validation::ValidationParams validation;
  int chains = 64;
  int jobs = 1;
  double size_lo = 0.06;  // longest AABB edge range for scaled objects (m)
  double size_hi = 0.10;
  bool filter_chains = true;  // prefer chains that pass the validator
};

struct RunSummary {
  int sequences = 0;
  int grasps = 0;
  int retained = 0;
  int successful_sequences = 0;  // every grasp passed
  std::map<std::string, int> failures;  // first failing criterion -> count
  double wall_time = 0.0;
};

using ProgressFn = std::function<void(int done, int total)>;

/// Runs seqgrasp + validate_sequence per planned sequence and appends one
/// record per grasp. Sequence s uses seed derive_seed(root_seed, s).
RunSummary generate(const std::vector<std::vector<std::string>>& plan, const ObjectLibrary& library,
                    const hand::HandSpec& spec, const GenerateOptions& options,
                    std::uint64_t root_seed, RecordWriter& writer, const ProgressFn& progress = {});

/// Scale for slot `slot` of a sequence: longest edge drawn in [lo, hi].
double draw_scale(const ObjectLibrary::Entry& entry, double lo, double hi, std::uint64_t sequence_seed,
                  std::size_t slot);

struct RescoreSummary {
  int sequences = 0;
  int grasps = 0;
  int passed = 0;
  int retained = 0;
  int skipped = 0;
};

/// Re-validates grouped records (sequence id, index 0..n-1) and rewrites
/// verdict and retained in place.
RescoreSummary rescore(std::vector<GraspRecord>& records, const ObjectLibrary& library,
                       const hand::HandSpec& spec, const validation::ValidationParams& params);

// ---------------------------------------------------------------------------
// Statistics

struct DatasetStats {
  struct OsRow {
    std::string label;
    long success = 0;
    long total = 0;
    double rate = 0.0;  // %
  };
  struct LengthRow {
    int objects = 0;  // objects grasped so far (1-based)
    long consumed = 0;
    long total = 0;
    double rate = 0.0;  // %
  };
  bool empty = true;
  long records = 0;
  long unscored = 0;  // records without a verdict, excluded
  long retained = 0;
  double success_rate = 0.0;  // %
  std::vector<OsRow> per_os;          // over all scored grasps, by OS id
  std::vector<LengthRow> per_length;  // over retained grasps
  Eigen::VectorXd diversity;          // per-dimension std of g over retained grasps
  double diversity_mean = 0.0;
};

double rate_percent(double success, double total);

DatasetStats compute_stats(const std::vector<GraspRecord>& records);

/// Two-block text table (OS rows, then objects-grasped rows).
std::string format_stats(const DatasetStats& stats);

// ---------------------------------------------------------------------------
// Diffusion export

struct ExportOptions {
  std::size_t bps_points = 512;
  double bps_radius = 0.15;
  std::uint64_t bps_seed = 0x5E9B95ULL;
  std::size_t cloud_points = 2048;  // FPS surface sample encoded by BPS
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
};

struct ExportSummary {
  int train_rows = 0;
  int test_rows = 0;
  int skipped = 0;
  std::vector<std::string> train_objects, test_objects;
  int row_width = 0;
};

inline constexpr const char* kExportHeader = "#seqgrasp-diffusion v1";

/// Row layout: BPS (B) | one-hot OS (L) | selection tail [1_9, J] (9+K) | g (9+K).
int export_row_width(std::size_t bps, std::size_t L, std::size_t K);

/// Splits object ids into train/test (disjoint) with a seeded shuffle.
std::pair<std::vector<std::string>, std::vector<std::string>> split_objects(
    std::vector<std::string> ids, double train_fraction, std::uint64_t seed);

/// Writes retained records as training rows. Objects missing from the
/// library are skipped with a warning. Throws DataError when no retained
/// record exists.
ExportSummary export_diffusion_set(const std::vector<GraspRecord>& records, const ObjectLibrary& library,
                                   const hand::HandSpec& spec, const ExportOptions& options,
                                   const std::filesystem::path& path);

}  // namespace seqgrasp::dataset
