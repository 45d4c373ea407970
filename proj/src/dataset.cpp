#include "seqgrasp/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

#include "seqgrasp/error.hpp"

namespace seqgrasp::dataset {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;
constexpr std::uint64_t kScaleStream = 0x5CA1EULL << 40;

template <class T>
void fnv_mix(std::uint64_t& h, const T& value) {
  const auto* p = reinterpret_cast<const unsigned char*>(&value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

std::uint64_t string_hash(const std::string& s) {
  std::uint64_t h = kFnvOffset;
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

bool is_mesh_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".obj" || ext == ".stl";
}

std::vector<fs::path> mesh_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw SpecError("object directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_mesh_file(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

// ---------------------------------------------------------------------------
// Object library

std::uint64_t mesh_hash(const geometry::TriMesh& mesh) {
  std::uint64_t h = kFnvOffset;
  fnv_mix(h, mesh.vertices.size());
  for (const auto& v : mesh.vertices)
    for (int a = 0; a < 3; ++a) fnv_mix(h, std::bit_cast<std::uint64_t>(v[a]));
  fnv_mix(h, mesh.triangles.size());
  for (const auto& t : mesh.triangles)
    for (int i : t) fnv_mix(h, static_cast<std::int32_t>(i));
  return h;
}

std::uint64_t sdf_cache_key(const geometry::TriMesh& mesh, const geometry::SdfOptions& options) {
  std::uint64_t h = mesh_hash(mesh);
  h = derive_seed(h, static_cast<std::uint64_t>(options.resolution));
  return derive_seed(h, std::bit_cast<std::uint64_t>(options.margin_fraction));
}

fs::path sdf_cache_path(const fs::path& dir, const std::string& id) { return dir / ".sdf" / (id + ".sdf"); }

namespace {

// Returns the cached grid when its key matches, otherwise builds (and, when
// a cache path is given, stores) a fresh one.
geometry::SdfGrid cached_sdf(const geometry::TriMesh& mesh, const geometry::SdfOptions& options,
                             const fs::path* cache, bool* reused = nullptr) {
  const std::uint64_t key = sdf_cache_key(mesh, options);
  if (reused) *reused = false;
  if (cache && fs::exists(*cache)) {
    try {
      geometry::SdfGrid grid = geometry::load_sdf(*cache);
      if (grid.source_hash == key) {
        if (reused) *reused = true;
        return grid;
      }
    } catch (const Error& e) {
      warn("ignoring unreadable SDF cache '" + cache->string() + "': " + e.what());
    }
  }
  geometry::SdfGrid grid = geometry::build_sdf(mesh, options);
  grid.source_hash = key;
  if (cache) {
    try {
      fs::create_directories(cache->parent_path());
      geometry::save_sdf(grid, *cache);
    } catch (const std::exception& e) {
      warn("could not write SDF cache '" + cache->string() + "': " + e.what());
    }
  }
  return grid;
}

}  // namespace

ObjectLibrary ObjectLibrary::load(const fs::path& dir, const LibraryOptions& options) {
  ObjectLibrary lib;
  lib.surface_points_ = options.surface_points;
  for (const fs::path& path : mesh_files(dir)) {
    const std::string id = path.stem().string();
    if (lib.find(id)) {
      lib.failures_.push_back(id + ": duplicate object id (" + path.filename().string() + ")");
      continue;
    }
    try {
      Entry e;
      e.id = id;
      e.path = path;
      e.mesh = geometry::recenter_and_scale(geometry::load_mesh(path), 1.0);
      e.extent = e.mesh.bounds().sizes().maxCoeff();
      if (!(e.extent > 0)) throw GeometryError("zero extent");
      const fs::path cache = sdf_cache_path(dir, id);
      e.sdf = cached_sdf(e.mesh, options.sdf, options.use_cache ? &cache : nullptr);
      lib.entries_.push_back(std::move(e));
    } catch (const Error& err) {
      lib.failures_.push_back(id + ": " + err.what());
    }
  }
  return lib;
}

void ObjectLibrary::add(std::string id, geometry::TriMesh mesh, const LibraryOptions& options) {
  if (find(id)) throw DataError("duplicate object id '" + id + "'");
  surface_points_ = options.surface_points;
  Entry e;
  e.id = std::move(id);
  e.mesh = geometry::recenter_and_scale(mesh, 1.0);
  e.extent = e.mesh.bounds().sizes().maxCoeff();
  if (!(e.extent > 0)) throw GeometryError("object '" + e.id + "' has zero extent");
  e.sdf = cached_sdf(e.mesh, options.sdf, nullptr);
  entries_.push_back(std::move(e));
}

std::vector<std::string> ObjectLibrary::ids() const {
  std::vector<std::string> out;
  for (const Entry& e : entries_) out.push_back(e.id);
  return out;
}

const ObjectLibrary::Entry* ObjectLibrary::find(const std::string& id) const {
  for (const Entry& e : entries_)
    if (e.id == id) return &e;
  return nullptr;
}

ObjectPtr ObjectLibrary::instantiate(const std::string& id, double scale) const {
  const Entry* e = find(id);
  if (!e) throw DataError("unknown object '" + id + "'");
  if (!(scale > 0) || !std::isfinite(scale)) throw DataError("object '" + id + "': invalid scale");
  geometry::TriMesh mesh = e->mesh;
  for (auto& v : mesh.vertices) v *= scale;
  Rng rng(derive_seed(string_hash(id), std::bit_cast<std::uint64_t>(scale)));
  return energy::make_object(id, scale, std::move(mesh), e->sdf.scaled(scale), surface_points_, rng);
}

SdfCacheReport build_sdf_cache(const fs::path& dir, const geometry::SdfOptions& options) {
  SdfCacheReport report;
  for (const fs::path& path : mesh_files(dir)) {
    const std::string id = path.stem().string();
    try {
      const geometry::TriMesh mesh = geometry::recenter_and_scale(geometry::load_mesh(path), 1.0);
      const fs::path cache = sdf_cache_path(dir, id);
      bool reused = false;
      cached_sdf(mesh, options, &cache, &reused);
      (reused ? report.reused : report.built).push_back(id);
    } catch (const Error& err) {
      report.failed.push_back(id + ": " + err.what());
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Plans

namespace {

// C(n, k), saturating at `cap`.
std::size_t choose_capped(std::size_t n, std::size_t k, std::size_t cap) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  long double c = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    c = c * static_cast<long double>(n - k + i) / static_cast<long double>(i);
    if (c > static_cast<long double>(cap)) return cap;
  }
  return static_cast<std::size_t>(std::llround(c));
}

std::size_t factorial_capped(std::size_t k, std::size_t cap) {
  std::size_t f = 1;
  for (std::size_t i = 2; i <= k; ++i) {
    if (f > cap / i) return cap;
    f *= i;
  }
  return f;
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

}  // namespace

std::vector<std::vector<std::string>> plan_sequences(const std::vector<std::string>& pool,
                                                     std::size_t n_sets, std::size_t objects_per_set,
                                                     std::size_t perms_per_set, Rng& rng) {
  const std::size_t n = pool.size();
  const std::size_t k = objects_per_set;
  if (k == 0) throw DataError("plan_sequences: objects_per_set must be >= 1");
  if (perms_per_set == 0) throw DataError("plan_sequences: perms_per_set must be >= 1");
  if (n < k)
    throw DataError("object pool has " + std::to_string(n) + " objects, need " + std::to_string(k) +
                    " per set");
  {
    std::set<std::string> unique(pool.begin(), pool.end());
    if (unique.size() != n) throw DataError("object pool contains duplicate ids");
  }
  constexpr std::size_t kEnumerateLimit = 100000;
  const std::size_t combos = choose_capped(n, k, std::numeric_limits<std::size_t>::max());
  if (n_sets > combos)
    throw DataError("object pool of " + std::to_string(n) + " supports only " + std::to_string(combos) +
                    " distinct sets of " + std::to_string(k));
  if (perms_per_set > factorial_capped(k, std::numeric_limits<std::size_t>::max()))
    throw DataError("sets of " + std::to_string(k) + " have fewer than " + std::to_string(perms_per_set) +
                    " orderings");

  std::vector<std::vector<std::size_t>> sets;
  if (combos <= kEnumerateLimit) {
    std::vector<std::vector<std::size_t>> all;
    std::vector<std::size_t> c(k);
    std::iota(c.begin(), c.end(), 0);
    while (true) {
      all.push_back(c);
      std::size_t i = k;
      while (i > 0 && c[i - 1] == n - k + i - 1) --i;
      if (i == 0) break;
      ++c[i - 1];
      for (std::size_t j = i; j < k; ++j) c[j] = c[j - 1] + 1;
    }
    shuffle(all, rng);
    all.resize(n_sets);
    sets = std::move(all);
  } else {
    std::set<std::vector<std::size_t>> seen;
    std::vector<std::size_t> idx(n);
    while (sets.size() < n_sets) {
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
      std::vector<std::size_t> s(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
      std::sort(s.begin(), s.end());
      if (seen.insert(s).second) sets.push_back(std::move(s));
    }
  }

  std::vector<std::vector<std::string>> plan;
  for (const auto& s : sets) {
    std::set<std::vector<std::size_t>> seen;
    while (seen.size() < perms_per_set) {
      std::vector<std::size_t> p = s;
      shuffle(p, rng);
      if (!seen.insert(p).second) continue;
      std::vector<std::string> seq;
      for (std::size_t i : p) seq.push_back(pool[i]);
      plan.push_back(std::move(seq));
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Records

Verdict to_verdict(const validation::ObjectVerdict& v) {
  Verdict out;
  out.success = v.success;
  out.contact_ok = v.contact_ok;
  out.contacts_a = v.contacts_a;
  out.contacts_b = v.contacts_b;
  out.penetration = v.penetration;
  out.penetration_ok = v.penetration_ok;
  out.wrench = v.wrench;
  out.failure = v.failure;
  return out;
}

nlohmann::ordered_json record_to_json(const GraspRecord& r) {
  nlohmann::ordered_json j;
  j["sequence"] = r.sequence;
  j["objects"] = nlohmann::ordered_json::array();
  for (const ObjectRef& o : r.objects) j["objects"].push_back({{"id", o.id}, {"scale", o.scale}});
  j["index"] = r.index;
  j["os_id"] = r.os_id;
  j["os_label"] = r.os_label;
  j["mask"] = r.mask;
  j["g"] = std::vector<double>(r.g.data(), r.g.data() + r.g.size());
  if (r.energy) {
    nlohmann::ordered_json e;
    for (int t = 0; t < energy::kNumTerms; ++t) e[energy::kTermNames[t]] = r.energy->terms[t];
    e["total"] = r.energy->total;
    j["energy"] = e;
  } else {
    j["energy"] = nullptr;
  }
  j["contacts"] = {r.contact_a, r.contact_b};
  j["chain"] = r.chain;
  j["chain_accepted"] = r.chain_accepted;
  if (r.os_remaining) j["os_remaining"] = *r.os_remaining;
  else j["os_remaining"] = nullptr;
  if (r.verdict) {
    const Verdict& v = *r.verdict;
    j["verdict"] = {{"success", v.success},
                    {"contact", v.contact_ok},
                    {"contacts_a", v.contacts_a},
                    {"contacts_b", v.contacts_b},
                    {"penetration", v.penetration},
                    {"penetration_ok", v.penetration_ok},
                    {"wrench", v.wrench},
                    {"failure", v.failure}};
  } else {
    j["verdict"] = nullptr;
  }
  j["retained"] = r.retained;
  j["seed"] = r.seed;
  j["wall_time"] = r.wall_time;
  return j;
}

namespace {

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  return it->get<T>();
}

}  // namespace

GraspRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  for (const char* key : {"sequence", "objects", "index", "os_id", "g"})
    if (!j.contains(key) || j[key].is_null()) throw DataError(std::string("record lacks '") + key + "'");
  GraspRecord r;
  try {
    r.sequence = j["sequence"].get<int>();
    for (const auto& o : j["objects"]) r.objects.push_back({o.at("id").get<std::string>(), o.at("scale").get<double>()});
    r.index = j["index"].get<int>();
    r.os_id = j["os_id"].get<int>();
    r.os_label = get_or<std::string>(j, "os_label", "");
    r.mask = get_or<std::vector<std::uint8_t>>(j, "mask", {});
    const auto g = j["g"].get<std::vector<double>>();
    r.g = Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
    if (j.contains("energy") && j["energy"].is_object() && !j["energy"].empty()) {
      energy::EnergyBreakdown e;
      for (int t = 0; t < energy::kNumTerms; ++t) e.terms[t] = j["energy"].at(energy::kTermNames[t]).get<double>();
      e.total = j["energy"].at("total").get<double>();
      r.energy = e;
    }
    if (j.contains("contacts") && j["contacts"].is_array() && j["contacts"].size() == 2) {
      r.contact_a = j["contacts"][0].get<int>();
      r.contact_b = j["contacts"][1].get<int>();
    }
    r.chain = get_or<int>(j, "chain", -1);
    r.chain_accepted = get_or<bool>(j, "chain_accepted", false);
    if (j.contains("os_remaining") && j["os_remaining"].is_array())
      r.os_remaining = j["os_remaining"].get<std::vector<int>>();
    if (j.contains("verdict") && j["verdict"].is_object() && j["verdict"].contains("success") &&
        !j["verdict"]["success"].is_null()) {
      const auto& v = j["verdict"];
      Verdict out;
      out.success = v["success"].get<bool>();
      out.contact_ok = get_or<bool>(v, "contact", false);
      out.contacts_a = get_or<int>(v, "contacts_a", 0);
      out.contacts_b = get_or<int>(v, "contacts_b", 0);
      out.penetration = get_or<double>(v, "penetration", 0.0);
      out.penetration_ok = get_or<bool>(v, "penetration_ok", false);
      out.wrench = get_or<std::array<bool, 6>>(v, "wrench", {});
      out.failure = get_or<std::string>(v, "failure", "");
      r.verdict = out;
    }
    r.retained = get_or<bool>(j, "retained", false);
    r.seed = get_or<std::uint64_t>(j, "seed", 0);
    r.wall_time = get_or<double>(j, "wall_time", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed record: ") + e.what());
  }
  if (!r.g.allFinite()) throw DataError("record has a non-finite grasp vector");
  if (r.index < 0 || static_cast<std::size_t>(r.index) >= r.objects.size())
    throw DataError("record index " + std::to_string(r.index) + " outside its object list");
  if (r.retained && !(r.verdict && r.verdict->success))
    throw DataError("record is retained without a successful verdict");
  return r;
}

std::string format_record(const GraspRecord& r) {
  const std::string body = record_to_json(r).dump();
  return std::to_string(body.size()) + "\t" + body + "\n";
}

RecordWriter::RecordWriter(const fs::path& path) : path_(path) {
  bool need_header = true;
  if (fs::exists(path) && fs::file_size(path) > 0) {
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    if (first != kRecordHeader)
      throw DataError("'" + path.string() + "' exists and is not a record file");
    need_header = false;
  }
  out_ = std::make_unique<std::ofstream>(path, std::ios::app | std::ios::binary);
  if (!*out_) throw DataError("cannot open '" + path.string() + "' for writing");
  if (need_header) {
    *out_ << kRecordHeader << '\n';
    flush();
  }
}

RecordWriter::~RecordWriter() = default;

void RecordWriter::append(const GraspRecord& r) {
  *out_ << format_record(r);
  if (!*out_) throw DataError("write to '" + path_.string() + "' failed");
}

void RecordWriter::flush() {
  out_->flush();
  if (!*out_) throw DataError("write to '" + path_.string() + "' failed");
}

ReadResult read_records(std::istream& in, const std::string& name) {
  ReadResult out;
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.empty()) return out;

  std::vector<std::string_view> lines;
  std::size_t start = 0;
  bool last_terminated = true;
  while (start < data.size()) {
    const std::size_t nl = data.find('\n', start);
    if (nl == std::string::npos) {
      lines.emplace_back(data.data() + start, data.size() - start);
      last_terminated = false;
      break;
    }
    lines.emplace_back(data.data() + start, nl - start);
    start = nl + 1;
  }
  if (lines.empty() || lines[0] != kRecordHeader) throw DataError("'" + name + "' lacks the record header");

  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string_view line = lines[i];
    const bool last = i + 1 == lines.size();
    try {
      if (line.empty()) {
        if (last) continue;
        throw DataError("empty line");
      }
      const std::size_t tab = line.find('\t');
      if (tab == std::string_view::npos) throw DataError("missing length prefix");
      std::size_t len = 0;
      const auto [p, ec] = std::from_chars(line.data(), line.data() + tab, len);
      if (ec != std::errc() || p != line.data() + tab) throw DataError("bad length prefix");
      const std::string_view body = line.substr(tab + 1);
      if (body.size() != len) throw DataError("length prefix does not match record");
      if (last && !last_terminated) throw DataError("record not newline-terminated");
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(body);
      } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid JSON: ") + e.what());
      }
      out.records.push_back(record_from_json(j));
    } catch (const DataError& e) {
      if (!last) throw DataError("'" + name + "' line " + std::to_string(i + 1) + ": " + e.what());
      warn("'" + name + "': skipped damaged last record (" + e.what() + ")");
      out.skipped_tail = 1;
    }
  }
  return out;
}

ReadResult read_records(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return read_records(in, path.string());
}

// ---------------------------------------------------------------------------
// Generation

double draw_scale(const ObjectLibrary::Entry& entry, double lo, double hi, std::uint64_t sequence_seed,
                  std::size_t slot) {
  if (!(lo > 0 && lo <= hi)) throw SpecError("object size range needs 0 < lo <= hi");
  Rng rng(derive_seed(sequence_seed, kScaleStream + slot));
  const double target = lo == hi ? lo : rng.uniform(lo, hi);
  return target / entry.extent;
}

namespace {

sampler::GraspSequenceResult as_sequence(const std::vector<const GraspRecord*>& recs,
                                         const hand::HandSpec& spec) {
  sampler::GraspSequenceResult seq;
  for (const GraspRecord* r : recs) {
    if (r->os_id < 0 || static_cast<std::size_t>(r->os_id) >= spec.os_catalog.size())
      throw DataError("unknown opposition space id " + std::to_string(r->os_id));
    if (static_cast<std::size_t>(r->g.size()) != spec.grasp_dim())
      throw DataError("grasp vector has " + std::to_string(r->g.size()) + " entries, hand needs " +
                      std::to_string(spec.grasp_dim()));
    if (!r->mask.empty() && r->mask.size() != spec.dof())
      throw DataError("joint mask has " + std::to_string(r->mask.size()) + " entries");
    sampler::GraspResult gr;
    gr.os_id = r->os_id;
    gr.os_label = spec.os_catalog[static_cast<std::size_t>(r->os_id)].label;
    gr.mask = r->mask.empty() ? spec.os_catalog[static_cast<std::size_t>(r->os_id)].joints
                              : hand::JointMask(r->mask);
    gr.g = hand::GraspConfig::from_vector(r->g);
    gr.object_in_base = gr.g.base_pose().inverse();
    seq.grasps.push_back(std::move(gr));
  }
  return seq;
}

}  // namespace

RunSummary generate(const std::vector<std::vector<std::string>>& plan, const ObjectLibrary& library,
                    const hand::HandSpec& spec, const GenerateOptions& options, std::uint64_t root_seed,
                    RecordWriter& writer, const ProgressFn& progress) {
  options.sampler.validate();
  options.validation.validate();
  if (options.chains < 1) throw SpecError("chains must be >= 1");
  for (const auto& seq : plan)
    for (const std::string& id : seq)
      if (!library.find(id)) throw DataError("planned object '" + id + "' is not in the library");

  const auto t_start = std::chrono::steady_clock::now();
  const int jobs = std::max(1, options.jobs);
  const bool across_sequences = plan.size() >= static_cast<std::size_t>(jobs);
  sampler::SequenceOptions seq_opts;
  seq_opts.chains = options.chains;
  seq_opts.jobs = across_sequences ? 1 : jobs;
  if (options.filter_chains) seq_opts.accept = validation::make_chain_predicate(options.validation);

  RunSummary summary;
  std::mutex mutex;
  std::vector<std::optional<std::vector<GraspRecord>>> done(plan.size());
  std::size_t next_to_write = 0;

  sampler::parallel_for(plan.size(), across_sequences ? jobs : 1, [&](std::size_t s) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t seed = derive_seed(root_seed, s);
    std::vector<ObjectRef> refs;
    std::vector<ObjectPtr> objects;
    for (std::size_t slot = 0; slot < plan[s].size(); ++slot) {
      const ObjectLibrary::Entry& e = *library.find(plan[s][slot]);
      const double scale = draw_scale(e, options.size_lo, options.size_hi, seed, slot);
      refs.push_back({e.id, scale});
      objects.push_back(library.instantiate(e.id, scale));
    }
    const sampler::GraspSequenceResult result = sampler::seqgrasp(objects, spec, options.sampler, seq_opts, seed);
    const validation::ValidationReport report =
        validation::validate_sequence(result, objects, spec, options.validation);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::vector<GraspRecord> recs;
    bool prefix = true;
    for (std::size_t n = 0; n < result.grasps.size(); ++n) {
      const sampler::GraspResult& gr = result.grasps[n];
      GraspRecord r;
      r.sequence = static_cast<int>(s);
      r.objects = refs;
      r.index = static_cast<int>(n);
      r.os_id = gr.os_id;
      r.os_label = gr.os_label;
      r.mask = gr.mask.bits();
      r.g = gr.g.to_vector();
      r.energy = gr.energy;
      r.contact_a = gr.contact_a;
      r.contact_b = gr.contact_b;
      r.chain = gr.chain;
      r.chain_accepted = gr.chain_accepted;
      r.os_remaining = gr.os_remaining;
      r.verdict = to_verdict(report.objects[n]);
      prefix = prefix && r.verdict->success;
      r.retained = prefix;
      r.seed = seed;
      r.wall_time = elapsed;
      recs.push_back(std::move(r));
    }

    std::lock_guard<std::mutex> lock(mutex);
    done[s] = std::move(recs);
    while (next_to_write < plan.size() && done[next_to_write]) {
      const std::vector<GraspRecord>& batch = *done[next_to_write];
      bool all = !batch.empty();
      for (const GraspRecord& r : batch) {
        writer.append(r);
        ++summary.grasps;
        if (r.retained) ++summary.retained;
        if (!r.verdict->success) {
          all = false;
          ++summary.failures[r.verdict->failure];
        }
      }
      writer.flush();
      if (all) ++summary.successful_sequences;
      ++summary.sequences;
      done[next_to_write].reset();
      ++next_to_write;
      if (progress) progress(summary.sequences, static_cast<int>(plan.size()));
    }
  });
  summary.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return summary;
}

RescoreSummary rescore(std::vector<GraspRecord>& records, const ObjectLibrary& library,
                       const hand::HandSpec& spec, const validation::ValidationParams& params) {
  params.validate();
  RescoreSummary summary;
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) groups[records[i].sequence].push_back(i);

  for (auto& [seq_id, idx] : groups) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return records[a].index < records[b].index; });
    const std::string where = "sequence " + std::to_string(seq_id);
    try {
      std::vector<const GraspRecord*> recs;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const GraspRecord& r = records[idx[k]];
        if (r.index != static_cast<int>(k)) throw DataError("grasp indices are not 0.." + std::to_string(idx.size() - 1));
        if (k > 0 && r.objects.size() != recs[0]->objects.size()) throw DataError("object lists differ");
        recs.push_back(&r);
      }
      std::vector<ObjectPtr> objects;
      for (std::size_t k = 0; k < recs.size(); ++k) {
        const ObjectRef& o = recs[0]->objects[k];
        if (!library.find(o.id)) throw DataError("object '" + o.id + "' is not in the library");
        objects.push_back(library.instantiate(o.id, o.scale));
      }
      const sampler::GraspSequenceResult seq = as_sequence(recs, spec);
      const validation::ValidationReport report = validation::validate_sequence(seq, objects, spec, params);
      bool prefix = true;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        GraspRecord& r = records[idx[k]];
        r.verdict = to_verdict(report.objects[k]);
        prefix = prefix && r.verdict->success;
        r.retained = prefix;
        ++summary.grasps;
        if (r.verdict->success) ++summary.passed;
        if (r.retained) ++summary.retained;
      }
      ++summary.sequences;
    } catch (const DataError& e) {
      warn(where + " skipped: " + e.what());
      summary.skipped += static_cast<int>(idx.size());
    }
  }
  return summary;
}

// ---------------------------------------------------------------------------
// Statistics

double rate_percent(double success, double total) { return total > 0 ? 100.0 * success / total : 0.0; }

DatasetStats compute_stats(const std::vector<GraspRecord>& records) {
  DatasetStats st;
  st.records = static_cast<long>(records.size());
  std::map<int, DatasetStats::OsRow> os_rows;
  std::map<int, DatasetStats::LengthRow> len_rows;
  std::vector<const Eigen::VectorXd*> kept;
  long scored = 0;
  for (const GraspRecord& r : records) {
    if (!r.verdict) {
      ++st.unscored;
      continue;
    }
    ++scored;
    DatasetStats::OsRow& row = os_rows[r.os_id];
    if (row.label.empty()) row.label = r.os_label.empty() ? "os" + std::to_string(r.os_id) : r.os_label;
    ++row.total;
    if (!r.retained) continue;
    ++row.success;
    ++st.retained;
    kept.push_back(&r.g);
    if (r.os_remaining) {
      DatasetStats::LengthRow& lr = len_rows[r.index + 1];
      lr.objects = r.index + 1;
      ++lr.total;
      if (r.os_remaining->empty()) ++lr.consumed;
    }
  }
  st.empty = scored == 0;
  st.success_rate = rate_percent(static_cast<double>(st.retained), static_cast<double>(scored));
  for (auto& [id, row] : os_rows) {
    row.rate = rate_percent(static_cast<double>(row.success), static_cast<double>(row.total));
    st.per_os.push_back(row);
  }
  for (auto& [n, row] : len_rows) {
    row.rate = rate_percent(static_cast<double>(row.consumed), static_cast<double>(row.total));
    st.per_length.push_back(row);
  }
  if (!kept.empty()) {
    const Eigen::Index d = kept[0]->size();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (const auto* g : kept) {
      if (g->size() != d) throw DataError("grasp vectors of different lengths in one record set");
      mean += *g;
    }
    mean /= static_cast<double>(kept.size());
    Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
    for (const auto* g : kept) var += (*g - mean).array().square().matrix();
    st.diversity = (var / static_cast<double>(kept.size())).cwiseSqrt();
    st.diversity_mean = st.diversity.mean();
  }
  return st;
}

std::string format_stats(const DatasetStats& st) {
  std::ostringstream out;
  char buf[256];
  if (st.empty) {
    out << "no scored grasps";
    if (st.unscored > 0) out << " (" << st.unscored << " unscored records)";
    out << '\n';
    return out.str();
  }
  std::snprintf(buf, sizeof buf, "%-18s %10s %10s %18s\n", "OS", "Success", "Total", "Success Rate (%)");
  out << buf;
  for (const auto& r : st.per_os) {
    std::snprintf(buf, sizeof buf, "%-18s %10ld %10ld %18.2f\n", r.label.c_str(), r.success, r.total, r.rate);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-18s %10s %10s %18s\n", "Num. Obj. Grasped", "Consumed", "Total",
                "Consumed Rate (%)");
  out << buf;
  for (const auto& r : st.per_length) {
    std::snprintf(buf, sizeof buf, "%-18d %10ld %10ld %18.2f\n", r.objects, r.consumed, r.total, r.rate);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "retained %ld of %ld scored grasps (%.2f%%)", st.retained,
                st.records - st.unscored, st.success_rate);
  out << buf;
  if (st.unscored > 0) out << ", " << st.unscored << " unscored";
  out << '\n';
  if (st.diversity.size() > 0) {
    std::snprintf(buf, sizeof buf, "diversity (mean std of g): %.6f\n", st.diversity_mean);
    out << buf;
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Export

int export_row_width(std::size_t bps, std::size_t L, std::size_t K) {
  return static_cast<int>(bps + L + 2 * (9 + K));
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_objects(std::vector<std::string> ids,
                                                                            double train_fraction,
                                                                            std::uint64_t seed) {
  if (!(train_fraction > 0 && train_fraction <= 1)) throw SpecError("train fraction must be in (0, 1]");
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Rng rng(seed);
  shuffle(ids, rng);
  const std::size_t n = ids.size();
  std::size_t n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n > 0) n_train = std::max<std::size_t>(n_train, 1);
  if (n > 1 && train_fraction < 1) n_train = std::min(n_train, n - 1);
  std::vector<std::string> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::string> test(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

ExportSummary export_diffusion_set(const std::vector<GraspRecord>& records, const ObjectLibrary& library,
                                   const hand::HandSpec& spec, const ExportOptions& options,
                                   const fs::path& path) {
  std::vector<const GraspRecord*> kept;
  for (const GraspRecord& r : records)
    if (r.retained && r.verdict && r.verdict->success) kept.push_back(&r);
  if (kept.empty()) throw DataError("no successful grasps to export");

  const std::size_t L = spec.os_catalog.size();
  const std::size_t K = spec.dof();
  const geometry::BpsBasis basis = geometry::make_bps_basis(options.bps_points, options.bps_radius, options.bps_seed);

  ExportSummary summary;
  summary.row_width = export_row_width(options.bps_points, L, K);

  std::vector<std::string> ids;
  for (const GraspRecord* r : kept) ids.push_back(r->objects[static_cast<std::size_t>(r->index)].id);
  auto [train, test] = split_objects(ids, options.train_fraction, options.split_seed);
  const std::set<std::string> train_set(train.begin(), train.end());

  std::map<std::pair<std::string, std::uint64_t>, Eigen::VectorXd> features;
  std::set<std::string> warned;
  std::ostringstream body;
  for (const GraspRecord* r : kept) {
    const ObjectRef& obj = r->objects[static_cast<std::size_t>(r->index)];
    const ObjectLibrary::Entry* entry = library.find(obj.id);
    if (!entry) {
      if (warned.insert(obj.id).second) warn("export: mesh for object '" + obj.id + "' not found; rows skipped");
      ++summary.skipped;
      continue;
    }
    if (r->os_id < 0 || static_cast<std::size_t>(r->os_id) >= L)
      throw DataError("record has unknown opposition space id " + std::to_string(r->os_id));
    if (static_cast<std::size_t>(r->g.size()) != 9 + K)
      throw DataError("record grasp vector does not match the hand");

    const auto key = std::make_pair(obj.id, std::bit_cast<std::uint64_t>(obj.scale));
    auto it = features.find(key);
    if (it == features.end()) {
      geometry::TriMesh mesh = entry->mesh;
      for (auto& v : mesh.vertices) v *= obj.scale;
      Rng rng(derive_seed(options.bps_seed, string_hash(obj.id)));
      const geometry::PointCloud cloud = geometry::fps_sample(mesh, options.cloud_points, rng);
      it = features.emplace(key, geometry::bps_encode(cloud, basis)).first;
    }

    std::vector<double> row;
    row.reserve(static_cast<std::size_t>(summary.row_width));
    for (Eigen::Index i = 0; i < it->second.size(); ++i) row.push_back(it->second[i]);
    for (std::size_t l = 0; l < L; ++l) row.push_back(static_cast<int>(l) == r->os_id ? 1.0 : 0.0);
    for (int i = 0; i < 9; ++i) row.push_back(1.0);
    const hand::JointMask& catalog = spec.os_catalog[static_cast<std::size_t>(r->os_id)].joints;
    for (std::size_t k = 0; k < K; ++k) row.push_back((r->mask.empty() ? catalog[k] : r->mask[k] != 0) ? 1.0 : 0.0);
    for (Eigen::Index i = 0; i < r->g.size(); ++i) row.push_back(r->g[i]);

    const bool is_train = train_set.count(obj.id) > 0;
    (is_train ? summary.train_rows : summary.test_rows)++;
    body << (is_train ? "train" : "test") << '\t' << obj.id << '\t' << r->sequence << '\t' << r->index << '\t';
    for (std::size_t i = 0; i < row.size(); ++i) body << (i ? "," : "") << shortest(row[i]);
    body << '\n';
  }
  if (summary.train_rows + summary.test_rows == 0) throw DataError("no exportable rows (all objects missing)");
  for (const std::string& id : train)
    if (library.find(id)) summary.train_objects.push_back(id);
  for (const std::string& id : test)
    if (library.find(id)) summary.test_objects.push_back(id);

  nlohmann::ordered_json meta;
  meta["bps"] = options.bps_points;
  meta["bps_radius"] = options.bps_radius;
  meta["bps_seed"] = options.bps_seed;
  meta["L"] = L;
  meta["K"] = K;
  meta["width"] = summary.row_width;
  meta["layout"] = {"bps", "os_onehot", "selection", "g"};
  std::vector<std::string> labels;
  for (const auto& os : spec.os_catalog) labels.push_back(os.label);
  meta["os_labels"] = labels;
  meta["columns"] = {"split", "object_id", "sequence", "index", "values"};

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << kExportHeader << '\n' << "#meta " << meta.dump() << '\n' << body.str();
    out.flush();
    if (!out) throw DataError("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, path);
  return summary;
}

}  // namespace seqgrasp::dataset
