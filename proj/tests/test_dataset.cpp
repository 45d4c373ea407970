#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "seqgrasp/dataset.hpp"
#include "seqgrasp/error.hpp"
#include "support.hpp"

using namespace seqgrasp;
using namespace seqgrasp::dataset;
using testsupport::TempDir;
using testsupport::toy_hand;

namespace {

ObjectLibrary toy_library() {
  ObjectLibrary lib;
  lib.add("ball", geometry::make_icosphere(0.5, 3));
  lib.add("brick", geometry::make_box(Eigen::Vector3d(0.5, 0.35, 0.3)));
  return lib;
}

const ObjectLibrary& shared_library() {
  static const ObjectLibrary lib = toy_library();
  return lib;
}

GenerateOptions quick_options() {
  GenerateOptions o;
  o.chains = 8;
  o.sampler.n_steps = 600;
  o.size_lo = 0.05;
  o.size_hi = 0.07;
  return o;
}

GraspRecord scored(int os_id, const std::string& label, bool success, bool retained, int index = 0) {
  GraspRecord r;
  r.objects = {{"a", 1.0}, {"b", 1.0}, {"c", 1.0}};
  r.index = index;
  r.os_id = os_id;
  r.os_label = label;
  r.g = Eigen::VectorXd::Zero(13);
  Verdict v;
  v.success = success;
  r.verdict = v;
  r.retained = retained;
  return r;
}

nlohmann::ordered_json without_time(const GraspRecord& r) {
  nlohmann::ordered_json j = record_to_json(r);
  j.erase("wall_time");
  return j;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string part;
  while (std::getline(ss, part, '\t')) out.push_back(part);
  return out;
}

}  // namespace

TEST_CASE("plans of 600 four-object sets in 4 orders are distinct") {
  std::vector<std::string> pool;
  for (int i = 0; i < 20; ++i) pool.push_back("obj" + std::to_string(i));
  Rng rng(1);
  const auto plan = plan_sequences(pool, 600, 4, 4, rng);
  REQUIRE(plan.size() == 2400);
  std::set<std::vector<std::string>> orders(plan.begin(), plan.end());
  CHECK(orders.size() == 2400);
  std::set<std::set<std::string>> sets;
  for (const auto& p : plan) {
    REQUIRE(p.size() == 4);
    const std::set<std::string> s(p.begin(), p.end());
    REQUIRE(s.size() == 4);
    sets.insert(s);
  }
  CHECK(sets.size() == 600);
}

TEST_CASE("plan edge cases") {
  Rng rng(2);
  const auto one = plan_sequences({"only"}, 1, 1, 1, rng);
  CHECK(one == std::vector<std::vector<std::string>>{{"only"}});
  CHECK_THROWS_AS(plan_sequences({"a", "b", "c"}, 1, 4, 1, rng), DataError);
  CHECK_THROWS_AS(plan_sequences({"a", "b", "c"}, 2, 3, 1, rng), DataError);
  CHECK_THROWS_AS(plan_sequences({"a", "b"}, 1, 2, 3, rng), DataError);
  CHECK_THROWS_AS(plan_sequences({"a", "a"}, 1, 1, 1, rng), DataError);
  Rng a(3), b(3);
  CHECK(plan_sequences({"a", "b", "c", "d", "e"}, 5, 3, 2, a) == plan_sequences({"a", "b", "c", "d", "e"}, 5, 3, 2, b));
}

TEST_CASE("scale draws keep the longest edge in range and are reproducible") {
  const ObjectLibrary::Entry& e = *shared_library().find("brick");
  for (std::uint64_t s = 0; s < 200; ++s) {
    const double scale = draw_scale(e, 0.06, 0.10, s, 1);
    REQUIRE(scale * e.extent >= 0.06 - 1e-12);
    REQUIRE(scale * e.extent <= 0.10 + 1e-12);
    REQUIRE(scale == draw_scale(e, 0.06, 0.10, s, 1));
  }
  CHECK(draw_scale(e, 0.06, 0.10, 1, 0) != draw_scale(e, 0.06, 0.10, 1, 1));
}

TEST_CASE("unknown library ids are data errors") {
  CHECK_THROWS_AS(shared_library().instantiate("nope", 0.05), DataError);
  const ObjectPtr p = shared_library().instantiate("ball", 0.06);
  CHECK(p->mesh.bounds().sizes().maxCoeff() == doctest::Approx(0.06).epsilon(1e-9));
}

TEST_CASE("generating zero sequences writes only the header") {
  TempDir dir("data");
  {
    RecordWriter w(dir / "r.jsonl");
    const RunSummary s = generate({}, shared_library(), toy_hand(), quick_options(), 1, w);
    CHECK(s.sequences == 0);
  }
  CHECK(testsupport::read_text(dir / "r.jsonl") == std::string(kRecordHeader) + "\n");
  CHECK(read_records(dir / "r.jsonl").records.empty());
}

TEST_CASE("a desk plan on the toy gripper yields successful, reproducible grasps") {
  TempDir dir("data");
  Rng rng(4);
  const auto plan = plan_sequences(shared_library().ids(), 2, 1, 1, rng);
  std::vector<std::vector<std::string>> four = plan;
  four.insert(four.end(), plan.begin(), plan.end());
  REQUIRE(four.size() == 4);

  RunSummary first;
  {
    RecordWriter w(dir / "a.jsonl");
    first = generate(four, shared_library(), toy_hand(), quick_options(), 99, w);
  }
  {
    RecordWriter w(dir / "b.jsonl");
    generate(four, shared_library(), toy_hand(), quick_options(), 99, w);
  }
  CHECK(first.sequences == 4);
  CHECK(first.grasps == 4);
  CHECK(first.successful_sequences >= 1);

  const ReadResult a = read_records(dir / "a.jsonl");
  const ReadResult b = read_records(dir / "b.jsonl");
  REQUIRE(a.records.size() == 4);
  REQUIRE(b.records.size() == 4);
  int retained = 0;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(without_time(a.records[i]) == without_time(b.records[i]));
    CHECK(a.records[i].verdict.has_value());
    CHECK(a.records[i].wall_time >= 0.0);
    retained += a.records[i].retained;
  }
  CHECK(retained == first.retained);

  SUBCASE("export") {
    ExportOptions eo;
    eo.bps_points = 64;
    eo.cloud_points = 256;
    eo.train_fraction = 0.5;
    const ExportSummary s = export_diffusion_set(a.records, shared_library(), toy_hand(), eo, dir / "x.tsv");
    CHECK(s.row_width == 64 + 1 + 2 * (9 + 4));
    CHECK(s.train_rows + s.test_rows == retained);
    std::ifstream in(dir / "x.tsv");
    std::string line;
    std::getline(in, line);
    CHECK(line == kExportHeader);
    std::getline(in, line);
    CHECK(line.rfind("#meta ", 0) == 0);
    const auto meta = nlohmann::json::parse(line.substr(6));
    CHECK(meta["width"] == s.row_width);
    int rows = 0;
    while (std::getline(in, line)) {
      const auto cols = split_tabs(line);
      REQUIRE(cols.size() == 5);
      CHECK((cols[0] == "train" || cols[0] == "test"));
      CHECK(std::count(cols[4].begin(), cols[4].end(), ',') + 1 == s.row_width);
      ++rows;
    }
    CHECK(rows == retained);
  }
}

TEST_CASE("retention is the prefix of passing grasps") {
  const hand::HandSpec& spec = testsupport::reference_hand();
  ObjectLibrary lib = toy_library();
  lib.add("puck", geometry::make_cylinder(0.5, 0.25, 16));
  lib.add("bar", geometry::make_box(Eigen::Vector3d(0.5, 0.15, 0.15)));
  GenerateOptions o;
  o.chains = 2;
  o.sampler.n_steps = 20;
  o.size_lo = 0.025;
  o.size_hi = 0.03;
  Rng rng(5);
  const auto plan = plan_sequences(lib.ids(), 1, 4, 3, rng);
  TempDir dir("data");
  {
    RecordWriter w(dir / "r.jsonl");
    generate(plan, lib, spec, o, 7, w);
  }
  const ReadResult rr = read_records(dir / "r.jsonl");
  REQUIRE(!rr.records.empty());
  std::map<int, bool> prefix;
  for (const GraspRecord& r : rr.records) {
    auto [it, fresh] = prefix.emplace(r.sequence, true);
    if (fresh) REQUIRE(r.index == 0);
    REQUIRE(r.verdict.has_value());
    it->second = it->second && r.verdict->success;
    CHECK(r.retained == it->second);
    REQUIRE(r.os_remaining.has_value());
    CHECK(r.mask.size() == spec.dof());
  }

  // Rescoring with the same parameters reproduces every verdict.
  std::vector<GraspRecord> copy = rr.records;
  for (GraspRecord& r : copy) r.verdict.reset();
  const RescoreSummary rs = rescore(copy, lib, spec, o.validation);
  CHECK(rs.grasps == static_cast<int>(rr.records.size()));
  for (std::size_t i = 0; i < copy.size(); ++i) {
    REQUIRE(copy[i].verdict.has_value());
    CHECK(copy[i].verdict->success == rr.records[i].verdict->success);
    CHECK(copy[i].retained == rr.records[i].retained);
  }
}

TEST_CASE("success rate arithmetic") {
  CHECK(rate_percent(0, 0) == 0.0);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", rate_percent(147.33, 323.31));
  CHECK(std::string(buf) == "45.57");

  std::vector<GraspRecord> records;
  for (int i = 0; i < 10; ++i) records.push_back(scored(0, "pinch", i < 3, i < 3));
  const DatasetStats st = compute_stats(records);
  REQUIRE(st.per_os.size() == 1);
  CHECK(st.per_os[0].success == 3);
  CHECK(st.per_os[0].total == 10);
  CHECK(st.per_os[0].rate == doctest::Approx(30.0).epsilon(1e-12));
  CHECK(format_stats(st).find("30.00") != std::string::npos);
}

TEST_CASE("stats blocks count opposition spaces and sequence lengths") {
  std::vector<GraspRecord> records;
  // Sequence with two retained grasps, the second exhausting the hand.
  records.push_back(scored(2, "thumb-index", true, true, 0));
  records.back().os_remaining = std::vector<int>{0, 1};
  records.push_back(scored(0, "middle-ring", true, true, 1));
  records.back().os_remaining = std::vector<int>{};
  // Sequence whose first grasp failed.
  records.push_back(scored(2, "thumb-index", false, false, 0));
  records.back().os_remaining = std::vector<int>{0, 1};
  // Unscored record.
  GraspRecord bare;
  bare.objects = {{"a", 1.0}};
  bare.os_id = 1;
  bare.g = Eigen::VectorXd::Zero(13);
  records.push_back(bare);

  const DatasetStats st = compute_stats(records);
  CHECK_FALSE(st.empty);
  CHECK(st.unscored == 1);
  CHECK(st.retained == 2);
  CHECK(st.success_rate == doctest::Approx(100.0 * 2 / 3));
  REQUIRE(st.per_os.size() == 2);
  CHECK(st.per_os[0].label == "middle-ring");
  CHECK(st.per_os[1].success == 1);
  CHECK(st.per_os[1].total == 2);
  REQUIRE(st.per_length.size() == 2);
  CHECK(st.per_length[0].objects == 1);
  CHECK(st.per_length[0].consumed == 0);
  CHECK(st.per_length[1].objects == 2);
  CHECK(st.per_length[1].consumed == 1);
  CHECK(st.per_length[1].rate == 100.0);
}

TEST_CASE("identical grasps have zero diversity") {
  std::vector<GraspRecord> records;
  for (int i = 0; i < 5; ++i) {
    records.push_back(scored(0, "pinch", true, true));
    records.back().g = Eigen::VectorXd::LinSpaced(13, -1, 1);
  }
  const DatasetStats st = compute_stats(records);
  CHECK(st.diversity.size() == 13);
  CHECK(st.diversity.cwiseAbs().maxCoeff() == 0.0);
  CHECK(st.diversity_mean == 0.0);
}

TEST_CASE("stats of an empty record set say so") {
  const DatasetStats st = compute_stats({});
  CHECK(st.empty);
  CHECK(format_stats(st).find("no scored grasps") != std::string::npos);
}

TEST_CASE("records round trip through the file format") {
  TempDir dir("data");
  GraspRecord r = scored(2, "thumb-index", true, true, 1);
  r.sequence = 17;
  r.mask = {1, 0, 1, 1};
  r.g = Eigen::VectorXd::LinSpaced(13, -0.3, 0.7);
  r.g[4] = 0.1 + 0.2;  // not exactly representable in short decimal form
  energy::EnergyBreakdown e;
  e.terms = {1e-3, 2e-4, 0.0, 0.5, 0.0, 1.25};
  e.total = 3.0;
  r.energy = e;
  r.os_remaining = std::vector<int>{0, 4};
  r.seed = 0xFFFFFFFFFFFFFFFFULL;
  r.wall_time = 1.5;
  {
    RecordWriter w(dir / "r.jsonl");
    w.append(r);
  }
  const ReadResult back = read_records(dir / "r.jsonl");
  REQUIRE(back.records.size() == 1);
  const GraspRecord& b = back.records[0];
  CHECK(b.g == r.g);
  CHECK(b.mask == r.mask);
  CHECK(b.seed == r.seed);
  CHECK(b.energy->terms == e.terms);
  CHECK(b.os_remaining == r.os_remaining);
  CHECK(record_to_json(b) == record_to_json(r));
}

TEST_CASE("records without scoring fields parse") {
  const std::string body = R"({"sequence":3,"objects":[{"id":"mug","scale":0.07}],"index":0,"os_id":1,"g":[0,0,0,1,0,0,0,1,0,0.1]})";
  std::stringstream in(std::string(kRecordHeader) + "\n" + std::to_string(body.size()) + "\t" + body + "\n");
  const ReadResult rr = read_records(in);
  REQUIRE(rr.records.size() == 1);
  const GraspRecord& r = rr.records[0];
  CHECK_FALSE(r.verdict.has_value());
  CHECK_FALSE(r.energy.has_value());
  CHECK_FALSE(r.os_remaining.has_value());
  CHECK_FALSE(r.retained);
  CHECK(r.g.size() == 10);
  CHECK(r.objects[0].id == "mug");
}

TEST_CASE("a retained record needs a successful verdict") {
  nlohmann::json j = record_to_json(scored(0, "pinch", false, false));
  j["retained"] = true;
  CHECK_THROWS_AS(record_from_json(j), DataError);
}

TEST_CASE("a truncated last record is skipped with a warning") {
  TempDir dir("data");
  {
    RecordWriter w(dir / "r.jsonl");
    w.append(scored(0, "pinch", true, true));
    w.append(scored(0, "pinch", false, false));
  }
  std::string text = testsupport::read_text(dir / "r.jsonl");
  text.resize(text.size() - 20);
  testsupport::write_text(dir / "r.jsonl", text);
  testsupport::WarningCapture warnings;
  const ReadResult rr = read_records(dir / "r.jsonl");
  CHECK(rr.records.size() == 1);
  CHECK(rr.skipped_tail == 1);
  CHECK(warnings.messages.size() == 1);

  // Appending after a damaged tail still needs a readable file up to it.
  std::string mid = testsupport::read_text(dir / "r.jsonl");
  const std::size_t first_nl = mid.find('\n');
  mid.insert(first_nl + 1, "garbage\n");
  testsupport::write_text(dir / "m.jsonl", mid);
  CHECK_THROWS_AS(read_records(dir / "m.jsonl"), DataError);
}

TEST_CASE("foreign files are rejected") {
  TempDir dir("data");
  testsupport::write_text(dir / "f.jsonl", "#something-else v1\n");
  CHECK_THROWS_AS(read_records(dir / "f.jsonl"), DataError);
  CHECK_THROWS_AS(RecordWriter(dir / "f.jsonl"), DataError);
  CHECK_THROWS_AS(read_records(dir / "absent.jsonl"), DataError);
  std::stringstream empty;
  CHECK(read_records(empty).records.empty());
}

TEST_CASE("export row width and object split") {
  CHECK(export_row_width(512, 7, 16) == 569);
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("o" + std::to_string(i));
  ids.push_back("o3");
  const auto [train, test] = split_objects(ids, 0.8, 42);
  std::set<std::string> tr(train.begin(), train.end()), te(test.begin(), test.end());
  CHECK(tr.size() == train.size());
  CHECK(te.size() == test.size());
  for (const auto& id : tr) CHECK(te.count(id) == 0);
  CHECK(tr.size() + te.size() == 10);
  CHECK(train.size() == 8);
  CHECK(split_objects(ids, 0.8, 42) == std::make_pair(train, test));
}

TEST_CASE("exporting without successes is an error") {
  TempDir dir("data");
  std::vector<GraspRecord> records{scored(0, "pinch", false, false)};
  CHECK_THROWS_AS(export_diffusion_set(records, shared_library(), toy_hand(), ExportOptions{}, dir / "x.tsv"),
                  DataError);
  CHECK_THROWS_AS(export_diffusion_set({}, shared_library(), toy_hand(), ExportOptions{}, dir / "x.tsv"), DataError);
}

TEST_CASE("the SDF cache is built once and reused") {
  TempDir dir("data");
  geometry::save_obj(geometry::make_box(Eigen::Vector3d(0.5, 0.2, 0.1)), dir / "slab.obj");
  testsupport::write_text(dir / "broken.obj", "not a mesh\n");
  const geometry::SdfOptions o{24, 0.25};
  const SdfCacheReport first = build_sdf_cache(dir.path(), o);
  CHECK(first.built == std::vector<std::string>{"slab"});
  REQUIRE(first.failed.size() == 1);
  CHECK(first.failed[0].rfind("broken: ", 0) == 0);
  const auto stamp = std::filesystem::last_write_time(sdf_cache_path(dir.path(), "slab"));
  const SdfCacheReport second = build_sdf_cache(dir.path(), o);
  CHECK(second.built.empty());
  CHECK(second.reused == std::vector<std::string>{"slab"});
  CHECK(std::filesystem::last_write_time(sdf_cache_path(dir.path(), "slab")) == stamp);

  LibraryOptions lo;
  lo.sdf = o;
  const ObjectLibrary lib = ObjectLibrary::load(dir.path(), lo);
  CHECK(lib.ids() == std::vector<std::string>{"slab"});
  CHECK(lib.failures().size() == 1);
}
