// Command-line entry points: generate, validate, stats, build-sdf, export.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 data error.
// Progress and warnings go to stderr; tables and summaries to stdout.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <thread>

#include "seqgrasp/dataset.hpp"
#include "seqgrasp/error.hpp"
#include "seqgrasp/hand_model.hpp"
#include "seqgrasp/sampler.hpp"
#include "seqgrasp/validation.hpp"

namespace fs = std::filesystem;
using namespace seqgrasp;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr std::uint64_t kPlanStream = 0x91A4ULL << 48;

struct Common {
  std::string hand;
  std::string objects;
  std::string out;
  std::string records;
  std::uint64_t seed = 0;
  int sdf_res = 64;
};

struct GenerateArgs {
  int sequences = 4;
  int objects_per_set = 4;
  int perms = 4;
  int chains = 64;
  int steps = 6000;
  int jobs = 0;
  double p_accept = 0.1;
  bool compat_eq2 = false;
  bool no_chain_filter = false;
  std::vector<double> size_range{0.06, 0.10};
};

dataset::LibraryOptions library_options(const Common& c) {
  dataset::LibraryOptions o;
  o.sdf.resolution = c.sdf_res;
  return o;
}

dataset::ObjectLibrary load_library(const Common& c) {
  std::cerr << "loading objects from " << c.objects << '\n';
  dataset::ObjectLibrary lib = dataset::ObjectLibrary::load(c.objects, library_options(c));
  for (const std::string& f : lib.failures()) warn("object skipped: " + f);
  return lib;
}

int cmd_generate(const Common& c, const GenerateArgs& a) {
  const hand::HandSpec spec = hand::load_hand_spec(c.hand);
  if (a.sequences < 0) throw SpecError("--sequences must be >= 0");
  if (a.perms < 1 || a.objects_per_set < 1) throw SpecError("--perms and --objects-per-set must be >= 1");
  if (a.size_range.size() != 2) throw SpecError("--size-range takes two values");

  dataset::GenerateOptions opt;
  opt.sampler.n_steps = a.steps;
  opt.sampler.p_accept = a.p_accept;
  if (a.compat_eq2) opt.sampler.rule = sampler::AcceptanceRule::PrintedRatio;
  opt.chains = a.chains;
  opt.jobs = a.jobs > 0 ? a.jobs : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  opt.size_lo = a.size_range[0];
  opt.size_hi = a.size_range[1];
  opt.filter_chains = !a.no_chain_filter;
  opt.sampler.validate();

  const dataset::ObjectLibrary lib = load_library(c);
  std::vector<std::vector<std::string>> plan;
  if (a.sequences > 0) {
    const auto perms = static_cast<std::size_t>(a.perms);
    const std::size_t n_sets = (static_cast<std::size_t>(a.sequences) + perms - 1) / perms;
    Rng rng(derive_seed(c.seed, kPlanStream));
    plan = dataset::plan_sequences(lib.ids(), n_sets, static_cast<std::size_t>(a.objects_per_set), perms, rng);
    plan.resize(static_cast<std::size_t>(a.sequences));
  }

  dataset::RecordWriter writer(c.out);
  const dataset::RunSummary s = dataset::generate(plan, lib, spec, opt, c.seed, writer, [](int done, int total) {
    std::cerr << "[generate] sequence " << done << "/" << total << " done\n";
  });

  std::printf("sequences            %d\n", s.sequences);
  std::printf("grasps               %d\n", s.grasps);
  std::printf("retained grasps      %d\n", s.retained);
  std::printf("successful sequences %d\n", s.successful_sequences);
  for (const auto& [why, n] : s.failures) std::printf("failed (%s)%*s%d\n", why.c_str(), static_cast<int>(12 - why.size()), "", n);
  std::fprintf(stderr, "wall time %.1f s\n", s.wall_time);
  return 0;
}

int cmd_validate(const Common& c) {
  dataset::ReadResult rr = dataset::read_records(c.records);
  const hand::HandSpec spec = hand::load_hand_spec(c.hand);
  dataset::RescoreSummary s;
  if (!rr.records.empty()) {
    const dataset::ObjectLibrary lib = load_library(c);
    s = dataset::rescore(rr.records, lib, spec, validation::ValidationParams{});
  }
  std::printf("sequences %d\ngrasps    %d\npassed    %d\nfailed    %d\nretained  %d\nskipped   %d\n", s.sequences,
              s.grasps, s.passed, s.grasps - s.passed, s.retained, s.skipped + rr.skipped_tail);
  if (!c.out.empty()) {
    if (fs::exists(c.out)) fs::remove(c.out);
    dataset::RecordWriter w(c.out);
    for (const dataset::GraspRecord& r : rr.records) w.append(r);
    w.flush();
  }
  return 0;
}

int cmd_stats(const Common& c) {
  const dataset::ReadResult rr = dataset::read_records(c.records);
  std::cout << dataset::format_stats(dataset::compute_stats(rr.records));
  return 0;
}

int cmd_build_sdf(const Common& c) {
  geometry::SdfOptions o;
  o.resolution = c.sdf_res;
  const dataset::SdfCacheReport r = dataset::build_sdf_cache(c.objects, o);
  std::printf("built %zu, unchanged %zu, failed %zu\n", r.built.size(), r.reused.size(), r.failed.size());
  for (const std::string& f : r.failed) std::printf("  failed: %s\n", f.c_str());
  return r.failed.empty() ? 0 : kExitData;
}

int cmd_export(const Common& c, std::size_t bps) {
  const dataset::ReadResult rr = dataset::read_records(c.records);
  const hand::HandSpec spec = hand::load_hand_spec(c.hand);
  const dataset::ObjectLibrary lib = load_library(c);
  dataset::ExportOptions o;
  o.bps_points = bps;
  o.split_seed = c.seed;
  const dataset::ExportSummary s = dataset::export_diffusion_set(rr.records, lib, spec, o, c.out);
  std::printf("rows train %d, test %d, skipped %d, width %d\n", s.train_rows, s.test_rows, s.skipped, s.row_width);
  std::printf("objects train %zu, test %zu\n", s.train_objects.size(), s.test_objects.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential multi-object grasp synthesis"};
  app.require_subcommand(1);
  Common c;
  GenerateArgs g;
  std::size_t bps = 512;

  auto* gen = app.add_subcommand("generate", "Generate grasp sequences and append records");
  gen->add_option("--hand", c.hand, "Hand description (JSON)")->required();
  gen->add_option("--objects", c.objects, "Directory of .obj/.stl meshes")->required();
  gen->add_option("--out", c.out, "Record file (appended)")->required();
  gen->add_option("--seed", c.seed, "Root seed")->required();
  gen->add_option("--sequences", g.sequences, "Number of object sequences")->capture_default_str();
  gen->add_option("--objects-per-set", g.objects_per_set, "Objects per sequence")->capture_default_str();
  gen->add_option("--perms", g.perms, "Orderings per object set")->capture_default_str();
  gen->add_option("--chains", g.chains, "Chains per grasp")->capture_default_str();
  gen->add_option("--steps", g.steps, "Iterations per chain")->capture_default_str();
  gen->add_option("--jobs", g.jobs, "Worker threads (default: logical cores)");
  gen->add_option("--sdf-res", c.sdf_res, "SDF nodes along the longest axis")->capture_default_str();
  gen->add_option("--p-accept", g.p_accept, "Contact resampling probability")->capture_default_str();
  gen->add_option("--size-range", g.size_range, "Longest object edge range in m (lo hi)")->expected(2);
  gen->add_flag("--compat-eq2-acceptance", g.compat_eq2, "Use the ratio acceptance rule instead of Metropolis");
  gen->add_flag("--no-chain-filter", g.no_chain_filter, "Keep the lowest-energy chain even if it fails validation");

  auto* val = app.add_subcommand("validate", "Re-validate a record file");
  val->add_option("records", c.records, "Record file")->required();
  val->add_option("--hand", c.hand, "Hand description (JSON)")->required();
  val->add_option("--objects", c.objects, "Directory of .obj/.stl meshes")->required();
  val->add_option("--sdf-res", c.sdf_res, "SDF nodes along the longest axis")->capture_default_str();
  val->add_option("--out", c.out, "Write rescored records here");

  auto* st = app.add_subcommand("stats", "Print dataset statistics");
  st->add_option("records", c.records, "Record file")->required();

  auto* sdf = app.add_subcommand("build-sdf", "Build or refresh the SDF cache of an object directory");
  sdf->add_option("--objects", c.objects, "Directory of .obj/.stl meshes")->required();
  sdf->add_option("--sdf-res", c.sdf_res, "SDF nodes along the longest axis")->capture_default_str();

  auto* ex = app.add_subcommand("export", "Export retained grasps as a diffusion training set");
  ex->add_option("records", c.records, "Record file")->required();
  ex->add_option("--hand", c.hand, "Hand description (JSON)")->required();
  ex->add_option("--objects", c.objects, "Directory of .obj/.stl meshes")->required();
  ex->add_option("--out", c.out, "Output file")->required();
  ex->add_option("--seed", c.seed, "Split seed")->required();
  ex->add_option("--bps", bps, "BPS basis size")->capture_default_str();
  ex->add_option("--sdf-res", c.sdf_res, "SDF nodes along the longest axis")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_generate(c, g);
    if (*val) return cmd_validate(c);
    if (*st) return cmd_stats(c);
    if (*sdf) return cmd_build_sdf(c);
    if (*ex) return cmd_export(c, bps);
  } catch (const SpecError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
