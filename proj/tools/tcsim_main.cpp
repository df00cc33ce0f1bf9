// tcsim command line: gemm, trace, map-dump, latency.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "tcsim/error.hpp"
#include "tcsim/harness.hpp"

using namespace tcsim;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string arch = "volta";
  std::string mode = "mixed";
  std::string shape;
  std::string layout_a = "row", layout_b = "col", layout_c = "row";
  std::string atype, ctype, dtype;
  bool satfinite = false;
  std::string rounding = "terminal";
  int m = 16, n = 16, k = 16;
  std::uint64_t seed = 1;
  std::optional<double> lo, hi;
  std::string config;
  std::string maps;
  std::string out;
  std::string verify = "on";
  std::string trace_file;
  std::string emit_trace;
};

template <class T>
T need(std::optional<T> v, const std::string& what, const std::string& got) {
  if (!v) throw ContractViolation("invalid " + what + " '" + got + "'");
  return *v;
}

MmaConfig mma_from(const Options& o) {
  MmaConfig c;
  c.arch = need(parse_arch(o.arch), "architecture", o.arch);
  if (o.mode == "mixed") {
    c.ab_type = ElemType::F16, c.ctype = c.dtype = ElemType::F32;
  } else if (o.mode == "fp16") {
    c.ab_type = c.ctype = c.dtype = ElemType::F16;
  } else if (o.mode == "int8") {
    c.ab_type = ElemType::S8, c.ctype = c.dtype = ElemType::S32;
  } else if (o.mode == "int4") {
    c.ab_type = ElemType::S4, c.ctype = c.dtype = ElemType::S32;
    c.shape = kM8N8K32;
  } else {
    throw ContractViolation("invalid mode '" + o.mode + "'");
  }
  if (!o.shape.empty()) c.shape = need(parse_shape(o.shape), "shape", o.shape);
  if (!o.atype.empty()) c.ab_type = need(parse_elem_type(o.atype), "type", o.atype);
  if (!o.ctype.empty()) c.ctype = need(parse_elem_type(o.ctype), "type", o.ctype);
  if (!o.dtype.empty()) c.dtype = need(parse_elem_type(o.dtype), "type", o.dtype);
  c.a_layout = need(parse_layout(o.layout_a), "layout", o.layout_a);
  c.b_layout = need(parse_layout(o.layout_b), "layout", o.layout_b);
  c.satfinite = o.satfinite;
  if (o.rounding == "per-stage") c.rounding = FedpRounding::PerStage;
  else if (o.rounding != "terminal") throw ContractViolation("invalid rounding '" + o.rounding + "'");
  validate(c);
  return c;
}

TimingConfig timing_from(const Options& o) {
  return o.config.empty() ? TimingConfig::defaults() : TimingConfig::load_file(o.config);
}

const MappingSet& maps_from(const Options& o, MappingSet& storage) {
  if (o.maps.empty()) return MappingSet::builtin();
  storage = MappingSet::load_file(o.maps);
  return storage;
}

void write_summary(std::ostream& os, const std::string& what, const RunReport& r) {
  const CycleReport& c = r.cycles;
  os << "run: " << what << "\n";
  if (r.verified) {
    os << "verify: " << (r.pass ? "PASS" : "FAIL") << "\n";
    os << "mismatches: " << r.mismatches << "\n";
    os << "max_abs_diff: " << r.max_abs_diff << "\n";
  } else {
    os << "verify: off\n";
  }
  os << "total_cycles: " << c.total_cycles << "\n";
  os << "micro_ops: " << c.instructions << " (hmma " << c.hmma << ", loads " << c.loads
     << ", stores " << c.stores << ")\n";
  os << "fedp_ops: " << c.fedp_total << "\n";
  char util[32];
  std::snprintf(util, sizeof util, "%.4f", c.fedp_utilization);
  os << "fedp_utilization: " << util << "\n";
  os << "peak_tensor_warps: " << c.peak_tensor_warps << "\n";
  os << "peak_fedp_per_cycle: " << c.peak_fedp_per_cycle << "\n";
  os << "peak_register_bits_per_cycle: " << c.peak_register_bits_per_cycle << "\n";
  os << "min_hmma_issue_gap: " << c.min_hmma_issue_gap << "\n";
  for (const auto& [name, n] : r.counts) os << "count " << name << ": " << n << "\n";
  for (const auto& [name, s] : r.transactions)
    os << "memory " << name << ": " << s.instructions << " instr, " << s.micro_ops << " micro-ops, "
       << s.transactions << " transactions, " << s.bytes << " bytes\n";
}

void write_outputs(const std::string& dir, const std::string& what, const RunReport& r) {
  write_summary(std::cout, what, r);
  if (dir.empty()) return;
  fs::create_directories(dir);
  {
    std::ofstream os(fs::path(dir) / "summary.txt");
    write_summary(os, what, r);
  }
  {
    std::ofstream os(fs::path(dir) / "instructions.csv");
    os << "seq,issue,complete,latency,microop\n";
    for (const IssueRecord& rec : r.cycles.records) {
      const std::string& text = r.microops.at(static_cast<std::size_t>(rec.tag));
      os << rec.tag << ',' << rec.issue << ',' << rec.complete << ',' << rec.complete - rec.issue
         << ",\"" << text << "\"\n";
    }
  }
  {
    std::ofstream os(fs::path(dir) / "transactions.csv");
    os << "class,instructions,micro_ops,transactions,bytes\n";
    for (const auto& [name, s] : r.transactions)
      os << name << ',' << s.instructions << ',' << s.micro_ops << ',' << s.transactions << ','
         << s.bytes << "\n";
  }
  {
    std::ofstream os(fs::path(dir) / "microops.trace");
    for (const std::string& line : r.microops) os << line << "\n";
  }
  for (const auto& [name, bytes] : r.dumps) {
    std::ofstream os(fs::path(dir) / ("dump_" + name + ".bin"), std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
}

int cmd_gemm(const Options& o) {
  GemmJob job;
  job.mma = mma_from(o);
  job.c_layout = need(parse_layout(o.layout_c), "layout", o.layout_c);
  job.m = o.m, job.n = o.n, job.k = o.k;
  job.seed = o.seed;
  job.lo = o.lo, job.hi = o.hi;
  if (o.verify != "on" && o.verify != "off") throw ContractViolation("--verify takes on or off");
  job.verify = o.verify == "on";
  job.record = !o.out.empty();
  if (!o.emit_trace.empty()) {
    std::ofstream os(o.emit_trace);
    if (!os) throw Error("cannot write '" + o.emit_trace + "'");
    os << emit_gemm_trace(job);
  }
  MappingSet storage;
  const RunReport r = run_gemm(job, timing_from(o), maps_from(o, storage));
  std::ostringstream what;
  what << "gemm " << o.m << "x" << o.n << "x" << o.k << " " << to_string(job.mma) << " cd="
       << to_string(job.c_layout) << " seed=" << o.seed;
  write_outputs(o.out, what.str(), r);
  return r.pass ? 0 : 1;
}

int cmd_trace(const Options& o) {
  MappingSet storage;
  const RunReport r = run_trace_file(o.trace_file, timing_from(o), maps_from(o, storage), !o.out.empty());
  write_outputs(o.out, "trace " + o.trace_file, r);
  return 0;
}

int cmd_map_dump(const Options& o) {
  MappingSet storage;
  const MappingSet& maps = maps_from(o, storage);
  if (o.out.empty()) {
    maps.write(std::cout);
    return 0;
  }
  std::ofstream os(o.out);
  if (!os) throw Error("cannot write '" + o.out + "'");
  maps.write(os);
  return 0;
}

int cmd_latency(const Options& o, bool all, const std::string& write_config) {
  const TimingConfig cfg = timing_from(o);
  if (!write_config.empty()) {
    std::ofstream os(write_config);
    if (!os) throw Error("cannot write '" + write_config + "'");
    cfg.write(os);
  }
  auto show = [&](Arch arch, TileShape shape, PrecisionMode mode) {
    const auto cum = set_completion_cycles(arch, shape, mode, cfg);
    std::cout << latency_key(arch, shape, mode) << ":";
    for (int v : cum) std::cout << ' ' << v;
    std::cout << "  (wmma.mma " << wmma_mma_latency(arch, shape, mode, cfg) << " cycles)\n";
  };
  if (!all) {
    const MmaConfig c = mma_from(o);
    show(c.arch, c.shape, c.mode());
    return 0;
  }
  for (const auto& [key, cum] : cfg.set_cycles) {
    std::cout << key << ":";
    for (int v : cum) std::cout << ' ' << v;
    std::cout << "\n";
  }
  return 0;
}

void add_mma_flags(CLI::App* sub, Options& o) {
  sub->add_option("--arch", o.arch, "volta or turing")->capture_default_str();
  sub->add_option("--mode", o.mode, "mixed, fp16, int8 or int4")->capture_default_str();
  sub->add_option("--shape", o.shape, "m16n16k16, m32n8k16, m8n32k16 or m8n8k32");
  sub->add_option("--layout-a", o.layout_a, "row or col")->capture_default_str();
  sub->add_option("--layout-b", o.layout_b, "row or col")->capture_default_str();
  sub->add_option("--atype", o.atype, "override the A/B element type");
  sub->add_option("--ctype", o.ctype, "override the C element type");
  sub->add_option("--dtype", o.dtype, "override the D element type");
  sub->add_flag("--satfinite", o.satfinite, "clamp D to the finite range");
  sub->add_option("--rounding", o.rounding, "terminal or per-stage (FP16 mode)")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tensor core simulator"};
  app.require_subcommand(1);
  Options o;

  auto* gemm = app.add_subcommand("gemm", "run a tiled GEMM and check it against the reference");
  add_mma_flags(gemm, o);
  gemm->add_option("--layout-c", o.layout_c, "row or col")->capture_default_str();
  gemm->add_option("--m", o.m)->capture_default_str();
  gemm->add_option("--n", o.n)->capture_default_str();
  gemm->add_option("--k", o.k)->capture_default_str();
  gemm->add_option("--seed", o.seed)->capture_default_str();
  gemm->add_option("--lo", o.lo, "lower bound of floating inputs");
  gemm->add_option("--hi", o.hi, "upper bound of floating inputs");
  gemm->add_option("--verify", o.verify, "on or off")->capture_default_str();
  gemm->add_option("--config", o.config, "timing configuration file");
  gemm->add_option("--maps", o.maps, "fragment map file");
  gemm->add_option("--out", o.out, "directory for report files");
  gemm->add_option("--emit-trace", o.emit_trace, "also write the equivalent trace file");

  auto* trace = app.add_subcommand("trace", "run a WMMA trace file");
  trace->add_option("file", o.trace_file)->required();
  trace->add_option("--config", o.config, "timing configuration file");
  trace->add_option("--maps", o.maps, "fragment map file");
  trace->add_option("--out", o.out, "directory for report files");

  auto* dump = app.add_subcommand("map-dump", "write the fragment maps");
  dump->add_option("--maps", o.maps, "read maps from this file instead of the built-in set");
  dump->add_option("--out", o.out, "output file (default stdout)");

  bool all = false;
  auto* lat = app.add_subcommand("latency", "print set completion cycles");
  add_mma_flags(lat, o);
  lat->add_option("--config", o.config, "timing configuration file");
  lat->add_flag("--all", all, "list every configured table");
  std::string write_config;
  lat->add_option("--write-config", write_config, "save the effective timing configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gemm) return cmd_gemm(o);
    if (*trace) return cmd_trace(o);
    if (*dump) return cmd_map_dump(o);
    if (*lat) return cmd_latency(o, all, write_config);
  } catch (const std::exception& e) {
    std::cerr << "tcsim: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
