#include <cctype>
#include <cstdio>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include "tcsim/error.hpp"
#include "tcsim/harness.hpp"

namespace tcsim {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char* gen_name(GenKind k) {
  switch (k) {
    case GenKind::Zero: return "zero";
    case GenKind::Identity: return "identity";
    case GenKind::Iota: return "iota";
    case GenKind::Random: return "random";
  }
  return "zero";
}

std::optional<GenKind> parse_gen(const std::string& s) {
  for (GenKind k : {GenKind::Zero, GenKind::Identity, GenKind::Iota, GenKind::Random})
    if (s == gen_name(k)) return k;
  return std::nullopt;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

std::string emit_gemm_trace(const GemmJob& job) {
  const MmaConfig& mc = job.mma;
  validate(mc);
  const GemmLayout L = gemm_layout(job);
  std::ostringstream out;
  out << "// " << job.m << "x" << job.n << "x" << job.k << " GEMM, " << to_string(mc) << "\n";
  out << ".arch " << to_string(mc.arch) << "\n";
  out << ".region A " << (L.b - L.a) << "\n";
  out << ".region B " << (L.c - L.b) << "\n";
  out << ".region C " << (L.d - L.c) << "\n";
  out << ".region D " << (L.total - L.d) << "\n";

  auto matrix = [&](char name, ElemType t, int rows, int cols, Layout layout, int ld, int stream) {
    out << ".matrix " << name << ' ' << to_string(t) << ' ' << rows << ' ' << cols << ' '
        << to_string(layout) << ' ' << ld << " random " << job.seed << ' ' << stream;
    if (is_float(t)) {
      double lo = 0, hi = 0;
      default_range(t, lo, hi);
      out << ' ' << fmt_double(job.lo.value_or(lo)) << ' ' << fmt_double(job.hi.value_or(hi));
    }
    out << "\n";
  };
  matrix('A', mc.ab_type, job.m, job.k, mc.a_layout, L.lda, 0);
  matrix('B', mc.ab_type, job.k, job.n, mc.b_layout, L.ldb, 1);
  matrix('C', mc.ctype, job.m, job.n, job.c_layout, L.ldc, 2);

  for_each_gemm_instr(job, [&](const PtxWmmaInstr& in, char, std::uint64_t) {
    out << print(in) << "\n";
  });
  out << ".dump D\n";
  return out.str();
}

namespace {

struct Region {
  std::uint64_t base = 0;
  std::uint64_t bytes = 0;
};

class TraceRunner {
 public:
  TraceRunner(const TimingConfig& cfg, const MappingSet& maps, bool record)
      : cfg_(cfg), maps_(maps), record_(record) {
    reset(Arch::Volta);
  }

  void line(const std::string& raw, std::size_t no) {
    std::string s = raw;
    if (auto p = s.find("//"); p != std::string::npos) s.erase(p);
    s = trim(s);
    if (s.empty()) return;
    if (s[0] == '.') return directive(s, no);
    if (s.back() == ':') {
      const std::string label = trim(s.substr(0, s.size() - 1));
      if (label.empty()) throw ParseError("empty label", no, 1);
      if (!labels_.insert(label).second) throw ParseError("duplicate label '" + label + "'", no, 1);
      return;
    }
    if (s == "nop" || s == "nop;") {
      ex_->nop();
      ++instructions_;
      return;
    }
    const PtxWmmaInstr in = parse_wmma(s, no);
    std::uint64_t addr = 0;
    if (in.kind != WmmaKind::Mma) addr = resolve(in, no);
    ex_->execute(in, addr);
    ++instructions_;
  }

  RunReport finish() {
    RunReport rep = ex_->finish();
    const auto bytes = ex_->memory().bytes();
    for (const std::string& name : dumps_) {
      const Region& r = regions_.at(name);
      rep.dumps[name].assign(bytes.begin() + r.base, bytes.begin() + r.base + r.bytes);
    }
    return rep;
  }

 private:
  void reset(Arch arch) {
    ex_ = std::make_unique<WarpExecutor>(arch, cfg_, maps_, true, record_);
    ex_->memory().resize(end_);
  }

  const Region& region(const std::string& name, std::size_t no) const {
    auto it = regions_.find(name);
    if (it == regions_.end()) throw TraceError("unknown region '" + name + "'", no);
    return it->second;
  }

  std::uint64_t resolve(const PtxWmmaInstr& in, std::size_t no) const {
    const Region& r = region(in.addr.base, no);
    if (in.addr.offset < 0 || static_cast<std::uint64_t>(in.addr.offset) >= r.bytes)
      throw TraceError("offset " + std::to_string(in.addr.offset) + " outside region '" +
                           in.addr.base + "'",
                       no);
    return r.base + static_cast<std::uint64_t>(in.addr.offset);
  }

  void directive(const std::string& s, std::size_t no) {
    std::istringstream is(s);
    std::string name;
    is >> name;
    std::vector<std::string> args;
    for (std::string a; is >> a;) args.push_back(a);
    auto need = [&](std::size_t lo, std::size_t hi) {
      if (args.size() < lo || args.size() > hi)
        throw ParseError("wrong number of arguments to " + name, no, 1);
    };
    auto number = [&](const std::string& a) -> std::int64_t {
      std::size_t used = 0;
      std::int64_t v = 0;
      try {
        v = std::stoll(a, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != a.size()) throw ParseError("expected an integer, got '" + a + "'", no, 1);
      return v;
    };
    auto real = [&](const std::string& a) -> double {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(a, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != a.size()) throw ParseError("expected a number, got '" + a + "'", no, 1);
      return v;
    };

    if (name == ".arch") {
      need(1, 1);
      const auto arch = parse_arch(args[0]);
      if (!arch) throw ParseError("unknown architecture '" + args[0] + "'", no, 1);
      if (instructions_ != 0) throw TraceError(".arch must precede every instruction", no);
      reset(*arch);
    } else if (name == ".region") {
      need(2, 2);
      if (regions_.count(args[0])) throw TraceError("region '" + args[0] + "' redefined", no);
      const std::int64_t bytes = number(args[1]);
      if (bytes <= 0) throw TraceError("region size must be positive", no);
      const std::uint64_t base = (end_ + 255) / 256 * 256;
      regions_[args[0]] = Region{base, static_cast<std::uint64_t>(bytes)};
      end_ = base + static_cast<std::uint64_t>(bytes);
      if (end_ > (std::uint64_t(1) << 34)) throw TraceError("regions exceed the modeled memory", no);
      ex_->memory().resize(end_);
    } else if (name == ".matrix") {
      need(9, 11);
      const Region& r = region(args[0], no);
      const auto type = parse_elem_type(args[1]);
      if (!type) throw ParseError("unknown element type '" + args[1] + "'", no, 1);
      const std::int64_t rows = number(args[2]), cols = number(args[3]);
      const auto layout = parse_layout(args[4]);
      if (!layout) throw ParseError("expected row or col, got '" + args[4] + "'", no, 1);
      const std::int64_t ld = number(args[5]);
      const auto kind = parse_gen(args[6]);
      if (!kind) throw ParseError("unknown generator '" + args[6] + "'", no, 1);
      GenSpec g;
      g.kind = *kind;
      g.seed = static_cast<std::uint64_t>(number(args[7]));
      g.stream = static_cast<int>(number(args[8]));
      if (args.size() == 10) throw ParseError(".matrix range needs both LO and HI", no, 1);
      if (args.size() == 11) {
        g.lo = real(args[9]);
        g.hi = real(args[10]);
      }
      if (rows <= 0 || cols <= 0) throw TraceError("matrix dimensions must be positive", no);
      if (ld < (*layout == Layout::RowMajor ? cols : rows))
        throw TraceError("leading dimension smaller than the matrix", no);
      const std::int64_t lines = *layout == Layout::RowMajor ? rows : cols;
      const std::uint64_t span = (static_cast<std::uint64_t>(lines) * ld * elem_bits(*type) + 7) / 8;
      if (span > r.bytes) throw TraceError("matrix does not fit region '" + args[0] + "'", no);
      const Matrix m = generate(*type, static_cast<int>(rows), static_cast<int>(cols), g);
      store_matrix(ex_->memory(), r.base, m, *layout, static_cast<int>(ld));
    } else if (name == ".dump") {
      need(1, 1);
      region(args[0], no);
      dumps_.push_back(args[0]);
    } else {
      throw ParseError("unknown directive '" + name + "'", no, 1);
    }
  }

  const TimingConfig& cfg_;
  const MappingSet& maps_;
  bool record_;
  std::unique_ptr<WarpExecutor> ex_;
  std::map<std::string, Region> regions_;
  std::set<std::string> labels_;
  std::vector<std::string> dumps_;
  std::uint64_t end_ = 0;
  std::int64_t instructions_ = 0;
};

}  // namespace

RunReport run_trace(std::istream& in, const TimingConfig& cfg, const MappingSet& maps,
                    bool record) {
  TraceRunner runner(cfg, maps, record);
  std::string text;
  std::size_t no = 0;
  while (std::getline(in, text)) {
    ++no;
    try {
      runner.line(text, no);
    } catch (const ParseError&) {
      throw;
    } catch (const TraceError&) {
      throw;
    } catch (const Error& e) {
      throw TraceError(e.what(), no);
    }
  }
  return runner.finish();
}

RunReport run_trace_file(const std::string& path, const TimingConfig& cfg,
                         const MappingSet& maps, bool record) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace '" + path + "'");
  return run_trace(in, cfg, maps, record);
}

}  // namespace tcsim
