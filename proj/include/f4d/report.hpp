#pragma once

// Report files for complexity counts and training curves.
//
// JSON (schema "f4d.complexity/1"):
//   {"schema", "version", "flop_convention", "cost_model": {...}, "config": {...},
//    "reports": [{"model", "input_shape", "rows": [{name, kind, params, macs, flops,
//    nonlinearities}], "totals": {...}}]}
// JSON (schema "f4d.curves/1"):
//   {"schema", "version", "config", "curves": [{"model", "seed",
//    "epochs": [{epoch, train_loss, train_error, test_error}]}]}
//
// CSV files start with "# key=value" metadata lines, then a fixed header.
// Complexity CSV has one "total" row per model after its layers; curve CSV
// has one row per (model, seed, epoch). Doubles are written in shortest
// round-trip form, so emitting the same data twice gives identical bytes.

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "f4d/complexity.hpp"
#include "f4d/tensor_io.hpp"
#include "f4d/train.hpp"
#include "f4d/version.hpp"

namespace f4d {

using ojson = nlohmann::ordered_json;

enum class ReportFormat { Json, Csv };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "json") return ReportFormat::Json;
  if (s == "csv") return ReportFormat::Csv;
  throw std::invalid_argument("unknown report format '" + s + "' (json|csv)");
}

inline constexpr const char* kComplexitySchema = "f4d.complexity/1";
inline constexpr const char* kCurvesSchema = "f4d.curves/1";
inline constexpr const char* kFlopConvention =
    "FLOPs = 2 x MACs for conv and dense layers; batch norm and sigmoid per cost_model; other element-wise ops 1 per "
    "element";

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("bad number '" + s + "'");
  return v;
}

inline std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("bad integer '" + s + "'");
  return v;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') cur += '"', ++i;
      else if (c == '"') quoted = false;
      else cur += c;
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw FormatError("unterminated quote in CSV line");
  out.push_back(std::move(cur));
  return out;
}

/// Splits CSV text into metadata (from "# key=value" lines), header and rows.
struct CsvDoc {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvDoc csv_parse(const std::string& text, const std::vector<std::string>& expected_header) {
  CsvDoc d;
  std::istringstream is(text);
  std::string line;
  bool have_header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (!have_header && line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("bad metadata line '" + line + "'");
      d.meta.emplace_back(line.substr(2, eq - 2), line.substr(eq + 1));
      continue;
    }
    auto f = csv_split(line);
    if (!have_header) {
      if (f != expected_header) throw FormatError("unexpected CSV header '" + line + "'");
      d.header = std::move(f);
      have_header = true;
      continue;
    }
    if (f.size() != expected_header.size())
      throw FormatError("CSV row has " + std::to_string(f.size()) + " fields, expected " +
                        std::to_string(expected_header.size()));
    d.rows.push_back(std::move(f));
  }
  if (!have_header) throw FormatError("CSV header missing");
  return d;
}

inline std::string csv_meta(const ojson& config) {
  std::string s = "# version=" + std::string(kVersion) + "\n";
  s += "# config=" + config.dump() + "\n";
  return s;
}

inline ojson cost_json(const LayerCost& c) {
  return ojson{{"name", c.name},   {"kind", c.kind},   {"params", c.params},
               {"macs", c.macs},   {"flops", c.flops}, {"nonlinearities", c.nonlinearities}};
}

inline LayerCost cost_from_json(const ojson& j) {
  return {j.at("name").get<std::string>(), j.at("kind").get<std::string>(), j.at("params").get<std::uint64_t>(),
          j.at("macs").get<std::uint64_t>(),  j.at("flops").get<std::uint64_t>(),
          j.at("nonlinearities").get<std::uint64_t>()};
}

template <typename F>
auto json_guard(F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

}  // namespace detail

inline const std::vector<std::string>& complexity_csv_header() {
  static const std::vector<std::string> h{"model", "input_shape", "name", "kind", "params", "macs", "flops",
                                          "nonlinearities"};
  return h;
}

inline const std::vector<std::string>& curves_csv_header() {
  static const std::vector<std::string> h{"model", "seed", "epoch", "train_loss", "train_error", "test_error"};
  return h;
}

inline std::string render_complexity(const std::vector<ComplexityReport>& reports, ReportFormat fmt,
                                     const ojson& config = ojson::object(), const CostModel& model = {}) {
  if (fmt == ReportFormat::Json) {
    ojson j;
    j["schema"] = kComplexitySchema;
    j["version"] = kVersion;
    j["flop_convention"] = kFlopConvention;
    j["cost_model"] = {{"elementwise", model.elementwise}, {"batch_norm", model.batch_norm},
                       {"sigmoid", model.sigmoid}};
    j["config"] = config;
    j["reports"] = ojson::array();
    for (const auto& r : reports) {
      ojson rj{{"model", r.model}, {"input_shape", r.input_shape}, {"rows", ojson::array()}};
      for (const auto& row : r.rows) rj["rows"].push_back(detail::cost_json(row));
      rj["totals"] = detail::cost_json(r.totals());
      j["reports"].push_back(std::move(rj));
    }
    return j.dump(2) + "\n";
  }
  std::string s = detail::csv_meta(config);
  s += "# flop_convention=" + std::string(kFlopConvention) + "\n";
  bool first = true;
  for (const auto& h : complexity_csv_header()) s += (first ? "" : ",") + h, first = false;
  s += "\n";
  auto row = [&](const ComplexityReport& r, const LayerCost& c) {
    s += detail::csv_field(r.model) + "," + detail::csv_field(r.input_shape) + "," + detail::csv_field(c.name) + "," +
         detail::csv_field(c.kind) + "," + std::to_string(c.params) + "," + std::to_string(c.macs) + "," +
         std::to_string(c.flops) + "," + std::to_string(c.nonlinearities) + "\n";
  };
  for (const auto& r : reports) {
    for (const auto& c : r.rows) row(r, c);
    row(r, r.totals());
  }
  return s;
}

inline std::vector<ComplexityReport> parse_complexity(const std::string& text, ReportFormat fmt) {
  std::vector<ComplexityReport> out;
  if (fmt == ReportFormat::Json) {
    return detail::json_guard([&] {
      const auto j = ojson::parse(text);
      if (j.at("schema") != kComplexitySchema) throw FormatError("not a complexity report");
      for (const auto& rj : j.at("reports")) {
        ComplexityReport r{rj.at("model").get<std::string>(), rj.at("input_shape").get<std::string>(), {}};
        for (const auto& row : rj.at("rows")) r.rows.push_back(detail::cost_from_json(row));
        if (!(r.totals() == detail::cost_from_json(rj.at("totals"))))
          throw FormatError("totals of '" + r.model + "' disagree with its rows");
        out.push_back(std::move(r));
      }
      return out;
    });
  }
  const auto doc = detail::csv_parse(text, complexity_csv_header());
  bool open = false;
  for (const auto& f : doc.rows) {
    LayerCost c{f[2], f[3], detail::parse_u64(f[4]), detail::parse_u64(f[5]), detail::parse_u64(f[6]),
                detail::parse_u64(f[7])};
    if (open && (out.back().model != f[0] || out.back().input_shape != f[1]))
      throw FormatError("report '" + out.back().model + "' has no total row");
    if (!open) out.push_back({f[0], f[1], {}});
    open = true;
    if (c.kind == "total") {
      if (!(out.back().totals() == c)) throw FormatError("totals of '" + f[0] + "' disagree with its rows");
      open = false;
      continue;
    }
    out.back().rows.push_back(std::move(c));
  }
  if (open) throw FormatError("report '" + out.back().model + "' has no total row");
  return out;
}

inline std::string render_curves(const std::vector<TrainCurve>& curves, ReportFormat fmt,
                                 const ojson& config = ojson::object()) {
  if (fmt == ReportFormat::Json) {
    ojson j;
    j["schema"] = kCurvesSchema;
    j["version"] = kVersion;
    j["config"] = config;
    j["curves"] = ojson::array();
    for (const auto& c : curves) {
      ojson cj{{"model", c.model}, {"seed", c.seed}, {"epochs", ojson::array()}};
      for (const auto& e : c.epochs)
        cj["epochs"].push_back({{"epoch", e.epoch},
                                {"train_loss", e.train_loss},
                                {"train_error", e.train_error},
                                {"test_error", e.test_error}});
      j["curves"].push_back(std::move(cj));
    }
    return j.dump(2) + "\n";
  }
  std::string s = detail::csv_meta(config);
  bool first = true;
  for (const auto& h : curves_csv_header()) s += (first ? "" : ",") + h, first = false;
  s += "\n";
  for (const auto& c : curves)
    for (const auto& e : c.epochs)
      s += detail::csv_field(c.model) + "," + std::to_string(c.seed) + "," + std::to_string(e.epoch) + "," +
           detail::fmt_double(e.train_loss) + "," + detail::fmt_double(e.train_error) + "," +
           detail::fmt_double(e.test_error) + "\n";
  return s;
}

/// CSV cannot represent a curve with no epochs; such curves are dropped.
inline std::vector<TrainCurve> parse_curves(const std::string& text, ReportFormat fmt) {
  std::vector<TrainCurve> out;
  if (fmt == ReportFormat::Json) {
    return detail::json_guard([&] {
      const auto j = ojson::parse(text);
      if (j.at("schema") != kCurvesSchema) throw FormatError("not a curves report");
      for (const auto& cj : j.at("curves")) {
        TrainCurve c{cj.at("model").get<std::string>(), cj.at("seed").get<std::uint64_t>(), {}};
        for (const auto& e : cj.at("epochs"))
          c.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                              e.at("train_error").get<double>(), e.at("test_error").get<double>()});
        out.push_back(std::move(c));
      }
      return out;
    });
  }
  const auto doc = detail::csv_parse(text, curves_csv_header());
  for (const auto& f : doc.rows) {
    const auto seed = detail::parse_u64(f[1]);
    if (out.empty() || out.back().model != f[0] || out.back().seed != seed) out.push_back({f[0], seed, {}});
    out.back().epochs.push_back({static_cast<std::size_t>(detail::parse_u64(f[2])), detail::parse_double(f[3]),
                                 detail::parse_double(f[4]), detail::parse_double(f[5])});
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << text;
  os.flush();
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void emit_report(const std::vector<ComplexityReport>& reports, const std::string& path, ReportFormat fmt,
                        const ojson& config = ojson::object(), const CostModel& model = {}) {
  write_text_file(path, render_complexity(reports, fmt, config, model));
}

inline void emit_report(const std::vector<TrainCurve>& curves, const std::string& path, ReportFormat fmt,
                        const ojson& config = ojson::object()) {
  write_text_file(path, render_curves(curves, fmt, config));
}

/// Fixed-width table of per-model totals for terminals.
inline std::string complexity_table(const std::vector<ComplexityReport>& reports) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "model" << std::right << std::setw(14) << "params" << std::setw(18) << "MACs"
     << std::setw(18) << "FLOPs" << std::setw(16) << "nonlinearities" << "\n";
  for (const auto& r : reports) {
    const auto t = r.totals();
    os << std::left << std::setw(20) << r.model << std::right << std::setw(14) << t.params << std::setw(18) << t.macs
       << std::setw(18) << t.flops << std::setw(16) << t.nonlinearities << "\n";
  }
  return os.str();
}

}  // namespace f4d
