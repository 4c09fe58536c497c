#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using namespace f4d;

namespace {

BackbonePlan plan() { return ToySetup::smoke().plan; }

std::vector<TrainCurve> sample_curves() {
  return {{"factorized", 7, {{0, 0.693147, 0.5, 0.5}, {1, 0.61, 0.25, 0.375}, {2, 1.0 / 3.0, 0.0, 0.125}}},
          {"full4d", 7, {{0, 0.7, 0.5, 0.5}, {1, 1e-17, 0.0, 0.0}}}};
}

std::vector<ComplexityReport> sample_reports() {
  std::vector<ComplexityReport> out;
  for (auto kind : {ConvKind::Full4D, ConvKind::Factorized}) {
    auto p = plan();
    p.block.conv = kind;
    Backbone<float> m(p, 0, true);
    auto r = m.complexity(Shape{{Axis::B, 1}, {Axis::U, 4}, {Axis::C, 1}, {Axis::T, 4}, {Axis::H, 8}, {Axis::W, 8}});
    r.model = kind == ConvKind::Full4D ? "full4d" : "factorized";
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

TEST(Checkpoint, RoundTripRestoresEveryTensor) {
  const auto dir = testutil::scratch_dir("ckpt");
  Backbone<double> a(plan(), 1), b(plan(), 2);
  for (auto& [n, t] : a.store().buffers())
    for (auto& v : t->mutable_data()) v += 0.5;
  save_checkpoint(dir, a.store(), DType::F64);
  load_checkpoint(dir, b.store());
  auto pa = a.store().parameters(), pb = b.store().parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
  auto ba = a.store().buffers(), bb = b.store().buffers();
  for (std::size_t i = 0; i < ba.size(); ++i) EXPECT_EQ(*ba[i].second, *bb[i].second) << ba[i].first;
}

TEST(Checkpoint, ManifestCountEqualsModelParameters) {
  const auto dir = testutil::scratch_dir("ckpt_count");
  Backbone<float> m(plan(), 3);
  save_checkpoint(dir, m.store(), DType::F32);
  EXPECT_EQ(checkpoint_element_count(dir), m.store().element_count());
  std::size_t buffers = 0;
  for (const auto& [n, t] : m.store().buffers()) buffers += t->size();
  EXPECT_EQ(checkpoint_element_count(dir, "buffer"), buffers);
  const auto man = read_checkpoint_manifest(dir);
  EXPECT_EQ(man.at("dtype"), "f32");
  EXPECT_EQ(man.at("version"), kVersion);
}

TEST(Checkpoint, RejectsMismatchedModel) {
  const auto dir = testutil::scratch_dir("ckpt_bad");
  Backbone<float> m(plan(), 4);
  save_checkpoint(dir, m.store(), DType::F32);
  auto other = plan();
  other.stem_width = 4;
  Backbone<float> wrong(other, 4);
  EXPECT_THROW(load_checkpoint(dir, wrong.store()), std::exception);
  auto fewer = plan();
  fewer.insertion = {};
  Backbone<float> missing(fewer, 4);
  EXPECT_THROW(load_checkpoint(dir, missing.store()), FormatError);
}

TEST(Reports, CurvesRoundTripBothFormats) {
  const auto curves = sample_curves();
  for (auto fmt : {ReportFormat::Json, ReportFormat::Csv}) {
    const auto text = render_curves(curves, fmt, {{"seed", 7}});
    EXPECT_EQ(parse_curves(text, fmt), curves);
    EXPECT_EQ(render_curves(parse_curves(text, fmt), fmt, {{"seed", 7}}), text);
  }
}

TEST(Reports, EmptyCurvesStillValid) {
  const auto csv = render_curves({}, ReportFormat::Csv);
  EXPECT_NE(csv.find("model,seed,epoch,train_loss,train_error,test_error"), std::string::npos);
  EXPECT_TRUE(parse_curves(csv, ReportFormat::Csv).empty());
  EXPECT_TRUE(parse_curves(render_curves({}, ReportFormat::Json), ReportFormat::Json).empty());
}

TEST(Reports, ComplexityRoundTripAndFormatsAgree) {
  const auto reports = sample_reports();
  const auto json = render_complexity(reports, ReportFormat::Json);
  const auto csv = render_complexity(reports, ReportFormat::Csv);
  EXPECT_EQ(parse_complexity(json, ReportFormat::Json), reports);
  EXPECT_EQ(parse_complexity(csv, ReportFormat::Csv), reports);
  EXPECT_EQ(render_complexity(parse_complexity(csv, ReportFormat::Csv), ReportFormat::Csv), csv);
}

TEST(Reports, TwoRowTableShowsBothModels) {
  const auto reports = sample_reports();
  const auto table = complexity_table(reports);
  EXPECT_NE(table.find("full4d"), std::string::npos);
  EXPECT_NE(table.find("factorized"), std::string::npos);
  EXPECT_LE(reports[1].totals().params, reports[0].totals().params);
  EXPECT_LE(reports[1].totals().flops, reports[0].totals().flops);
}

TEST(Reports, RejectsMalformedInput) {
  EXPECT_THROW(parse_report_format("xml"), std::invalid_argument);
  EXPECT_THROW(parse_curves("not json", ReportFormat::Json), FormatError);
  EXPECT_THROW(parse_curves("model,seed\nx,1\n", ReportFormat::Csv), FormatError);
  auto csv = render_complexity(sample_reports(), ReportFormat::Csv);
  // drop the last total row
  csv.erase(csv.rfind("factorized,"));
  EXPECT_THROW(parse_complexity(csv, ReportFormat::Csv), FormatError);
}

TEST(Reports, FileHelpersNamePath) {
  try {
    read_text_file("/nonexistent/f4d/report.json");
    FAIL();
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/f4d/report.json"), std::string::npos);
  }
}
