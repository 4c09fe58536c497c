// f4d: equivalence, gradient, complexity, training and sampling commands.
//
// Exit codes: 0 success, 1 check failure, 2 usage or configuration error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "f4d/f4d.hpp"

namespace fs = std::filesystem;
using f4d::ojson;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 7;
  std::string dtype;  // empty: command default
  std::string out;
  std::string format = "json";
};

std::string resolve_dtype(const Globals& g, const std::string& fallback) { return g.dtype.empty() ? fallback : g.dtype; }

ojson base_config(const Globals& g, const std::string& command, const std::string& dtype) {
  return ojson{{"command", command}, {"version", f4d::kVersion}, {"seed", g.seed},     {"dtype", dtype},
               {"format", g.format}, {"out", g.out.empty() ? ojson(nullptr) : ojson(g.out)}};
}

/// Write to --out when given, otherwise to stdout.
void deliver(const Globals& g, const std::string& text) {
  if (g.out.empty())
    std::cout << text;
  else
    f4d::write_text_file(g.out, text);
}

std::set<std::string> split_list(const std::string& s) {
  std::set<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.insert(item);
  return out;
}

// ---------------------------------------------------------------------------
// equiv

struct EquivArgs {
  f4d::EquivOptions opt;
  long long corrupt = -1;
};

int cmd_equiv(const Globals& g, EquivArgs a) {
  const auto dtype = resolve_dtype(g, "f64");
  if (dtype != "f64") throw UsageError("equivalence checks run at 64-bit only (got --dtype " + dtype + ")");
  if (a.opt.trials == 0) throw UsageError("--trials 0 verifies nothing");
  a.opt.seed = g.seed;
  if (a.corrupt >= 0) a.opt.corrupt_trial = static_cast<std::size_t>(a.corrupt);
  const auto trials = f4d::run_equivalence(a.opt);

  auto cfg = base_config(g, "equiv", dtype);
  cfg["trials"] = a.opt.trials;
  cfg["separable_trials"] = a.opt.separable_trials;
  cfg["tolerance"] = a.opt.tolerance;
  cfg["max_channels"] = a.opt.max_channels;
  cfg["max_units"] = a.opt.max_units;
  cfg["max_time"] = a.opt.max_time;
  cfg["max_space"] = a.opt.max_space;
  cfg["max_kernel"] = a.opt.max_kernel;
  cfg["corrupt_trial"] = a.corrupt >= 0 ? ojson(a.corrupt) : ojson(nullptr);

  double worst = 0;
  std::vector<const f4d::EquivTrial*> failed;
  for (const auto& t : trials) {
    worst = std::max(worst, t.rel_error);
    if (!t.pass) failed.push_back(&t);
  }
  std::string text;
  if (f4d::parse_report_format(g.format) == f4d::ReportFormat::Json) {
    ojson j{{"schema", "f4d.equiv/1"}, {"version", f4d::kVersion}, {"config", cfg}, {"trials", ojson::array()}};
    for (const auto& t : trials)
      j["trials"].push_back({{"suite", t.suite},
                             {"index", t.index},
                             {"padding", t.padding},
                             {"input_shape", t.input_shape},
                             {"kernel_shape", t.kernel_shape},
                             {"rel_error", t.rel_error},
                             {"pass", t.pass}});
    j["max_rel_error"] = worst;
    j["pass"] = failed.empty();
    text = j.dump(2) + "\n";
  } else {
    text = "# version=" + std::string(f4d::kVersion) + "\n# config=" + cfg.dump() + "\n";
    text += "suite,index,padding,input_shape,kernel_shape,rel_error,pass\n";
    for (const auto& t : trials)
      text += t.suite + "," + std::to_string(t.index) + "," + t.padding + ",\"" + t.input_shape + "\",\"" +
              t.kernel_shape + "\"," + f4d::detail::fmt_double(t.rel_error) + "," + (t.pass ? "1" : "0") + "\n";
  }
  deliver(g, text);
  if (!g.out.empty())
    std::cout << "equiv: " << trials.size() << " trials, max rel error " << worst << ", "
              << (failed.empty() ? "pass" : "FAIL") << "\n";
  for (const auto* t : failed)
    std::cerr << "equiv: " << t->suite << " trial " << t->index << " (" << t->padding << ", input " << t->input_shape
              << ", kernel " << t->kernel_shape << ") rel error " << t->rel_error << " > " << a.opt.tolerance << "\n";
  return failed.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradArgs {
  std::vector<std::string> ops;
  bool all = false;
  bool list = false;
  std::size_t seeds = 10;
  double tolerance = 1e-4;
};

int cmd_gradcheck(const Globals& g, const GradArgs& a) {
  const auto probes = f4d::gradient_probes();
  if (a.list) {
    for (const auto& p : probes) std::cout << p.name << (p.op.empty() ? "" : "  [registry]") << "\n";
    return 0;
  }
  const auto dtype = resolve_dtype(g, "f64");
  if (dtype != "f64") throw UsageError("gradient checks are 64-bit only; refusing --dtype " + dtype);
  if (!a.all && a.ops.empty()) throw UsageError("gradcheck needs --op NAME or --all");
  if (a.seeds == 0) throw UsageError("--seeds 0 verifies nothing");
  std::vector<const f4d::GradProbe*> selected;
  for (const auto& p : probes)
    if (a.all || std::find(a.ops.begin(), a.ops.end(), p.name) != a.ops.end()) selected.push_back(&p);
  for (const auto& name : a.ops)
    if (std::none_of(probes.begin(), probes.end(), [&](const auto& p) { return p.name == name; }))
      throw UsageError("unknown op '" + name + "' (see gradcheck --list)");

  std::vector<f4d::GradProbeResult> results;
  ojson rows = ojson::array();
  bool ok = true;
  for (const auto* p : selected) {
    f4d::GradCheckResult agg;
    for (std::size_t s = 0; s < a.seeds; ++s) {
      auto r = f4d::run_probe(*p, g.seed + s);
      if (r.check.max_rel_error >= agg.max_rel_error) agg.worst = r.check.worst + " seed " + std::to_string(g.seed + s);
      agg.max_rel_error = std::max(agg.max_rel_error, r.check.max_rel_error);
      agg.checked += r.check.checked;
      agg.skipped += r.check.skipped;
      results.push_back(std::move(r));
    }
    const bool pass = agg.max_rel_error <= a.tolerance && agg.checked > 0;
    ok = ok && pass;
    rows.push_back({{"probe", p->name},
                    {"registry_op", p->op.empty() ? ojson(nullptr) : ojson(p->op)},
                    {"mode", p->mode == f4d::Mode::Train ? "train" : "eval"},
                    {"seeds", a.seeds},
                    {"max_rel_error", agg.max_rel_error},
                    {"checked", agg.checked},
                    {"skipped", agg.skipped},
                    {"worst", agg.worst},
                    {"pass", pass}});
    std::cout << "gradcheck " << p->name << ": max rel error " << agg.max_rel_error << " over " << agg.checked
              << " coordinates (" << agg.skipped << " skipped at kinks) " << (pass ? "pass" : "FAIL") << "\n";
  }
  auto cfg = base_config(g, "gradcheck", dtype);
  cfg["ops"] = a.ops;
  cfg["all"] = a.all;
  cfg["seeds"] = a.seeds;
  cfg["tolerance"] = a.tolerance;
  cfg["step"] = f4d::GradCheckOptions{}.step;
  ojson j{{"schema", "f4d.gradcheck/1"}, {"version", f4d::kVersion}, {"config", cfg}, {"probes", rows}};
  if (a.all) {
    const auto missing = f4d::uncovered_ops(results);
    j["coverage"] = {{"registry_size", f4d::kDifferentiableOps.size()},
                     {"covered", f4d::kDifferentiableOps.size() - missing.size()},
                     {"missing", missing}};
    if (!missing.empty()) {
      ok = false;
      for (const auto& m : missing) std::cerr << "gradcheck: registry op '" << m << "' was not exercised by any probe\n";
    }
    std::cout << "coverage: " << f4d::kDifferentiableOps.size() - missing.size() << "/"
              << f4d::kDifferentiableOps.size() << " registry ops\n";
  }
  j["pass"] = ok;
  if (f4d::parse_report_format(g.format) == f4d::ReportFormat::Json) {
    if (!g.out.empty()) f4d::write_text_file(g.out, j.dump(2) + "\n");
  } else if (!g.out.empty()) {
    std::string text = "# version=" + std::string(f4d::kVersion) + "\n# config=" + cfg.dump() + "\n";
    text += "probe,registry_op,mode,seeds,max_rel_error,checked,skipped,pass\n";
    for (const auto& r : rows)
      text += r["probe"].get<std::string>() + "," +
              (r["registry_op"].is_null() ? std::string() : r["registry_op"].get<std::string>()) + "," +
              r["mode"].get<std::string>() + "," + std::to_string(a.seeds) + "," +
              f4d::detail::fmt_double(r["max_rel_error"].get<double>()) + "," + r["checked"].dump() + "," +
              r["skipped"].dump() + "," + (r["pass"].get<bool>() ? "1" : "0") + "\n";
    f4d::write_text_file(g.out, text);
  }
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// complexity

struct ComplexityArgs {
  std::string plan = "mini";
  std::string insertion = "conv2,conv3,conv4,conv5";
  std::size_t units = 4;
  std::size_t frames = 8;
  std::size_t size = 0;  // 0: plan default
  std::size_t batch = 1;
  std::uint64_t bn_flops = 2;
  std::uint64_t sigmoid_flops = 2;
};

int cmd_complexity(const Globals& g, const ComplexityArgs& a) {
  f4d::BackbonePlan plan;
  std::size_t size = a.size;
  if (a.plan == "mini") {
    plan = f4d::BackbonePlan::mini();
    if (!size) size = 32;
  } else if (a.plan == "resnet50") {
    plan = f4d::BackbonePlan::resnet50_shaped();
    if (!size) size = 224;
  } else {
    throw UsageError("unknown plan '" + a.plan + "' (mini|resnet50)");
  }
  plan.units = a.units;
  plan.insertion = split_list(a.insertion);
  f4d::CostModel cm;
  cm.batch_norm = a.bn_flops;
  cm.sigmoid = a.sigmoid_flops;
  const f4d::Shape video{{f4d::Axis::B, a.batch}, {f4d::Axis::U, plan.units}, {f4d::Axis::C, plan.in_channels},
                         {f4d::Axis::T, a.frames},  {f4d::Axis::H, size},       {f4d::Axis::W, size}};
  std::vector<f4d::ComplexityReport> reports;
  for (auto kind : {f4d::ConvKind::Full4D, f4d::ConvKind::Factorized}) {
    auto p = plan;
    p.block.conv = kind;
    const f4d::Backbone<float> model(p, g.seed, /*counting_only=*/true);
    auto r = model.complexity(video, cm);
    r.model = kind == f4d::ConvKind::Full4D ? "full4d" : "factorized";
    reports.push_back(std::move(r));
  }
  auto cfg = base_config(g, "complexity", resolve_dtype(g, "f32"));
  cfg["plan"] = a.plan;
  cfg["insertion"] = plan.insertion;
  cfg["units"] = plan.units;
  cfg["input_shape"] = video.str();
  const auto fmt = f4d::parse_report_format(g.format);
  if (g.out.empty()) {
    std::cout << f4d::render_complexity(reports, fmt, cfg, cm);
  } else {
    f4d::emit_report(reports, g.out, fmt, cfg, cm);
    std::cout << f4d::complexity_table(reports);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train-toy

struct TrainArgs {
  std::optional<std::size_t> epochs;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch = 8;
  std::size_t classes = 2;
  std::size_t per_class = 16;
  std::string conv = "factorized";
  std::string insertion = "conv1,conv2,conv3,conv4,conv5";
  double dropout = 0.5;
  bool flip = false;
  bool corner_crop = false;
  bool overfit_smoke = false;
  bool compare = false;
  std::size_t seeds = 5;
  std::string checkpoint;
};

template <typename T>
int run_train(const Globals& g, const TrainArgs& a, const std::string& dtype) {
  auto setup = a.compare ? f4d::ToySetup::compare() : f4d::ToySetup::smoke();
  if (!a.overfit_smoke) setup.train.stop_at_zero_train_error = false;
  if (a.epochs) setup.train.epochs = *a.epochs;
  else if (!a.compare && !a.overfit_smoke) setup.train.epochs = 30;
  setup.train.optimizer.lr = a.lr;
  setup.train.optimizer.momentum = a.momentum;
  setup.train.batch_size = a.batch;
  setup.train.augment.horizontal_flip = a.flip;
  setup.train.augment.corner_crop = a.corner_crop;
  setup.data.classes = a.classes;
  setup.data.per_class = a.per_class;
  setup.plan.classes = a.classes;
  setup.plan.insertion = split_list(a.insertion);
  setup.plan.block.dropout = a.dropout;
  if (a.conv != "factorized" && a.conv != "full4d") throw UsageError("--conv must be factorized or full4d");
  setup.plan.block.conv = a.conv == "full4d" ? f4d::ConvKind::Full4D : f4d::ConvKind::Factorized;
  setup.plan.validate();
  if (a.flip && a.classes > 4) throw UsageError("--flip needs at most 4 classes");

  auto data_cfg = setup.data;
  data_cfg.seed = g.seed;
  const auto train_set = f4d::generate_synthetic_dataset<T>(data_cfg);
  data_cfg.seed = g.seed + 1000003;
  data_cfg.per_class = std::max<std::size_t>(1, a.per_class / 2);
  const auto test_set = f4d::generate_synthetic_dataset<T>(data_cfg);

  auto cfg = base_config(g, "train-toy", dtype);
  cfg["epochs"] = setup.train.epochs;
  cfg["lr"] = a.lr;
  cfg["momentum"] = a.momentum;
  cfg["decay_epochs"] = setup.train.optimizer.decay_epochs;
  cfg["batch"] = a.batch;
  cfg["classes"] = a.classes;
  cfg["per_class"] = a.per_class;
  cfg["frames"] = setup.data.frames;
  cfg["height"] = setup.data.height;
  cfg["width"] = setup.data.width;
  cfg["sampler"] = {{"units", setup.train.sampler.units},
                    {"snippet", setup.train.sampler.snippet},
                    {"frames", setup.train.sampler.frames},
                    {"stride", setup.train.sampler.stride}};
  cfg["insertion"] = setup.plan.insertion;
  cfg["dropout"] = a.dropout;
  cfg["augment"] = {{"horizontal_flip", a.flip}, {"corner_crop", a.corner_crop}};
  const auto fmt = f4d::parse_report_format(g.format);

  std::vector<f4d::TrainCurve> curves;
  int rc = 0;
  if (a.compare) {
    if (a.seeds == 0) throw UsageError("--seeds 0 compares nothing");
    cfg["mode"] = "compare";
    cfg["seeds"] = a.seeds;
    std::vector<f4d::TrainCurve> full, fact;
    for (std::size_t s = 0; s < a.seeds; ++s)
      for (auto kind : {f4d::ConvKind::Full4D, f4d::ConvKind::Factorized}) {
        auto plan = setup.plan;
        plan.block.conv = kind;
        auto opt = setup.train;
        opt.seed = g.seed + s;
        f4d::Backbone<T> model(plan, opt.seed);
        const std::string name = kind == f4d::ConvKind::Full4D ? "full4d" : "factorized";
        auto c = f4d::train_toy(model, train_set, test_set, opt, name);
        std::cout << name << " seed " << opt.seed << ": final train loss " << c.epochs.back().train_loss
                  << ", params " << model.store().element_count() << "\n";
        (kind == f4d::ConvKind::Full4D ? full : fact).push_back(c);
        curves.push_back(std::move(c));
      }
    const double mf = f4d::median_final_loss(fact), mu = f4d::median_final_loss(full);
    const double ratio = mf / mu;
    cfg["comparison"] = {{"median_final_train_loss_factorized", mf},
                         {"median_final_train_loss_full4d", mu},
                         {"ratio", ratio},
                         {"threshold", 1.05},
                         {"holds", ratio <= 1.05}};
    std::cout << "median final train loss: factorized " << mf << ", full4d " << mu << ", ratio " << ratio << "\n";
    if (ratio > 1.05) std::cout << "warning: factorized/full4d median loss ratio exceeds 1.05 (soft check)\n";
  } else {
    cfg["mode"] = a.overfit_smoke ? "overfit-smoke" : "train";
    cfg["conv"] = a.conv;
    auto opt = setup.train;
    opt.seed = g.seed;
    f4d::Backbone<T> model(setup.plan, g.seed);
    auto c = f4d::train_toy(model, train_set, test_set, opt, a.conv);
    const auto& last = c.epochs.back();
    std::cout << "epochs run: " << last.epoch << ", train loss " << last.train_loss << ", train error "
              << last.train_error << ", test error " << last.test_error << "\n";
    if (a.overfit_smoke) {
      const bool reached = last.train_error == 0.0;
      cfg["overfit_reached"] = reached;
      std::cout << (reached ? "overfit smoke: 100% train accuracy at epoch " + std::to_string(last.epoch)
                            : std::string("overfit smoke: FAILED to reach 100% train accuracy"))
                << "\n";
      if (!reached) rc = 1;
    }
    std::string ckpt = a.checkpoint;
    if (ckpt.empty() && !g.out.empty()) ckpt = g.out + ".ckpt";
    if (!ckpt.empty()) {
      f4d::save_checkpoint(ckpt, model.store(), dtype == "f64" ? f4d::DType::F64 : f4d::DType::F32);
      cfg["checkpoint"] = ckpt;
    }
    curves.push_back(std::move(c));
  }
  const auto text = f4d::render_curves(curves, fmt, cfg);
  if (g.out.empty())
    std::cout << text;
  else
    f4d::write_text_file(g.out, text);
  return rc;
}

int cmd_train(const Globals& g, const TrainArgs& a) {
  const auto dtype = resolve_dtype(g, "f32");
  return dtype == "f64" ? run_train<double>(g, a, dtype) : run_train<float>(g, a, dtype);
}

// ---------------------------------------------------------------------------
// sample

struct SampleArgs {
  std::string video;
  bool synthetic = false;
  std::size_t synthetic_frames = 400;
  std::size_t synthetic_size = 8;
  std::size_t synthetic_class = 0;
  std::optional<std::size_t> units;
  std::size_t snippet = 32;
  std::size_t clip_frames = 8;
  std::size_t stride = 4;
  std::string mode = "test";
  bool inference = false;
  std::size_t crops = 3;
};

template <typename T>
int run_sample(const Globals& g, const SampleArgs& a, const std::string& dtype) {
  if (g.out.empty()) throw UsageError("sample needs --out DIR");
  if (a.synthetic == !a.video.empty()) throw UsageError("give exactly one of --video PATH or --synthetic");
  if (a.mode != "train" && a.mode != "test") throw UsageError("--mode must be train or test");
  f4d::RawVideo<T> v;
  if (a.synthetic) {
    f4d::SyntheticConfig sc;
    sc.classes = std::max<std::size_t>(2, a.synthetic_class + 1 + (a.synthetic_class % 2 == 0));
    sc.per_class = 1;
    sc.frames = a.synthetic_frames;
    sc.height = sc.width = a.synthetic_size;
    sc.seed = g.seed;
    v = f4d::generate_synthetic_dataset<T>(sc).at(a.synthetic_class);
  } else {
    try {
      v.frames = f4d::load_tensor<T>(a.video);
      v.id = fs::path(a.video).stem().string();
      v.validate();
    } catch (const std::exception& e) {
      throw UsageError("bad input video '" + a.video + "': " + e.what());
    }
  }
  f4d::SamplerConfig sc{a.units.value_or(a.inference ? 10 : 4), a.snippet, a.clip_frames, a.stride,
                        a.mode == "train" ? f4d::SampleMode::Train : f4d::SampleMode::Test, g.seed};
  sc.validate();
  fs::create_directories(g.out);
  const auto ftype = dtype == "f64" ? f4d::DType::F64 : f4d::DType::F32;

  auto cfg = base_config(g, "sample", dtype);
  cfg["video"] = a.synthetic ? ojson("synthetic") : ojson(a.video);
  cfg["units"] = sc.units;
  cfg["snippet"] = sc.snippet;
  cfg["clip_frames"] = sc.frames;
  cfg["stride"] = sc.stride;
  cfg["mode"] = a.mode;
  cfg["inference"] = a.inference;
  ojson m{{"version", f4d::kVersion},
          {"config", cfg},
          {"video", {{"id", v.id}, {"frames", v.frame_count()}, {"shape", v.frames.shape().str()}, {"label", v.label}}}};
  if (a.inference) {
    f4d::InferenceConfig ic;
    ic.units = sc.units;
    ic.crops = a.crops;
    ic.sampler = sc;
    const auto views = f4d::inference_views(v, ic);
    m["views"] = ojson::array();
    for (const auto& view : views) {
      const std::string file = "view_" + std::to_string(view.unit) + "_" + std::to_string(view.crop) + ".f4dt";
      f4d::save_tensor((fs::path(g.out) / file).string(), view.clip, ftype);
      m["views"].push_back({{"unit", view.unit},
                            {"crop", view.crop},
                            {"origin_y", view.origin_y},
                            {"origin_x", view.origin_x},
                            {"frames", view.frames},
                            {"file", file}});
    }
    std::cout << "wrote " << views.size() << " views to " << g.out << "\n";
  } else {
    f4d::SegmentSampler sampler(sc);
    const auto units = sampler.sample(v);
    const auto sections = f4d::split_sections(v.frame_count(), sc.units);
    m["units"] = ojson::array();
    for (const auto& u : units) {
      const std::string file = "unit_" + std::to_string(u.section) + ".f4dt";
      f4d::save_tensor((fs::path(g.out) / file).string(), u.clip, ftype);
      m["units"].push_back({{"section", u.section},
                            {"section_range", {sections[u.section].begin, sections[u.section].end}},
                            {"snippet_start", u.snippet_start},
                            {"frames", u.frames},
                            {"file", file}});
    }
    std::cout << "wrote " << units.size() << " action units to " << g.out << "\n";
  }
  f4d::write_text_file((fs::path(g.out) / "manifest.json").string(), m.dump(2) + "\n");
  return 0;
}

int cmd_sample(const Globals& g, const SampleArgs& a) {
  const auto dtype = resolve_dtype(g, "f32");
  return dtype == "f64" ? run_sample<double>(g, a, dtype) : run_sample<float>(g, a, dtype);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"F4D building blocks: verification, counting, toy training and sampling"};
  app.set_version_flag("--version", f4d::kVersion);
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random draw")->capture_default_str();
  app.add_option("--dtype", g.dtype, "f32 or f64 (command default if omitted)")
      ->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--out", g.out, "Output file (directory for sample)");
  app.add_option("--format", g.format, "Report format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();

  EquivArgs ea;
  auto* equiv = app.add_subcommand("equiv", "4D conv vs stacked 3D, and separable kernel vs (3+1)D pair");
  equiv->add_option("--trials", ea.opt.trials, "Random 4D conv instances")->capture_default_str();
  equiv->add_option("--separable-trials", ea.opt.separable_trials)->capture_default_str();
  equiv->add_option("--max-channels", ea.opt.max_channels)->capture_default_str()->check(CLI::PositiveNumber);
  equiv->add_option("--max-units", ea.opt.max_units)->capture_default_str()->check(CLI::PositiveNumber);
  equiv->add_option("--max-time", ea.opt.max_time)->capture_default_str()->check(CLI::PositiveNumber);
  equiv->add_option("--max-space", ea.opt.max_space)->capture_default_str()->check(CLI::PositiveNumber);
  equiv->add_option("--max-kernel", ea.opt.max_kernel)->capture_default_str()->check(CLI::PositiveNumber);
  equiv->add_option("--debug-corrupt-trial", ea.corrupt, "Corrupt one kernel slab in this trial (negative control)")
      ->group("Debug");

  GradArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference certification of reverse-mode gradients");
  grad->add_option("--op", ga.ops, "Probe name (repeatable)");
  grad->add_flag("--all", ga.all, "Every probe, with a registry coverage check");
  grad->add_flag("--list", ga.list, "List probe names");
  grad->add_option("--seeds", ga.seeds)->capture_default_str();

  ComplexityArgs ca;
  auto* cx = app.add_subcommand("complexity", "Full-4D vs factorized parameter/FLOP comparison");
  cx->add_option("--plan", ca.plan, "mini or resnet50")->capture_default_str();
  cx->add_option("--insertion", ca.insertion, "Comma-separated stages that get a block")->capture_default_str();
  cx->add_option("--units", ca.units)->capture_default_str()->check(CLI::PositiveNumber);
  cx->add_option("--frames", ca.frames)->capture_default_str()->check(CLI::PositiveNumber);
  cx->add_option("--size", ca.size, "Frame side (plan default if 0)")->capture_default_str();
  cx->add_option("--batch", ca.batch)->capture_default_str()->check(CLI::PositiveNumber);
  cx->add_option("--bn-flops", ca.bn_flops, "FLOPs per batch-norm element")->capture_default_str();
  cx->add_option("--sigmoid-flops", ca.sigmoid_flops, "FLOPs per sigmoid element")->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train-toy", "Train the mini backbone on synthetic motion videos");
  tr->add_option("--epochs", ta.epochs, "Default 200 for --overfit-smoke, 6 for --compare, 30 otherwise");
  tr->add_option("--lr", ta.lr)->capture_default_str();
  tr->add_option("--momentum", ta.momentum)->capture_default_str();
  tr->add_option("--batch", ta.batch)->capture_default_str()->check(CLI::PositiveNumber);
  tr->add_option("--classes", ta.classes)->capture_default_str()->check(CLI::Range(2, 8));
  tr->add_option("--per-class", ta.per_class)->capture_default_str()->check(CLI::PositiveNumber);
  tr->add_option("--conv", ta.conv, "factorized or full4d")->capture_default_str();
  tr->add_option("--insertion", ta.insertion)->capture_default_str();
  tr->add_option("--dropout", ta.dropout)->capture_default_str()->check(CLI::Range(0.0, 0.99));
  tr->add_flag("--flip", ta.flip, "Random horizontal flip");
  tr->add_flag("--corner-crop", ta.corner_crop, "Random corner crop, resized back");
  tr->add_flag("--overfit-smoke", ta.overfit_smoke, "Exit 0 iff 100% train accuracy is reached");
  tr->add_flag("--compare", ta.compare, "Full-4D vs factorized over --seeds seeds");
  tr->add_option("--seeds", ta.seeds)->capture_default_str();
  tr->add_option("--checkpoint", ta.checkpoint, "Checkpoint directory (default <out>.ckpt)");

  SampleArgs sa;
  auto* sm = app.add_subcommand("sample", "Dump sampled action units or inference views");
  sm->add_option("--video", sa.video, "Frames file (T,C,H,W) in tensor format");
  sm->add_flag("--synthetic", sa.synthetic, "Use one synthetic video");
  sm->add_option("--synthetic-frames", sa.synthetic_frames)->capture_default_str()->check(CLI::PositiveNumber);
  sm->add_option("--synthetic-size", sa.synthetic_size)->capture_default_str()->check(CLI::PositiveNumber);
  sm->add_option("--synthetic-class", sa.synthetic_class)->capture_default_str()->check(CLI::Range(0, 7));
  sm->add_option("--units", sa.units, "Sections (default 4, or 10 with --inference)");
  sm->add_option("--snippet", sa.snippet)->capture_default_str();
  sm->add_option("--clip-frames", sa.clip_frames)->capture_default_str();
  sm->add_option("--stride", sa.stride)->capture_default_str();
  sm->add_option("--mode", sa.mode, "train or test")->capture_default_str();
  sm->add_flag("--inference", sa.inference, "Multi-crop inference views instead of action units");
  sm->add_option("--crops", sa.crops)->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*equiv) return cmd_equiv(g, ea);
    if (*grad) return cmd_gradcheck(g, ga);
    if (*cx) return cmd_complexity(g, ca);
    if (*tr) return cmd_train(g, ta);
    if (*sm) return cmd_sample(g, sa);
  } catch (const f4d::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const CheckFailure& e) {
    std::cerr << "check failed: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
