#pragma once

// acacr command line: generate-data, train, eval, infer, compare,
// inspect-attention. Exit codes: 0 ok, 2 usage/config, 3 I/O, 4 divergence,
// 5 incompatibility.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "acacr/acacr.hpp"

namespace acacr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kUsage = 2, kIo = 3, kDivergence = 4, kIncompatible = 5 };

inline constexpr const char* kToolVersion = "1.0.0";

struct GlobalOptions {
  std::size_t threads = 1;
  bool f64 = false;
};

/// Merged run description. Relative paths in a config file resolve against
/// the file's directory.
struct RunConfig {
  NetworkConfig network;
  bool c_in_given = false;
  TrainConfig train;
  fs::path data;
  fs::path out;
  Split eval_split = Split::test;
  metrics::SsimMode ssim = metrics::SsimMode::global;
};

inline metrics::SsimMode parse_ssim_mode(const std::string& s) {
  if (s == "global") return metrics::SsimMode::global;
  if (s == "windowed") return metrics::SsimMode::windowed;
  throw ConfigError("unknown ssim mode '" + s + "' (expected global or windowed)");
}

inline json read_json_file(const fs::path& path, const char* what) {
  std::ifstream is(path);
  if (!is) throw ConfigError(std::string("cannot open ") + what + " " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline RunConfig run_config_from_json(const json& j, const fs::path& base) {
  require_known_keys(j, {"network", "attention", "train", "data", "out", "eval_split", "ssim"}, "run config");
  RunConfig rc;
  try {
    if (auto it = j.find("network"); it != j.end()) {
      rc.network = network_config_from_json(*it);
      rc.c_in_given = it->contains("c_in");
    }
    if (auto it = j.find("attention"); it != j.end()) {
      require_known_keys(*it, {"patch_size"}, "attention config");
      read_optional(*it, "patch_size", rc.network.patch_size);
      rc.network.validate();
    }
    if (auto it = j.find("train"); it != j.end()) rc.train = train_config_from_json(*it, rc.train);
    auto path = [&](const char* key, fs::path& out) {
      if (auto it = j.find(key); it != j.end()) {
        const fs::path p = it->get<std::string>();
        out = p.is_absolute() ? p : base / p;
      }
    };
    path("data", rc.data);
    path("out", rc.out);
    if (auto it = j.find("eval_split"); it != j.end()) rc.eval_split = parse_split(it->get<std::string>());
    if (auto it = j.find("ssim"); it != j.end()) rc.ssim = parse_ssim_mode(it->get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  return rc;
}

inline json to_json(const RunConfig& rc) {
  return {{"network", acacr::to_json(rc.network)},
          {"train", acacr::to_json(rc.train)},
          {"data", rc.data.string()},
          {"out", rc.out.string()},
          {"eval_split", to_string(rc.eval_split)},
          {"ssim", metrics::to_string(rc.ssim)}};
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

inline void write_run_json(const fs::path& path, const std::string& command, const GlobalOptions& g, json body) {
  body["tool"] = "acacr";
  body["tool_version"] = kToolVersion;
  body["command"] = command;
  body["precision"] = g.f64 ? "f64" : "f32";
  body["threads"] = g.threads;
  write_text(path, body.dump(2) + "\n");
}

inline std::string report_csv(const metrics::MetricReport& r) {
  std::ostringstream os;
  metrics::write_report_csv(os, r);
  return os.str();
}

/// Loads a TNSR or PNG image as [H, W, C] in [0, 1].
template <Real T>
Tensor<T> load_image(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("input " + path.string() + " does not exist");
  if (path.extension() == ".png") return load_png<T>(path);
  Tensor<T> x = load_tnsr<T>(path);
  if (x.rank() != 3) throw ShapeError("input " + path.string() + " must be [H, W, C], got " + shape_string(x.shape()));
  return x;
}

// ---------------------------------------------------------------------------
// generate-data

struct GenerateOptions {
  fs::path out;
  std::uint64_t seed = 7;
  std::size_t count = 12;
  std::size_t size = 32;
  std::size_t bands = 3;
  double coverage = 0.4;
  double softness = 0.5;
  double color = 0.95;
  bool previews = true;
};

inline int cmd_generate_data(const GenerateOptions& o, const GlobalOptions& g, std::ostream& out) {
  DatasetManifest m;
  m.seed = o.seed;
  m.h = m.w = o.size;
  m.c_in = o.bands;
  std::tie(m.train_count, m.test_count) = split_counts(o.count);
  m.cloud = {o.coverage, o.softness, o.color};
  m.validate();
  write_dataset(o.out, m, o.previews);
  write_run_json(o.out / "run.json", "generate-data", g, {{"manifest", acacr::to_json(m)}});
  out << "wrote " << m.train_count << " train + " << m.test_count << " test pairs to " << o.out.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// train / compare

// Fills c_in from the dataset and checks consistency.
inline void bind_dataset(RunConfig& rc, const DatasetManifest& m) {
  if (!rc.c_in_given) {
    rc.network.c_in = m.c_in;
  } else if (rc.network.c_in != m.c_in) {
    throw IncompatibleError("network c_in " + std::to_string(rc.network.c_in) + " but the dataset has " +
                            std::to_string(m.c_in) + " bands");
  }
}

struct TrainOutcome {
  metrics::MetricReport report;
  double first_loss = 0.0;
  double final_loss = 0.0;
};

template <Real T>
TrainOutcome run_training(const RunConfig& rc, const Dataset<T>& data, const fs::path& out, const GlobalOptions& g,
                          std::ostream& log) {
  ensure_dir(out);
  TrainConfig tc = rc.train;
  tc.threads = g.threads;
  TrainState<T> state = init_train_state<T>(rc.network, tc);

  TrainHooks<T> hooks;
  hooks.on_step = [&](const LossPoint& p) {
    if (p.step == 1 || p.step % 50 == 0 || p.step == tc.steps) {
      log << "[" << to_string(rc.network.variant) << "] step " << p.step << " loss " << metrics::format_number(p.loss)
          << '\n';
    }
  };
  hooks.on_eval = [&](const EvalPoint& e) {
    write_text(out / ("eval_step" + std::to_string(e.step) + ".csv"), report_csv(e.report));
  };
  hooks.on_checkpoint = [&](const TrainState<T>& s) {
    save_checkpoint(out / ("checkpoint_step" + std::to_string(s.step) + ".ckpt"), Checkpoint<T>{rc.network, rc.train, s});
  };

  const auto& eval_samples = data.samples(rc.eval_split).empty() ? data.train : data.samples(rc.eval_split);
  const auto& eval_ids = data.samples(rc.eval_split).empty() ? data.train_ids : data.ids(rc.eval_split);
  const TrainResult result = train(state, rc.network, tc, data.train, &eval_samples, &eval_ids, hooks);

  save_checkpoint(out / "checkpoint.ckpt", Checkpoint<T>{rc.network, rc.train, state});
  std::ostringstream losses;
  write_loss_csv(losses, result.losses);
  write_text(out / "loss.csv", losses.str());
  TrainOutcome outcome{evaluate(state.params, rc.network, eval_samples, eval_ids, rc.ssim, g.threads),
                       result.losses.front().loss, result.losses.back().loss};
  write_text(out / "eval.csv", report_csv(outcome.report));

  json body{{"config", to_json(rc)},
            {"dataset", acacr::to_json(data.manifest)},
            {"seeds", {{"train", tc.seed}, {"data", data.manifest.seed}}},
            {"parameters", parameter_count(state.params)},
            {"steps", state.step},
            {"first_loss", outcome.first_loss},
            {"final_loss", outcome.final_loss},
            {"eval_split", data.samples(rc.eval_split).empty() ? "train" : to_string(rc.eval_split)},
            {"artifacts", {"checkpoint.ckpt", "loss.csv", "eval.csv", "run.json"}}};
  write_run_json(out / "run.json", "train", g, body);
  return outcome;
}

struct TrainCliOptions {
  std::optional<fs::path> config;
  std::optional<fs::path> data;
  std::optional<fs::path> out;
  std::optional<std::string> variant;
  std::optional<std::size_t> steps;
  std::optional<double> lr;
  std::optional<std::size_t> batch;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> split;
};

inline RunConfig resolve_run_config(const TrainCliOptions& o) {
  RunConfig rc;
  if (o.config) {
    if (!fs::exists(*o.config)) throw ConfigError("config file " + o.config->string() + " does not exist");
    rc = run_config_from_json(read_json_file(*o.config, "config"), o.config->parent_path());
  }
  if (o.data) rc.data = *o.data;
  if (o.out) rc.out = *o.out;
  if (o.variant) rc.network.variant = parse_network_variant(*o.variant);
  if (o.steps) rc.train.steps = *o.steps;
  if (o.lr) rc.train.lr = *o.lr;
  if (o.batch) rc.train.batch_size = *o.batch;
  if (o.seed) rc.train.seed = *o.seed;
  if (o.split) rc.eval_split = parse_split(*o.split);
  if (rc.data.empty()) throw ConfigError("no dataset given (--data or \"data\" in the config)");
  if (rc.out.empty()) throw ConfigError("no output directory given (--out or \"out\" in the config)");
  rc.data = fs::absolute(rc.data).lexically_normal();
  rc.out = fs::absolute(rc.out).lexically_normal();
  rc.network.validate();
  rc.train.validate();
  return rc;
}

template <Real T>
int cmd_train(const TrainCliOptions& o, const GlobalOptions& g, std::ostream& out, std::ostream& log) {
  RunConfig rc = resolve_run_config(o);
  const Dataset<T> data = load_dataset<T>(rc.data);
  bind_dataset(rc, data.manifest);
  const TrainOutcome r = run_training(rc, data, rc.out, g, log);
  out << "trained " << to_string(rc.network.variant) << " for " << rc.train.steps << " steps, loss "
      << metrics::format_number(r.first_loss) << " -> " << metrics::format_number(r.final_loss) << '\n';
  return kOk;
}

template <Real T>
int cmd_compare(const TrainCliOptions& o, const GlobalOptions& g, std::ostream& out, std::ostream& log) {
  RunConfig rc = resolve_run_config(o);
  const Dataset<T> data = load_dataset<T>(rc.data);
  bind_dataset(rc, data.manifest);
  ensure_dir(rc.out);
  std::ostringstream table;
  table << "variant,mae,mse,psnr_db,ssim,sam_deg\n";
  json arms = json::array();
  for (NetworkVariant v : {NetworkVariant::base, NetworkVariant::ca, NetworkVariant::ac}) {
    RunConfig arm = rc;
    arm.network.variant = v;
    const fs::path dir = rc.out / to_string(v);
    const metrics::MetricRow m = run_training(arm, data, dir, g, log).report.mean();
    table << to_string(v) << ',' << metrics::format_number(m.mae) << ',' << metrics::format_number(m.mse) << ','
          << metrics::format_number(m.psnr) << ',' << metrics::format_number(m.ssim) << ','
          << metrics::format_number(m.sam) << '\n';
    arms.push_back({{"variant", to_string(v)}, {"dir", to_string(v)}, {"train_seed", arm.train.seed}});
  }
  write_text(rc.out / "compare.csv", table.str());
  write_run_json(rc.out / "run.json", "compare", g,
                 {{"config", to_json(rc)},
                  {"dataset", acacr::to_json(data.manifest)},
                  {"seeds", {{"train", rc.train.seed}, {"data", data.manifest.seed}}},
                  {"arms", arms}});
  out << table.str();
  return kOk;
}

// ---------------------------------------------------------------------------
// eval / infer / inspect-attention

struct EvalOptions {
  fs::path checkpoint;
  fs::path data;
  std::string split = "test";
  std::optional<fs::path> out;
  std::string ssim = "global";
};

template <Real T>
int cmd_eval(const EvalOptions& o, const GlobalOptions& g, std::ostream& out) {
  const Checkpoint<T> ck = load_checkpoint<T>(o.checkpoint);
  const Dataset<T> data = load_dataset<T>(o.data);
  if (ck.network.c_in != data.manifest.c_in) {
    throw IncompatibleError("checkpoint expects " + std::to_string(ck.network.c_in) + " bands, dataset has " +
                            std::to_string(data.manifest.c_in));
  }
  const Split split = parse_split(o.split);
  const auto mode = parse_ssim_mode(o.ssim);
  check_input_extents({data.manifest.h, data.manifest.w, data.manifest.c_in}, ck.network);
  const std::string csv =
      report_csv(evaluate(ck.state.params, ck.network, data.samples(split), data.ids(split), mode, g.threads));
  out << csv;
  if (o.out) {
    ensure_dir(*o.out);
    write_text(*o.out / "eval.csv", csv);
    write_run_json(*o.out / "run.json", "eval", g,
                   {{"checkpoint", fs::absolute(o.checkpoint).string()},
                    {"data", fs::absolute(o.data).string()},
                    {"split", o.split},
                    {"ssim", o.ssim},
                    {"network", acacr::to_json(ck.network)},
                    {"step", ck.state.step}});
  }
  return kOk;
}

struct InferOptions {
  fs::path checkpoint;
  fs::path input;
  fs::path output;
};

template <Real T>
int cmd_infer(const InferOptions& o, const GlobalOptions& g, std::ostream& out) {
  const Checkpoint<T> ck = load_checkpoint<T>(o.checkpoint);
  const Tensor<T> x = load_image<T>(o.input);
  check_input_extents(x.shape(), ck.network);
  const Tensor<T> y = infer(x, ck.state.params, ck.network);
  if (!o.output.parent_path().empty()) ensure_dir(o.output.parent_path());
  std::vector<std::string> written;
  if (o.output.extension() == ".png") {
    save_png_preview(o.output, y);
    written.push_back(o.output.filename().string());
  } else {
    save_tnsr(o.output, y);
    written.push_back(o.output.filename().string());
    if (y.dim(2) == 3) {
      fs::path preview = o.output;
      preview.replace_extension(".png");
      save_png_preview(preview, y);
      written.push_back(preview.filename().string());
    }
  }
  fs::path manifest = o.output;
  manifest += ".run.json";
  write_run_json(manifest, "infer", g,
                 {{"checkpoint", fs::absolute(o.checkpoint).string()},
                  {"input", fs::absolute(o.input).string()},
                  {"shape", x.shape()},
                  {"outputs", written}});
  out << "wrote " << o.output.string() << " " << shape_string(y.shape()) << '\n';
  return kOk;
}

struct InspectOptions {
  fs::path checkpoint;
  fs::path input;
  std::string query = "0.3,0.6";
  double top = 0.05;
  fs::path out;
};

inline std::pair<double, double> parse_query(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ConfigError("--query expects r,c");
  try {
    std::size_t used_r = 0, used_c = 0;
    const std::string rs = s.substr(0, comma), cs = s.substr(comma + 1);
    const double r = std::stod(rs, &used_r), c = std::stod(cs, &used_c);
    if (used_r != rs.size() || used_c != cs.size()) throw ConfigError("--query expects two numbers r,c");
    if (!(r >= 0 && r <= 1 && c >= 0 && c <= 1)) {
      throw ConfigError("--query coordinates must lie in [0, 1], got " + s);
    }
    return {r, c};
  } catch (const std::logic_error&) {
    throw ConfigError("--query expects two numbers r,c, got '" + s + "'");
  }
}

/// Captured attention of every RACAB for one input, scored at one query.
template <Real T>
std::vector<SimilarityExport<T>> inspect_attention(const Tensor<T>& x, const NetworkParams<T>& params,
                                                   const NetworkConfig& net, double r, double c, double top) {
  if (!net.has_attention()) throw ConfigError("the base variant has no attention blocks to inspect");
  check_input_extents(x.shape(), net);
  Tape<T> tape;
  std::vector<AttentionResult<T>> captured;
  forward(tape.constant(x), bind(tape, params, false), net, &captured);
  std::vector<SimilarityExport<T>> out;
  for (const auto& a : captured) {
    const std::size_t q = query_patch_index(r, c, a.grid_h, a.grid_w);
    out.push_back(make_similarity_export(similarity_record(a, q), top));
  }
  return out;
}

template <Real T>
int cmd_inspect_attention(const InspectOptions& o, const GlobalOptions& g, std::ostream& out) {
  const auto [r, c] = parse_query(o.query);
  if (!(o.top > 0.0 && o.top <= 1.0)) throw ConfigError("--top must lie in (0, 1]");
  const Checkpoint<T> ck = load_checkpoint<T>(o.checkpoint);
  const Tensor<T> x = load_image<T>(o.input);
  const auto exports = inspect_attention(x, ck.state.params, ck.network, r, c, o.top);
  ensure_dir(o.out);
  json blocks = json::array();
  for (std::size_t k = 0; k < exports.size(); ++k) {
    const std::string stem = "racab" + std::to_string(k + 1);
    write_similarity_export(o.out, stem, exports[k]);
    const auto& ex = exports[k];
    const auto zeros = std::count(ex.s_att_row.begin(), ex.s_att_row.end(), 0.0);
    blocks.push_back({{"stem", stem},
                      {"query_index", ex.record.query_index},
                      {"grid", {ex.record.grid_h, ex.record.grid_w}},
                      {"s_att_zero_count", zeros}});
    out << stem << ": query patch " << ex.record.query_index << " of " << ex.s_p_row.size();
    if (!ex.s_att_row.empty()) out << ", " << zeros << " pruned";
    out << '\n';
  }
  write_run_json(o.out / "run.json", "inspect-attention", g,
                 {{"checkpoint", fs::absolute(o.checkpoint).string()},
                  {"input", fs::absolute(o.input).string()},
                  {"query", {r, c}},
                  {"top", o.top},
                  {"blocks", blocks}});
  return kOk;
}

// ---------------------------------------------------------------------------

template <class F>
int guarded(F&& f, std::ostream& err) {
  try {
    return f();
  } catch (const IncompatibleError& e) {
    err << "error: " << e.what() << '\n';
    return kIncompatible;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kDivergence;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Cloud removal with AC-Attention (ACA-CRNet)", "acacr"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--threads", g.threads, "Worker threads for per-sample passes")->check(CLI::PositiveNumber);
  app.add_flag("--f64", g.f64, "Compute in double precision");
  app.set_version_flag("--version", kToolVersion);

  GenerateOptions gen;
  auto* c_gen = app.add_subcommand("generate-data", "Write a synthetic cloudy/clear dataset");
  c_gen->add_option("--out", gen.out, "Output directory")->required();
  c_gen->add_option("--seed", gen.seed, "Global dataset seed");
  c_gen->add_option("--count", gen.count, "Total number of pairs (2/3 train)")->check(CLI::PositiveNumber);
  c_gen->add_option("--size", gen.size, "Image height and width");
  c_gen->add_option("--bands", gen.bands, "Number of spectral bands");
  c_gen->add_option("--coverage", gen.coverage, "Cloud coverage in [0, 1]");
  c_gen->add_option("--softness", gen.softness, "Cloud edge softness in [0, 1]");
  c_gen->add_option("--color", gen.color, "Cloud colour in [0, 1]");
  bool no_previews = false;
  c_gen->add_flag("--no-previews", no_previews, "Skip PNG previews");

  TrainCliOptions tr;
  auto add_train_options = [&tr](CLI::App* c) {
    c->add_option("--config", tr.config, "Run config JSON");
    c->add_option("--data", tr.data, "Dataset directory");
    c->add_option("--out", tr.out, "Output directory");
    c->add_option("--steps", tr.steps, "Override train.steps");
    c->add_option("--lr", tr.lr, "Override train.lr");
    c->add_option("--batch", tr.batch, "Override train.batch_size");
    c->add_option("--seed", tr.seed, "Override train.seed");
    c->add_option("--split", tr.split, "Evaluation split (train|test)");
  };
  auto* c_train = app.add_subcommand("train", "Train one network variant");
  add_train_options(c_train);
  c_train->add_option("--variant", tr.variant, "base | ca | ac");
  auto* c_cmp = app.add_subcommand("compare", "Train and evaluate base, ca and ac under one seed");
  add_train_options(c_cmp);

  EvalOptions ev;
  auto* c_eval = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  c_eval->add_option("--checkpoint", ev.checkpoint)->required();
  c_eval->add_option("--data", ev.data)->required();
  c_eval->add_option("--split", ev.split, "train | test");
  c_eval->add_option("--out", ev.out, "Also write eval.csv and run.json here");
  c_eval->add_option("--ssim", ev.ssim, "global | windowed");

  InferOptions inf;
  auto* c_inf = app.add_subcommand("infer", "Restore one image");
  c_inf->add_option("--checkpoint", inf.checkpoint)->required();
  c_inf->add_option("--input", inf.input, "TNSR or PNG image")->required();
  c_inf->add_option("--output", inf.output, "Output .tnsr or .png")->required();

  InspectOptions ins;
  auto* c_ins = app.add_subcommand("inspect-attention", "Export similarity rows of one query patch");
  c_ins->add_option("--checkpoint", ins.checkpoint)->required();
  c_ins->add_option("--input", ins.input)->required();
  c_ins->add_option("--query", ins.query, "Relative coordinates r,c");
  c_ins->add_option("--top", ins.top, "Fraction of patches to list");
  c_ins->add_option("--out", ins.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kOk : kUsage;
  }
  gen.previews = !no_previews;

  return guarded(
      [&]() -> int {
        if (c_gen->parsed()) return cmd_generate_data(gen, g, out);
        if (g.f64) {
          if (c_train->parsed()) return cmd_train<double>(tr, g, out, err);
          if (c_cmp->parsed()) return cmd_compare<double>(tr, g, out, err);
          if (c_eval->parsed()) return cmd_eval<double>(ev, g, out);
          if (c_inf->parsed()) return cmd_infer<double>(inf, g, out);
          if (c_ins->parsed()) return cmd_inspect_attention<double>(ins, g, out);
        } else {
          if (c_train->parsed()) return cmd_train<float>(tr, g, out, err);
          if (c_cmp->parsed()) return cmd_compare<float>(tr, g, out, err);
          if (c_eval->parsed()) return cmd_eval<float>(ev, g, out);
          if (c_inf->parsed()) return cmd_infer<float>(inf, g, out);
          if (c_ins->parsed()) return cmd_inspect_attention<float>(ins, g, out);
        }
        return kUsage;
      },
      err);
}

}  // namespace acacr::cli
