// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fail.
//   acceptance [--work DIR]

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "acacr/acacr.hpp"
#include "cli.hpp"

using namespace acacr;
namespace fs = std::filesystem;
using json = nlohmann::json;
using V = Var<double>;
using Args = std::span<const V>;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!pass) ++failures;
}

void info(const std::string& name, const std::string& detail) { std::cout << "INFO " << name << ": " << detail << std::endl; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor<double> rand_t(const Shape& s, std::uint64_t seed, double lo = -1, double hi = 1) {
  RngStream rng(seed);
  return uniform_tensor<double>(s, rng, lo, hi);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

int cli_run(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "acacr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream os, log;
  const int rc = cli::run(static_cast<int>(argv.size()), argv.data(), os, log);
  if (out) *out = os.str();
  if (rc != 0) std::cerr << "acacr " << args[1] << " exited " << rc << ": " << log.str();
  return rc;
}

V weighted(Tape<double>& t, V y) {
  Tensor<double> w(y.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.5 + 0.37 * std::sin(1.3 * static_cast<double>(i));
  return sum(mul(y, t.constant(w)));
}

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  std::function<V(Tape<double>&, Args)> f;
};

std::vector<OpCase> op_cases() {
  return {
      {"add", {{3, 4}, {3, 4}}, [](auto& t, Args v) { return weighted(t, add(v[0], v[1])); }},
      {"sub", {{3, 4}, {3, 4}}, [](auto& t, Args v) { return weighted(t, sub(v[0], v[1])); }},
      {"mul", {{3, 4}, {3, 4}}, [](auto& t, Args v) { return weighted(t, mul(v[0], v[1])); }},
      {"scale", {{5}}, [](auto& t, Args v) { return weighted(t, scale(v[0], -1.7)); }},
      {"add_scalar", {{5}}, [](auto& t, Args v) { return weighted(t, add_scalar(v[0], 0.3)); }},
      {"relu", {{4, 4}}, [](auto& t, Args v) { return weighted(t, relu(v[0])); }},
      {"matmul", {{3, 4}, {4, 2}}, [](auto& t, Args v) { return weighted(t, matmul(v[0], v[1])); }},
      {"matmul_nt", {{3, 4}, {5, 4}}, [](auto& t, Args v) { return weighted(t, matmul_nt(v[0], v[1])); }},
      {"transpose", {{3, 4}}, [](auto& t, Args v) { return weighted(t, transpose(v[0])); }},
      {"conv2d", {{5, 4, 2}, {3, 3, 2, 3}}, [](auto& t, Args v) { return weighted(t, conv2d(v[0], v[1])); }},
      {"conv2d_s2", {{5, 6, 2}, {3, 3, 2, 2}}, [](auto& t, Args v) { return weighted(t, conv2d(v[0], v[1], 2)); }},
      {"conv2d_1x1", {{4, 4, 3}, {1, 1, 3, 2}}, [](auto& t, Args v) { return weighted(t, conv2d(v[0], v[1])); }},
      {"softmax_rows", {{3, 6}}, [](auto& t, Args v) { return weighted(t, softmax_rows(v[0])); }},
      {"reduce_mean", {{3, 5}}, [](auto& t, Args v) { return weighted(t, reduce_mean(v[0], 1)); }},
      {"reduce_mean_axis0", {{3, 5}}, [](auto& t, Args v) { return weighted(t, reduce_mean(v[0], 0)); }},
      {"expand", {{3, 1}}, [](auto& t, Args v) { return weighted(t, expand(v[0], 1, 4)); }},
      {"sum", {{3, 2}}, [](auto&, Args v) { return sum(v[0]); }},
      {"mean", {{3, 2}}, [](auto&, Args v) { return mean(v[0]); }},
      {"bilinear_upsample", {{3, 4, 2}}, [](auto& t, Args v) { return weighted(t, bilinear_upsample(v[0], 2)); }},
      {"patchify", {{4, 6, 2}}, [](auto& t, Args v) { return weighted(t, patchify(v[0], 2)); }},
      {"unpatchify", {{6, 8}}, [](auto& t, Args v) { return weighted(t, unpatchify(v[0], {4, 6, 2}, 2)); }},
      {"reshape", {{2, 6}}, [](auto& t, Args v) { return weighted(t, reshape(v[0], {3, 4})); }},
      {"l1_loss", {{4, 3}, {4, 3}}, [](auto&, Args v) { return l1_loss(v[0], v[1]); }},
      {"vanilla_attention", {{3, 4, 4}, {1, 1, 4, 4}, {1, 1, 4, 4}, {1, 1, 4, 4}, {3, 3, 4, 4}},
       [](auto& t, Args v) {
         AttentionWeights<V> w;
         w.query = v[1];
         w.key = v[2];
         w.value = v[3];
         w.output = v[4];
         return weighted(t, vanilla_attention(v[0], w).output);
       }},
  };
}

NetworkConfig grad_net() {
  NetworkConfig n;
  n.channels = 8;
  n.patch_size = 2;
  return n;
}

// Gradient of a weighted output sum with respect to the input and every
// parameter tensor; zero-initialised tensors are randomised so all paths are live.
double network_grad_error(std::uint64_t seed) {
  const auto cfg = grad_net();
  auto p = build_network<double>(cfg, RngStream(seed));
  RngStream rng(seed + 500);
  p.for_each([&](const std::string&, Tensor<double>& t) {
    bool zero = true;
    for (double v : t.values()) zero = zero && v == 0.0;
    if (zero) t = normal_tensor<double>(t.shape(), rng, 0.3);
  });
  std::vector<Tensor<double>> inputs{rand_t({8, 8, 3}, seed, 0, 1)};
  p.for_each([&](const std::string&, const Tensor<double>& t) { inputs.push_back(t); });
  auto f = [&](Tape<double>& t, Args v) {
    auto w = bind(t, p, false);
    std::size_t k = 1;
    w.for_each([&](const std::string&, V& x) { x = v[k++]; });
    return weighted(t, forward(v[0], w, cfg));
  };
  return grad_check(f, inputs, {.max_coords = 6, .seed = seed}).max_rel_error;
}

void check_gradients() {
  const auto t0 = Clock::now();
  double worst_op = 0;
  std::string worst_name = "-";
  for (const auto& c : op_cases()) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::vector<Tensor<double>> in;
      for (std::size_t k = 0; k < c.shapes.size(); ++k) in.push_back(rand_t(c.shapes[k], seed * 31 + k));
      const double e = grad_check(c.f, in).max_rel_error;
      if (e > worst_op) {
        worst_op = e;
        worst_name = c.name;
      }
    }
  }
  double worst_net = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) worst_net = std::max(worst_net, network_grad_error(seed));
  const double secs = seconds_since(t0);
  report("gradient_oracle", worst_op <= 1e-4 && worst_net <= 1e-4 && secs <= 120,
         std::to_string(op_cases().size()) + " ops max rel err " + fmt("%.3g", worst_op) + " (" + worst_name +
             "), full network 8x8x3 C=8 s=2 max rel err " + fmt("%.3g", worst_net) + " over 20 seeds, " +
             fmt("%.1f", secs) + " s");
}

AttentionParams<double> live_attention(const AttentionConfig& cfg, std::uint64_t seed) {
  RngStream rng(seed);
  auto p = init_attention<double>(cfg, rng);
  p.selection->weight.out = normal_tensor<double>(p.selection->weight.out.shape(), rng, 0.5);
  p.selection->bias.out = normal_tensor<double>(p.selection->bias.out.shape(), rng, 0.5);
  return p;
}

void check_normalization() {
  const AttentionConfig cfg{AttentionVariant::ac, 2, 8};
  std::size_t rows = 0, negatives = 0;
  double worst_sp = 0, worst_ad = 0;
  for (std::uint64_t seed = 0; rows < 1000; ++seed) {
    const auto p = live_attention(cfg, seed);
    Tape<double> t;
    const auto r = ac_attention_forward(t.constant(rand_t({8, 8, 8}, 9000 + seed, -2, 2)), bind(t, p, false), cfg);
    const auto& s_p = r.similarity->value();
    const auto s_ad = adjust_similarity(*r.similarity).value();
    for (std::size_t i = 0; i < s_p.dim(0); ++i, ++rows) {
      double a = 0, b = 0;
      for (std::size_t j = 0; j < s_p.dim(1); ++j) {
        a += s_p.at(i, j);
        b += s_ad.at(i, j);
      }
      worst_sp = std::max(worst_sp, std::fabs(a - 1));
      worst_ad = std::max(worst_ad, std::fabs(b));
    }
    for (double v : r.attentive->value().values()) negatives += v < 0;
  }
  report("normalization_invariants", worst_sp <= 1e-6 && worst_ad <= 1e-6 && negatives == 0,
         std::to_string(rows) + " rows, max |sum S_p - 1| " + fmt("%.3g", worst_sp) + ", max |sum S_p_ad| " +
             fmt("%.3g", worst_ad) + ", negative S_att entries " + std::to_string(negatives));
}

void check_ca_reduction() {
  const AttentionConfig ac{AttentionVariant::ac, 2, 8}, ca{AttentionVariant::ca, 2, 8};
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto p = live_attention(ac, seed);
    Tape<double> t;
    const auto w = bind(t, p, false);
    const auto f = t.constant(rand_t({8, 6, 8}, 3000 + seed));
    const double n_p = 12.0;
    const auto a = ac_attention_forward(f, w, ac, SelectionOverride{1.0, 1.0 / n_p}).output.value();
    const auto c = ca_attention_forward(f, w, ca).output.value();
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - c[i]));
  }
  report("ca_reduction", worst <= 1e-6, "50 inputs, max elementwise difference " + fmt("%.3g", worst));
}

void check_identity() {
  std::size_t mismatches = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    NetworkConfig n;
    n.channels = 8 + 8 * (seed % 3);
    n.variant = static_cast<NetworkVariant>(seed % 3);
    const auto p = build_network<double>(n, RngStream(seed));
    const auto x = rand_t({8 + 4 * (seed % 2), 8, 3}, 100 + seed, 0, 1);
    const auto y = infer(x, p, n);
    for (std::size_t i = 0; i < x.size(); ++i) mismatches += y[i] != x[i];
  }
  report("identity_at_init", mismatches == 0,
         "20 inputs across base/ca/ac, " + std::to_string(mismatches) + " elements differ from the input");
}

double naive_ssim(const Tensor<double>& x, const Tensor<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double vx = 0, vy = 0, cxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    vx += (x[i] - mx) * (x[i] - mx) / n;
    vy += (y[i] - my) * (y[i] - my) / n;
    cxy += (x[i] - mx) * (y[i] - my) / n;
  }
  const double c1 = std::pow(0.01 * 255, 2), c2 = std::pow(0.03 * 255, 2);
  return (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

double naive_sam(const Tensor<double>& x, const Tensor<double>& y) {
  const std::size_t c = x.dim(2), n = x.size() / c;
  double total = 0;
  for (std::size_t p = 0; p < n; ++p) {
    double d = 0, a = 0, b = 0;
    for (std::size_t k = 0; k < c; ++k) {
      d += x[p * c + k] * y[p * c + k];
      a += x[p * c + k] * x[p * c + k];
      b += y[p * c + k] * y[p * c + k];
    }
    total += std::acos(std::clamp(d / std::sqrt(a * b), -1.0, 1.0));
  }
  return total / static_cast<double>(n) * 180.0 / std::numbers::pi;
}

void check_metrics() {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = rand_t({16, 16, 3}, seed, 1, 255), y = rand_t({16, 16, 3}, seed + 77, 1, 255);
    double ae = 0, se = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      ae += std::fabs(x[i] - y[i]);
      se += (x[i] - y[i]) * (x[i] - y[i]);
    }
    const double n = static_cast<double>(x.size());
    worst = std::max({worst, std::fabs(metrics::mae(x, y) - ae / n), std::fabs(metrics::mse(x, y) - se / n),
                      std::fabs(metrics::psnr(x, y) - (20 * std::log10(255.0) - 10 * std::log10(se / n))),
                      std::fabs(metrics::ssim(x, y) - naive_ssim(x, y)),
                      std::fabs(metrics::sam(x, y).degrees - naive_sam(x, y))});
  }
  const auto x = rand_t({16, 16, 3}, 5, 0, 255);
  const Tensor<double> e1({1, 1, 2}, std::vector<double>{1, 0}), e2({1, 1, 2}, std::vector<double>{0, 1});
  const double psnr0 = metrics::psnr_from_mse(255.0 * 255.0);
  const double ssim1 = metrics::ssim(x, x), ssim1w = metrics::ssim(x, x, metrics::SsimMode::windowed);
  const double sam90 = metrics::sam(e1, e2).degrees;
  const bool ok = worst <= 1e-6 && std::fabs(psnr0) <= 1e-12 && std::fabs(ssim1 - 1) <= 1e-12 &&
                  std::fabs(ssim1w - 1) <= 1e-12 && std::fabs(sam90 - 90) <= 1e-12;
  report("metric_oracles", ok,
         "max deviation from naive references " + fmt("%.3g", worst) + " on 20 pairs; PSNR(MSE=L^2) " +
             fmt("%.3g", psnr0) + " dB, SSIM(X,X) " + fmt("%.15g", ssim1) + "/" + fmt("%.15g", ssim1w) +
             ", SAM(orthogonal) " + fmt("%.6g", sam90) + " deg");
}

struct Pipeline {
  fs::path data, run, eval_out;
  std::string eval_stdout;
  double train_seconds = 0;
  bool ok = false;
};

// generate-data -> train -> eval, the desk overfit configuration.
Pipeline run_pipeline(const fs::path& root) {
  fs::remove_all(root);
  fs::create_directories(root);
  Pipeline p{root / "data", root / "run", root / "eval", {}, 0, false};
  if (cli_run({"generate-data", "--out", p.data.string(), "--seed", "7", "--count", "12", "--size", "32", "--bands", "3",
               "--coverage", "0.4"}) != 0) {
    return p;
  }
  std::ofstream(root / "desk.json") << json{{"network", {{"channels", 32}, {"variant", "ac"}}},
                                            {"train", {{"lr", 1e-3}, {"batch_size", 4}, {"steps", 500}, {"seed", 7}}},
                                            {"data", "data"},
                                            {"out", "run"},
                                            {"eval_split", "train"}}
                                           .dump(2);
  const auto t0 = Clock::now();
  if (cli_run({"train", "--config", (root / "desk.json").string()}) != 0) return p;
  p.train_seconds = seconds_since(t0);
  p.ok = cli_run({"eval", "--checkpoint", (p.run / "checkpoint.ckpt").string(), "--data", p.data.string(), "--split",
                  "train", "--out", p.eval_out.string()},
                 &p.eval_stdout) == 0;
  return p;
}

std::vector<double> read_losses(const fs::path& csv) {
  std::ifstream is(csv);
  std::string line;
  std::getline(is, line);
  std::vector<double> out;
  while (std::getline(is, line)) out.push_back(std::stod(line.substr(line.find(',') + 1)));
  return out;
}

void check_overfit(const Pipeline& a, const Pipeline& b) {
  if (!a.ok) {
    report("desk_overfit", false, "pipeline did not complete");
    return;
  }
  const auto losses = read_losses(a.run / "loss.csv");
  const double ratio = losses.back() / losses.front();
  const auto data = load_dataset<float>(a.data);
  const double base_psnr = evaluate_identity(data.train, data.train_ids).mean().psnr;
  const auto ck = load_checkpoint<float>(a.run / "checkpoint.ckpt");
  const double psnr = evaluate(ck.state.params, ck.network, data.train, data.train_ids).mean().psnr;
  const bool same = b.ok && slurp(a.run / "checkpoint.ckpt") == slurp(b.run / "checkpoint.ckpt") &&
                    slurp(a.run / "loss.csv") == slurp(b.run / "loss.csv");
  report("desk_overfit", ratio <= 0.25 && psnr - base_psnr >= 6.0 && a.train_seconds <= 600 && same,
         "L1 " + fmt("%.5g", losses.front()) + " -> " + fmt("%.5g", losses.back()) + " (ratio " + fmt("%.3f", ratio) +
             "), train PSNR " + fmt("%.2f", base_psnr) + " -> " + fmt("%.2f", psnr) + " dB (+" +
             fmt("%.2f", psnr - base_psnr) + "), " + fmt("%.1f", a.train_seconds) + " s, rerun " +
             (same ? "bitwise identical" : "DIFFERS"));

  std::size_t rises = 0, windows = 0;
  for (std::size_t i = 20; i + 20 <= losses.size(); i += 20, ++windows) {
    double prev = 0, cur = 0;
    for (std::size_t k = 0; k < 20; ++k) {
      prev += losses[i - 20 + k];
      cur += losses[i + k];
    }
    rises += cur > prev;
  }
  info("loss_trend", std::to_string(rises) + " of " + std::to_string(windows) +
                         " consecutive 20-step windows have a higher mean loss than the previous one");
}

void check_compare(const Pipeline& a, const fs::path& root) {
  fs::remove_all(root);
  fs::create_directories(root);
  std::ofstream(root / "compare.json") << json{{"network", {{"channels", 32}}},
                                               {"train", {{"lr", 1e-3}, {"batch_size", 4}, {"steps", 20}, {"seed", 7}}},
                                               {"eval_split", "test"}}
                                              .dump(2);
  const int rc = cli_run(
      {"compare", "--config", (root / "compare.json").string(), "--data", a.data.string(), "--out", (root / "out").string()});
  std::vector<std::string> variants;
  std::set<std::uint64_t> seeds;
  if (rc == 0) {
    std::istringstream csv(slurp(root / "out" / "compare.csv"));
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) variants.push_back(line.substr(0, line.find(',')));
    const json run = json::parse(slurp(root / "out" / "run.json"));
    for (const auto& arm : run.at("arms")) {
      seeds.insert(arm.at("train_seed").get<std::uint64_t>());
    }
  }
  const bool ok = rc == 0 && variants == std::vector<std::string>{"base", "ca", "ac"} && seeds.size() == 1;
  std::string rows;
  for (const auto& v : variants) rows += (rows.empty() ? "" : "/") + v;
  report("ablation_table", ok,
         "exit " + std::to_string(rc) + ", rows " + (rows.empty() ? "none" : rows) + ", " +
             std::to_string(seeds.size()) + " distinct train seed(s) across arms");
}

void check_pruning(const Pipeline& a) {
  if (!a.ok) {
    report("pruning_property", false, "pipeline did not complete");
    return;
  }
  const auto ck = load_checkpoint<float>(a.run / "checkpoint.ckpt");
  const auto data = load_dataset<float>(a.data);
  auto zeros = [](const std::vector<double>& row) { return std::count(row.begin(), row.end(), 0.0); };
  std::string detail;
  bool ok = true;
  std::size_t holds = 0;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const auto ex = cli::inspect_attention(data.train[i].cloudy, ck.state.params, ck.network, 0.3, 0.6, 0.05);
    bool all = true;
    for (std::size_t k = 0; k < ex.size(); ++k) {
      const auto za = zeros(ex[k].s_att_row), zp = zeros(ex[k].s_p_row);
      all = all && za >= 1 && zp == 0;
      if (i == 0) {
        detail += "racab" + std::to_string(k + 1) + " query " + std::to_string(ex[k].record.query_index) + ": S_att " +
                  std::to_string(za) + "/" + std::to_string(ex[k].s_att_row.size()) + " zeros, S_p " +
                  std::to_string(zp) + " zeros; ";
      }
    }
    if (i == 0) ok = all;
    holds += all;
  }
  report("pruning_property", ok, detail + "sample " + data.train_ids[0]);
  info("pruning_all_train", "property holds for " + std::to_string(holds) + " of " + std::to_string(data.train.size()) +
                                " train samples");
}

void check_determinism(const Pipeline& a, const Pipeline& b) {
  if (!a.ok || !b.ok) {
    report("determinism", false, "a pipeline run did not complete");
    return;
  }
  std::vector<std::string> differing;
  auto cmp = [&](const fs::path& rel_run, const std::string& label) {
    if (slurp(a.run / rel_run) != slurp(b.run / rel_run)) differing.push_back(label);
  };
  cmp("checkpoint.ckpt", "checkpoint");
  cmp("loss.csv", "loss.csv");
  cmp("eval.csv", "train eval.csv");
  if (slurp(a.eval_out / "eval.csv") != slurp(b.eval_out / "eval.csv") || a.eval_stdout != b.eval_stdout) {
    differing.push_back("eval command csv");
  }
  for (const char* split : {"train", "test"}) {
    for (const auto& e : fs::directory_iterator(a.data / split)) {
      if (e.path().extension() != ".tnsr") continue;
      if (slurp(e.path()) != slurp(b.data / split / e.path().filename())) differing.push_back(e.path().filename().string());
    }
  }
  std::string detail = "two generate-data -> train -> eval runs, single thread: ";
  if (differing.empty()) {
    detail += "checkpoints, datasets and CSVs bitwise identical";
  } else {
    for (const auto& d : differing) detail += d + " ";
    detail += "differ";
  }
  report("determinism", differing.empty(), detail);
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "acacr_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--work DIR]\n";
      return 2;
    }
  }
  try {
    const auto t0 = Clock::now();
    check_gradients();
    check_normalization();
    check_ca_reduction();
    check_identity();
    check_metrics();
    const Pipeline a = run_pipeline(work / "pipeline_a");
    const Pipeline b = run_pipeline(work / "pipeline_b");
    check_overfit(a, b);
    check_compare(a, work / "compare");
    check_pruning(a);
    check_determinism(a, b);
    info("total_runtime", fmt("%.1f", seconds_since(t0)) + " s");
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance: aborted with " << e.what() << std::endl;
    return 1;
  }
  return failures == 0 ? 0 : 1;
}
