// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
// Usage: acceptance [--allow-fail N]...
// Exit status is 0 when every criterion passed or failed only among the
// allowed numbers; the lines are printed the same either way.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <fmt/format.h>

#include "macow/bench.hpp"
#include "macow/training.hpp"
#include "macow/verify.hpp"

namespace fs = std::filesystem;
using namespace macow;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Folds a list of checks into one outcome naming the first failure.
Outcome all_of(const std::vector<CheckResult>& checks, const std::string& summary) {
  for (const auto& c : checks)
    if (!c.passed) return {false, c.name + ": " + c.detail};
  return {true, fmt::format("{} checks; {}", checks.size(), summary)};
}

std::string worst_detail(const std::vector<CheckResult>& checks, const std::string& prefix) {
  for (const auto& c : checks)
    if (c.name.rfind(prefix, 0) == 0) return c.detail;
  return "";
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Shared state of the training criteria (6 to 9).
struct ToyRuns {
  Dataset train = quantize(make_toy_images(2048, 8, 8, 3), 5);
  Dataset eval = quantize(make_toy_images(256, 8, 8, 4), 5);
  fs::path dir;

  RunConfig config(DequantMode mode) const {
    RunConfig cfg;
    cfg.model.height = cfg.model.width = 8;
    cfg.model.channels = 1;
    cfg.model.n_bits = 5;
    cfg.model.dequant = mode;
    cfg.train.steps = 2000;
    cfg.train.precision = Precision::kF32;
    return cfg;
  }

  // Filled by criterion 6.
  std::unique_ptr<Trainer<float>> var_run;
  std::string var_log;
  double var_post_init = 0;
  double var_final = 0;
  double var_seconds = 0;
};

Outcome criterion_invertibility() {
  const auto f64 = check_invertibility(Precision::kF64, 1);
  const auto f32 = check_invertibility(Precision::kF32, 1);
  std::vector<CheckResult> all = f64;
  all.insert(all.end(), f32.begin(), f32.end());
  std::string summary;
  for (const auto& c : all) summary += (summary.empty() ? "" : "; ") + c.name.substr(c.name.find('/') + 1) + " " +
                                       c.detail.substr(c.detail.find("= ") + 2, 9);
  return all_of(all, summary);
}

Outcome criterion_logdet() {
  const auto& registry = layer_registry();
  auto checks = check_registry_coverage(registry);
  const auto layers = check_layers(registry, 1);
  checks.insert(checks.end(), layers.begin(), layers.end());
  checks.push_back(check_model_logdet(1));
  return all_of(checks, fmt::format("{} registered layers and the 1-level model match the dense oracle",
                                    registry.size()));
}

Outcome criterion_gradient() {
  const CheckResult r = check_objective_gradient(1);
  return {r.passed, r.detail};
}

Outcome criterion_locality() {
  const auto checks = check_mask_locality(1);
  return all_of(checks, "top " + worst_detail(checks, "locality/top"));
}

Outcome criterion_linear_inversion() {
  const auto counts = check_inversion_counts(1);
  for (const auto& c : counts)
    if (!c.passed) return {false, c.name + ": " + c.detail};

  BenchOptions opt;  // sizes 16 and 32, batch 100
  const auto rows = bench_sample(opt);
  ModelConfig m16 = opt.model, m32 = opt.model;
  m16.height = m16.width = 16;
  m32.height = m32.width = 32;
  const bool counts_linear = rows[0].conv_applications == expected_conv_applications(m16) &&
                             rows[1].conv_applications == expected_conv_applications(m32) &&
                             rows[1].conv_applications == 2 * rows[0].conv_applications;
  const double ratio = rows[1].ms_per_datapoint / rows[0].ms_per_datapoint;
  const bool ratio_ok = ratio >= 1.5 && ratio <= 3.5;
  return {counts_linear && ratio_ok,
          fmt::format("slab/oracle counts and outputs agree for 4 orientations; sample conv applications {} -> {} "
                      "(linear: {}); t(32)/t(16) = {:.3f} ms / {:.3f} ms = {:.2f} (need [1.5, 3.5])",
                      rows[0].conv_applications, rows[1].conv_applications, counts_linear ? "yes" : "no",
                      rows[1].ms_per_datapoint, rows[0].ms_per_datapoint, ratio)};
}

Outcome criterion_training(ToyRuns& toy) {
  const auto t0 = Clock::now();
  toy.var_run = std::make_unique<Trainer<float>>(toy.config(DequantMode::kVariational));
  std::ostringstream log;
  log << kTrainLogHeader << '\n';
  // Step 0 runs at learning rate 0, so its only effect is the data-dependent init.
  log << format_log_row(toy.var_run->train_step(toy.train)) << '\n';
  toy.var_post_init = evaluate_bpd(*toy.var_run, toy.eval, 1, 1);
  toy.var_run->fit(toy.train, &log, std::nullopt);
  toy.var_final = evaluate_bpd(*toy.var_run, toy.eval, 1, 1);
  toy.var_seconds = seconds_since(t0);
  toy.var_log = log.str();

  // Independent rerun of the first 1000 steps from the same seed.
  Trainer<float> again(toy.config(DequantMode::kVariational));
  std::ostringstream again_log;
  again.fit(toy.train, &again_log, std::nullopt, 1000);
  const std::string& full = toy.var_log;
  std::size_t pos = 0;
  for (int line = 0; line < 1001 && pos != std::string::npos; ++line) pos = full.find('\n', pos) + 1;
  const bool deterministic = full.substr(0, pos) == again_log.str();

  const double drop = (toy.var_post_init - toy.var_final) / toy.var_post_init;
  const bool ok = drop >= 0.10 && deterministic && toy.var_seconds < 600;
  return {ok, fmt::format("eval bpd {:.4f} after init -> {:.4f} after 2000 steps ({:.1f}% drop, need >= 10%); "
                          "rerun of 1000 steps identical: {}; {:.1f} s (limit 600)",
                          toy.var_post_init, toy.var_final, 100 * drop, deterministic ? "yes" : "no",
                          toy.var_seconds)};
}

Outcome criterion_dequantization(ToyRuns& toy) {
  if (!toy.var_run) return {false, "variational run missing"};
  Trainer<float> unif(toy.config(DequantMode::kUniform));
  unif.fit(toy.train, nullptr, std::nullopt);
  const double unif_bpd = evaluate_bpd(unif, toy.eval, 1, 1);
  return {toy.var_final <= unif_bpd + 0.05,
          fmt::format("variational {:.4f} bpd vs uniform {:.4f} bpd after 2000 steps each (need var <= unif + 0.05)",
                      toy.var_final, unif_bpd)};
}

Outcome criterion_elbo(ToyRuns& toy) {
  if (!toy.var_run) return {false, "variational run missing"};
  Dataset batch = toy.eval;
  batch.levels.assign(toy.eval.levels.begin(), toy.eval.levels.begin() + 64 * toy.eval.per_item());
  const double k1 = evaluate_bpd(*toy.var_run, batch, 1, 11);
  const double k64 = evaluate_bpd(*toy.var_run, batch, 64, 11);
  return {k64 <= k1, fmt::format("64 images: K=64 bound {:.4f} bpd, K=1 bound {:.4f} bpd", k64, k1)};
}

Outcome criterion_persistence(ToyRuns& toy, const std::string& cli) {
  if (!toy.var_run) return {false, "variational run missing"};
  std::vector<std::string> problems;

  // Bit-exact save -> load -> save, with identical evaluation.
  const fs::path a = toy.dir / "final.ckpt";
  save_checkpoint(a, toy.var_run->checkpoint());
  auto reloaded = Trainer<float>::from_checkpoint(load_checkpoint(a));
  const fs::path b = toy.dir / "reloaded.ckpt";
  save_checkpoint(b, reloaded->checkpoint());
  const bool bytes_equal = read_bytes(a) == read_bytes(b);
  if (!bytes_equal) problems.push_back("save/load/save bytes differ");
  const double eval_before = evaluate_bpd(*toy.var_run, toy.eval, 1, 1);
  const double eval_after = evaluate_bpd(*reloaded, toy.eval, 1, 1);
  if (eval_before != eval_after) problems.push_back("reloaded eval differs");

  // Interrupted at step 1000, restored from disk, finished: must equal the uninterrupted run.
  const fs::path mid = toy.dir / "mid.ckpt";
  std::ostringstream log;
  {
    Trainer<float> first(toy.config(DequantMode::kVariational));
    first.fit(toy.train, &log, mid, 1000);
  }
  auto resumed = Trainer<float>::from_checkpoint(load_checkpoint(mid));
  resumed->fit(toy.train, &log, std::nullopt);
  const fs::path c = toy.dir / "resumed.ckpt";
  save_checkpoint(c, resumed->checkpoint());
  const bool resume_log_equal = log.str() == toy.var_log;
  const bool resume_state_equal = read_bytes(c) == read_bytes(a);
  if (!resume_log_equal) problems.push_back("resumed log differs");
  if (!resume_state_equal) problems.push_back("resumed final state differs");

  // The command-line sampler at temperature 0, twice.
  std::vector<std::vector<std::uint8_t>> images;
  for (int i = 0; i < 2; ++i) {
    const fs::path out = toy.dir / fmt::format("sample{}.pgm", i);
    const std::string cmd = fmt::format("\"{}\" sample --checkpoint \"{}\" --n 16 --temperature 0 --out \"{}\"", cli,
                                        a.string(), out.string());
    if (std::system(cmd.c_str()) != 0) problems.push_back("sample command failed");
    images.push_back(read_bytes(out));
  }
  const bool samples_equal = !images[0].empty() && images[0] == images[1];
  if (!samples_equal) problems.push_back("temperature-0 samples differ");

  if (!problems.empty()) {
    std::string joined;
    for (const auto& p : problems) joined += (joined.empty() ? "" : "; ") + p;
    return {false, joined};
  }
  return {true, fmt::format("checkpoint of {} bytes round-trips bit-exactly and re-evaluates to {:.6f} bpd; "
                            "1000+1000 resumed run matches 2000 uninterrupted steps in log and state; "
                            "two temperature-0 sample grids identical ({} bytes)",
                            read_bytes(a).size(), eval_after, images[0].size())};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> allowed;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--allow-fail" && i + 1 < argc) {
      allowed.insert(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance [--allow-fail N]...\n";
      return 1;
    }
  }
  set_warnings_enabled(false);

  ToyRuns toy;
  toy.dir = fs::temp_directory_path() / fmt::format("macow_acceptance_{}", ::getpid());
  fs::create_directories(toy.dir);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"invertibility", criterion_invertibility},
      {"log-det oracle", criterion_logdet},
      {"gradient check", criterion_gradient},
      {"mask locality", criterion_locality},
      {"linear-time inversion", criterion_linear_inversion},
      {"training trend", [&] { return criterion_training(toy); }},
      {"dequantization direction", [&] { return criterion_dequantization(toy); }},
      {"importance-weighted bound", [&] { return criterion_elbo(toy); }},
      {"persistence", [&] { return criterion_persistence(toy, MACOW_CLI_PATH); }},
  };

  int failed = 0;
  int blocking = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    const auto t0 = Clock::now();
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", out.passed ? "PASS" : "FAIL", number,
                criteria[i].first.c_str(), out.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    if (!out.passed) {
      ++failed;
      if (!allowed.count(number)) ++blocking;
    }
  }
  fs::remove_all(toy.dir);
  std::printf("%d/%zu criteria passed", static_cast<int>(criteria.size()) - failed, criteria.size());
  if (failed > blocking) std::printf(" (%d failure(s) in the allowed list)", failed - blocking);
  std::printf("\n");
  return blocking == 0 ? 0 : 1;
}
