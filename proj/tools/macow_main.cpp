// Command-line front end; talks to the library only through macow.h.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "macow/macow.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitVerify = 3;

struct Failure {
  int exit_code;
};

int exit_code_for(macow_status s) {
  switch (s) {
    case MACOW_ERR_IO:
    case MACOW_ERR_CHECKSUM:
    case MACOW_ERR_VERSION: return kExitIo;
    default: return kExitUsage;
  }
}

void check(macow_status s) {
  if (s == MACOW_OK) return;
  std::cerr << "macow: " << macow_last_error() << "\n";
  throw Failure{exit_code_for(s)};
}

[[noreturn]] void usage_error(const std::string& message) {
  std::cerr << "macow: " << message << "\n";
  throw Failure{kExitUsage};
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using ConfigPtr = std::unique_ptr<macow_config, Deleter<macow_config, macow_config_free>>;
using DatasetPtr = std::unique_ptr<macow_dataset, Deleter<macow_dataset, macow_dataset_free>>;
using RunPtr = std::unique_ptr<macow_run, Deleter<macow_run, macow_run_free>>;
using ReportPtr = std::unique_ptr<macow_report, Deleter<macow_report, macow_report_free>>;

struct Options {
  std::string config;
  std::string data;
  std::string checkpoint;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> temperature;
  std::size_t n = 16;
  std::optional<std::size_t> k;
  std::string mode;
  std::string precision;
  bool resume = false;
  std::size_t batch = 0;
  std::size_t repeats = 0;
  std::uint64_t until = 0;
};

RunPtr load_run(const std::string& path) {
  macow_run* run = nullptr;
  check(macow_run_load(path.c_str(), &run));
  return RunPtr(run);
}

macow_run_info info_of(macow_run* run) {
  macow_run_info info{};
  check(macow_run_info_get(run, &info));
  return info;
}

DatasetPtr open_dataset(const std::string& path, unsigned n_bits) {
  macow_dataset* data = nullptr;
  check(macow_dataset_open(path.c_str(), n_bits, &data));
  return DatasetPtr(data);
}

// --mode and --precision must agree with a run restored from a checkpoint.
void check_matches_run(const Options& o, const macow_run_info& info) {
  if (!o.mode.empty() && (o.mode == "var") != (info.variational != 0))
    usage_error("--mode " + o.mode + " does not match the checkpoint");
  if (!o.precision.empty() && (o.precision == "f64") != (info.precision == MACOW_F64))
    usage_error("--precision " + o.precision + " does not match the checkpoint");
}

int run_train(const Options& o) {
  RunPtr run;
  DatasetPtr data;
  if (o.resume) {
    if (o.checkpoint.empty()) usage_error("--resume needs --checkpoint");
    if (!o.config.empty() || o.seed) usage_error("--resume takes the configuration from the checkpoint");
    run = load_run(o.checkpoint);
    const auto info = info_of(run.get());
    check_matches_run(o, info);
    data = open_dataset(o.data, info.n_bits);
  } else {
    macow_config* raw = nullptr;
    check(o.config.empty() ? macow_config_default(&raw) : macow_config_load(o.config.c_str(), &raw));
    ConfigPtr cfg(raw);
    if (o.seed) check(macow_config_set(cfg.get(), "seed", std::to_string(*o.seed).c_str()));
    if (!o.mode.empty()) check(macow_config_set(cfg.get(), "dequant", o.mode.c_str()));
    if (!o.precision.empty()) check(macow_config_set(cfg.get(), "precision", o.precision.c_str()));
    char bits[32];
    check(macow_config_get(cfg.get(), "n_bits", bits, sizeof bits));
    data = open_dataset(o.data, static_cast<unsigned>(std::stoul(bits)));
    if (o.config.empty()) {
      // Without a config file the image shape follows the data.
      size_t shape[4];
      check(macow_dataset_shape(data.get(), shape));
      check(macow_config_set(cfg.get(), "height", std::to_string(shape[1]).c_str()));
      check(macow_config_set(cfg.get(), "width", std::to_string(shape[2]).c_str()));
      check(macow_config_set(cfg.get(), "channels", std::to_string(shape[3]).c_str()));
    }
    macow_run* r = nullptr;
    check(macow_run_create(cfg.get(), &r));
    run.reset(r);
  }
  const std::string log = o.out.empty() ? "-" : o.out;
  check(macow_run_train(run.get(), data.get(), log.c_str(), o.checkpoint.empty() ? nullptr : o.checkpoint.c_str(),
                        o.until));
  const auto info = info_of(run.get());
  std::cerr << "macow: trained to step " << info.step << " (" << info.skipped_steps << " skipped)";
  if (!o.checkpoint.empty()) std::cerr << ", checkpoint " << o.checkpoint;
  std::cerr << "\n";
  return kExitOk;
}

int run_eval(const Options& o) {
  RunPtr run = load_run(o.checkpoint);
  const auto info = info_of(run.get());
  check_matches_run(o, info);
  DatasetPtr data = open_dataset(o.data, info.n_bits);
  const std::size_t k = o.k.value_or(info.eval_samples);
  double bpd = 0;
  check(macow_run_eval(run.get(), data.get(), k, o.seed.value_or(1), &bpd));
  std::printf("bpd,k\n%.10g,%zu\n", bpd, k);
  return kExitOk;
}

int run_sample(const Options& o) {
  RunPtr run = load_run(o.checkpoint);
  const auto info = info_of(run.get());
  check_matches_run(o, info);
  check(macow_run_sample(run.get(), o.n, o.temperature.value_or(info.temperature), o.seed.value_or(1),
                         o.out.c_str()));
  return kExitOk;
}

int run_bench(const Options& o) {
  macow_bench_options opt;
  macow_bench_defaults(&opt);
  if (o.batch) opt.batch = o.batch;
  if (o.repeats) opt.repeats = o.repeats;
  if (o.seed) opt.seed = *o.seed;
  if (!o.precision.empty()) opt.precision = o.precision == "f64" ? MACOW_F64 : MACOW_F32;
  char* csv = nullptr;
  check(macow_bench_csv(&opt, &csv));
  std::unique_ptr<char, Deleter<char, macow_string_free>> hold(csv);
  if (o.out.empty()) {
    std::cout << csv;
    return kExitOk;
  }
  std::ofstream file(o.out, std::ios::binary);
  file << csv;
  if (!file) {
    std::cerr << "macow: cannot write '" << o.out << "'\n";
    return kExitIo;
  }
  return kExitOk;
}

int run_verify(const Options& o) {
  macow_report* raw = nullptr;
  check(macow_verify(o.precision == "f32" ? MACOW_F32 : MACOW_F64, o.seed.value_or(1), &raw));
  ReportPtr report(raw);
  std::size_t failed = 0;
  const std::size_t n = macow_report_size(report.get());
  for (std::size_t i = 0; i < n; ++i) {
    const bool ok = macow_report_passed(report.get(), i) != 0;
    failed += ok ? 0 : 1;
    std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", macow_report_name(report.get(), i),
                macow_report_detail(report.get(), i));
  }
  std::printf("%zu/%zu checks passed\n", n - failed, n);
  return failed == 0 ? kExitOk : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked convolutional flow: train, evaluate, sample, benchmark and verify."};
  app.require_subcommand(1);
  Options o;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Random seed"); };
  auto add_mode = [&](CLI::App* c) {
    c->add_option("--mode", o.mode, "Dequantization")->check(CLI::IsMember({"unif", "var"}));
  };
  auto add_precision = [&](CLI::App* c) {
    c->add_option("--precision", o.precision, "Floating point precision")->check(CLI::IsMember({"f32", "f64"}));
  };

  auto* train = app.add_subcommand("train", "Train a model on a dataset");
  train->add_option("--config", o.config, "Flat key = value configuration file")->check(CLI::ExistingFile);
  train->add_option("--data", o.data, "MCWT u8 file or PGM/PPM directory")->required();
  train->add_option("--checkpoint", o.checkpoint, "Checkpoint to write (and to resume from with --resume)");
  train->add_option("--out", o.out, "Training log CSV (default: stdout)");
  train->add_flag("--resume", o.resume, "Continue the run stored in --checkpoint");
  train->add_option("--until", o.until, "Stop after this step instead of the configured count");
  add_seed(train);
  add_mode(train);
  add_precision(train);

  auto* eval = app.add_subcommand("eval", "Bits/dim of a dataset under a checkpoint");
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate")->required();
  eval->add_option("--data", o.data, "MCWT u8 file or PGM/PPM directory")->required();
  eval->add_option("--k", o.k, "Importance samples per image (default: eval_samples)");
  add_seed(eval);
  add_mode(eval);
  add_precision(eval);

  auto* sample = app.add_subcommand("sample", "Write a grid of samples");
  sample->add_option("--checkpoint", o.checkpoint, "Checkpoint to sample from")->required();
  sample->add_option("--out", o.out, "Output PGM/PPM path")->required();
  sample->add_option("--n", o.n, "Number of samples")->capture_default_str();
  sample->add_option("--temperature", o.temperature, "Latent standard deviation scale (default: from config)");
  add_seed(sample);
  add_mode(sample);
  add_precision(sample);

  auto* bench = app.add_subcommand("bench", "Sampling time against image size");
  bench->add_option("--batch", o.batch, "Images per sample call (default 100)");
  bench->add_option("--repeats", o.repeats, "Timed repeats per size (default 5)");
  bench->add_option("--out", o.out, "CSV path (default: stdout)");
  add_seed(bench);
  add_precision(bench);

  auto* verify = app.add_subcommand("verify", "Run the oracle suite");
  add_seed(verify);
  add_precision(verify);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "macow: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (train->parsed()) return run_train(o);
    if (eval->parsed()) return run_eval(o);
    if (sample->parsed()) return run_sample(o);
    if (bench->parsed()) return run_bench(o);
    return run_verify(o);
  } catch (const Failure& f) {
    return f.exit_code;
  }
}
