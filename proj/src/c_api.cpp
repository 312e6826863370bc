#include "macow/macow.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <string>

#include "macow/bench.hpp"
#include "macow/engine.hpp"
#include "macow/mcwt.hpp"
#include "macow/verify.hpp"

struct macow_config {
  macow::RunConfig value;
};

struct macow_dataset {
  macow::Dataset value;
};

struct macow_run {
  std::unique_ptr<macow::Engine> engine;
};

struct macow_report {
  std::vector<macow::CheckResult> checks;
};

namespace {

thread_local std::string last_error;

macow_status status_of(macow::ErrorCode code) { return static_cast<macow_status>(static_cast<int>(code)); }

// Runs fn, translating exceptions into a status and the thread's last error.
template <typename Fn>
macow_status guarded(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return MACOW_OK;
  } catch (const macow::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown failure";
  }
  return MACOW_ERR_INTERNAL;
}

void need(const void* p, const char* what) {
  if (!p) macow::fail(macow::ErrorCode::kUsage, std::string(what) + " must not be null");
}

macow::Precision to_precision(macow_precision p) {
  if (p == MACOW_F32) return macow::Precision::kF32;
  if (p == MACOW_F64) return macow::Precision::kF64;
  macow::fail(macow::ErrorCode::kUsage, "unknown precision");
}

}  // namespace

extern "C" {

const char* macow_status_string(macow_status status) {
  switch (status) {
    case MACOW_OK: return "ok";
    case MACOW_ERR_INTERNAL: return "internal";
    default: break;
  }
  if (status >= MACOW_ERR_DIMENSION && status <= MACOW_ERR_STATE)
    return macow::to_string(static_cast<macow::ErrorCode>(status)).data();
  return "unknown";
}

const char* macow_last_error(void) { return last_error.c_str(); }

macow_status macow_config_default(macow_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new macow_config{};
  });
}

macow_status macow_config_load(const char* path, macow_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new macow_config{macow::load_config(path)};
  });
}

macow_status macow_config_parse(const char* text, macow_config** out) {
  return guarded([&] {
    need(text, "text");
    need(out, "out");
    *out = new macow_config{macow::parse_config(text)};
  });
}

macow_status macow_config_set(macow_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    macow::set_config_value(cfg->value, key, value);
  });
}

macow_status macow_config_get(const macow_config* cfg, const char* key, char* buf, size_t cap) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(buf, "buffer");
    macow::require(cap > 0, macow::ErrorCode::kUsage, "buffer capacity must be positive");
    const std::string value = macow::config_value(cfg->value, key);
    const std::size_t n = std::min(value.size(), cap - 1);
    std::memcpy(buf, value.data(), n);
    buf[n] = '\0';
  });
}

void macow_config_free(macow_config* cfg) { delete cfg; }

macow_status macow_dataset_open(const char* path, unsigned n_bits, macow_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new macow_dataset{macow::load_dataset(path, n_bits)};
  });
}

macow_status macow_dataset_shape(const macow_dataset* data, size_t shape[4]) {
  return guarded([&] {
    need(data, "dataset");
    need(shape, "shape");
    shape[0] = data->value.size();
    shape[1] = data->value.height;
    shape[2] = data->value.width;
    shape[3] = data->value.channels;
  });
}

void macow_dataset_free(macow_dataset* data) { delete data; }

macow_status macow_write_toy_dataset(const char* path, macow_toy_pattern pattern, size_t count, size_t height,
                                     size_t width, uint64_t seed) {
  return guarded([&] {
    need(path, "path");
    switch (pattern) {
      case MACOW_TOY_RAMPS: macow::save_tensor(path, macow::make_toy_images(count, height, width, seed)); break;
      case MACOW_TOY_CHECKERBOARD:
        macow::save_tensor(path, macow::make_checkerboard_images(count, height, width, seed));
        break;
      default: macow::fail(macow::ErrorCode::kUsage, "unknown toy pattern");
    }
  });
}

macow_status macow_run_create(const macow_config* cfg, macow_run** out) {
  return guarded([&] {
    need(cfg, "config");
    need(out, "out");
    *out = new macow_run{macow::Engine::create(cfg->value)};
  });
}

macow_status macow_run_load(const char* checkpoint_path, macow_run** out) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint path");
    need(out, "out");
    *out = new macow_run{macow::Engine::load(checkpoint_path)};
  });
}

void macow_run_free(macow_run* run) { delete run; }

macow_status macow_run_info_get(macow_run* run, macow_run_info* out) {
  return guarded([&] {
    need(run, "run");
    need(out, "out");
    const auto& cfg = run->engine->config();
    out->step = run->engine->step();
    out->skipped_steps = run->engine->skipped_steps();
    out->total_steps = cfg.train.steps;
    out->precision = cfg.train.precision == macow::Precision::kF32 ? MACOW_F32 : MACOW_F64;
    out->height = cfg.model.height;
    out->width = cfg.model.width;
    out->channels = cfg.model.channels;
    out->n_bits = cfg.model.n_bits;
    out->parameter_count = run->engine->parameter_count();
    out->variational = cfg.model.dequant == macow::DequantMode::kVariational ? 1 : 0;
    out->temperature = cfg.train.temperature;
    out->eval_samples = cfg.train.eval_samples;
  });
}

macow_status macow_run_train(macow_run* run, const macow_dataset* data, const char* log_path,
                             const char* checkpoint_path, uint64_t until) {
  return guarded([&] {
    need(run, "run");
    need(data, "dataset");
    const bool to_stdout = log_path && std::strcmp(log_path, "-") == 0;
    std::ofstream log;
    if (log_path && !to_stdout) {
      // A resumed run appends to the log it started.
      log.open(log_path, run->engine->step() == 0 ? std::ios::trunc : std::ios::app);
      macow::require(static_cast<bool>(log), macow::ErrorCode::kIo,
                     std::string("cannot open log '") + log_path + "'");
    }
    std::optional<std::filesystem::path> ckpt;
    if (checkpoint_path) ckpt = checkpoint_path;
    std::ostream* sink = to_stdout ? &std::cout : log_path ? &log : nullptr;
    run->engine->train(data->value, sink, ckpt, until ? std::optional<std::uint64_t>(until) : std::nullopt);
    if (sink) macow::require(static_cast<bool>(*sink), macow::ErrorCode::kIo, "failed writing the training log");
  });
}

macow_status macow_run_save(macow_run* run, const char* checkpoint_path) {
  return guarded([&] {
    need(run, "run");
    need(checkpoint_path, "checkpoint path");
    run->engine->save(checkpoint_path);
  });
}

macow_status macow_run_eval(macow_run* run, const macow_dataset* data, size_t k, uint64_t seed, double* bpd) {
  return guarded([&] {
    need(run, "run");
    need(data, "dataset");
    need(bpd, "bpd");
    *bpd = run->engine->evaluate(data->value, k, seed);
  });
}

macow_status macow_run_sample(macow_run* run, size_t n, double temperature, uint64_t seed, const char* out_path) {
  return guarded([&] {
    need(run, "run");
    need(out_path, "output path");
    const auto x = run->engine->sample(n, temperature, seed);
    const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    macow::write_image_grid(out_path, x, run->engine->config().model.n_bits, cols);
  });
}

macow_status macow_verify(macow_precision precision, uint64_t seed, macow_report** out) {
  return guarded([&] {
    need(out, "out");
    *out = new macow_report{macow::run_verify_suite(to_precision(precision), seed)};
  });
}

size_t macow_report_size(const macow_report* report) { return report ? report->checks.size() : 0; }

int macow_report_passed(const macow_report* report, size_t index) {
  return report && index < report->checks.size() && report->checks[index].passed ? 1 : 0;
}

const char* macow_report_name(const macow_report* report, size_t index) {
  return report && index < report->checks.size() ? report->checks[index].name.c_str() : "";
}

const char* macow_report_detail(const macow_report* report, size_t index) {
  return report && index < report->checks.size() ? report->checks[index].detail.c_str() : "";
}

void macow_report_free(macow_report* report) { delete report; }

void macow_bench_defaults(macow_bench_options* out) {
  static const size_t kSizes[] = {16, 32};
  if (!out) return;
  const macow::BenchOptions d;
  out->sizes = kSizes;
  out->n_sizes = 2;
  out->batch = d.batch;
  out->repeats = d.repeats;
  out->seed = d.seed;
  out->precision = d.precision == macow::Precision::kF32 ? MACOW_F32 : MACOW_F64;
}

macow_status macow_bench_csv(const macow_bench_options* options, char** csv) {
  return guarded([&] {
    need(options, "options");
    need(csv, "csv");
    need(options->sizes, "sizes");
    macow::BenchOptions opt;
    opt.sizes.assign(options->sizes, options->sizes + options->n_sizes);
    opt.batch = options->batch;
    opt.repeats = options->repeats;
    opt.seed = options->seed;
    opt.precision = to_precision(options->precision);
    const std::string text = macow::bench_csv(macow::bench_sample(opt));
    char* buf = new char[text.size() + 1];
    std::memcpy(buf, text.c_str(), text.size() + 1);
    *csv = buf;
  });
}

void macow_string_free(char* text) { delete[] text; }

}  // extern "C"
