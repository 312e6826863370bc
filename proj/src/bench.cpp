#include "macow/bench.hpp"

#include <algorithm>
#include <chrono>

#include <fmt/format.h>

#include "macow/model.hpp"

namespace macow {

ModelConfig BenchOptions::default_bench_model() {
  ModelConfig m;
  m.channels = 3;
  m.depths = {{1}, {1}};
  m.multiscale = MultiScale::kOriginal;
  m.hidden_channels = 16;
  m.units_per_step = 2;
  m.dequant = DequantMode::kUniform;
  return m;
}

std::size_t expected_conv_applications(const ModelConfig& cfg) {
  std::size_t total = 0;
  for (const auto& e : build_plan(cfg)) {
    if (e.op != PlanEntry::Op::kStep) continue;
    for (std::size_t u = 0; u < cfg.units_per_step; ++u)
      total += u % 2 == 0 ? 2 * e.height : 2 * e.width;  // (top, bottom) or (left, right)
  }
  return total;
}

namespace {

template <typename T>
BenchRow bench_one(const BenchOptions& opt, std::size_t size) {
  using Clock = std::chrono::steady_clock;
  ModelConfig cfg = opt.model;
  cfg.height = cfg.width = size;
  Rng init(opt.seed, streams::kInit);
  Model<T> model(cfg, init);
  // Freshly initialized nets cost the same to run as trained ones; ActNorm is
  // left at identity.
  for (auto& f : model.flags()) *f.value = true;

  std::vector<MaskedConvFlow<T>*> flows;
  for (std::size_t i = 0; i < model.leaf_count(); ++i)
    if (auto* f = dynamic_cast<MaskedConvFlow<T>*>(&model.leaf(i))) flows.push_back(f);

  Rng rng(opt.seed, streams::kSample);
  for (std::size_t i = 0; i < opt.warmup; ++i) model.sample(opt.batch, 1.0, rng);

  BenchRow row{size, opt.batch, 0, 0};
  for (auto* f : flows) f->reset_conv_applications();
  model.sample(opt.batch, 1.0, rng);
  for (auto* f : flows) row.conv_applications += f->conv_applications();

  const auto min_ticks = Clock::duration(10);
  std::size_t inner = 1;
  std::vector<double> per_item_ms;
  while (per_item_ms.size() < std::max<std::size_t>(opt.repeats, 1)) {
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < inner; ++i) model.sample(opt.batch, 1.0, rng);
    const auto elapsed = Clock::now() - t0;
    if (elapsed < min_ticks) {
      inner *= 2;
      per_item_ms.clear();
      continue;
    }
    const double ms = std::chrono::duration<double, std::milli>(elapsed).count();
    per_item_ms.push_back(ms / static_cast<double>(inner * opt.batch));
  }
  std::sort(per_item_ms.begin(), per_item_ms.end());
  const std::size_t n = per_item_ms.size();
  row.ms_per_datapoint = n % 2 ? per_item_ms[n / 2] : 0.5 * (per_item_ms[n / 2 - 1] + per_item_ms[n / 2]);
  return row;
}

}  // namespace

std::vector<BenchRow> bench_sample(const BenchOptions& opt) {
  require(!opt.sizes.empty() && opt.batch > 0, ErrorCode::kValidation, "bench needs sizes and a positive batch");
  std::vector<BenchRow> rows;
  for (std::size_t s : opt.sizes)
    rows.push_back(opt.precision == Precision::kF32 ? bench_one<float>(opt, s) : bench_one<double>(opt, s));
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = std::string(kBenchHeader) + "\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{:.6f},{}\n", r.size, r.batch, r.ms_per_datapoint, r.conv_applications);
  return out;
}

}  // namespace macow
