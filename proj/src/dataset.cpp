#include "macow/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "macow/mcwt.hpp"
#include "macow/rng.hpp"

namespace macow {

namespace fs = std::filesystem;

template <typename T>
Tensor<T> Dataset::gather(const std::vector<std::size_t>& indices) const {
  const std::size_t per = per_item();
  Tensor<T> out(Shape{indices.size(), height, width, channels});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    require(indices[b] < size(), ErrorCode::kDimension, fmt::format("image index {} out of range", indices[b]));
    for (std::size_t k = 0; k < per; ++k) out[b * per + k] = static_cast<T>(levels[indices[b] * per + k]);
  }
  return out;
}

template <typename T>
Tensor<T> Dataset::all() const {
  std::vector<std::size_t> idx(size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return gather<T>(idx);
}

Dataset quantize(const Tensor<std::uint8_t>& images, unsigned n_bits) {
  require(n_bits >= 1 && n_bits <= 8, ErrorCode::kValidation, "n_bits must be in [1, 8]");
  require(images.shape().n() > 0, ErrorCode::kValidation, "dataset is empty");
  Dataset d;
  d.height = images.shape().h();
  d.width = images.shape().w();
  d.channels = images.shape().c();
  d.n_bits = n_bits;
  d.levels.resize(images.size());
  const unsigned shift = 8 - n_bits;
  for (std::size_t i = 0; i < images.size(); ++i) d.levels[i] = static_cast<std::uint8_t>(images[i] >> shift);
  return d;
}

namespace {

void skip_space_and_comments(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

std::size_t read_header_number(std::istream& in, const fs::path& path) {
  skip_space_and_comments(in);
  std::size_t v = 0;
  in >> v;
  require(static_cast<bool>(in), ErrorCode::kIo, fmt::format("{}: malformed PNM header", path.string()));
  return v;
}

}  // namespace

Image read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, fmt::format("cannot open {}", path.string()));
  char magic[2] = {};
  in.read(magic, 2);
  require(in && magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6'), ErrorCode::kIo,
          fmt::format("{}: not a binary PGM/PPM file", path.string()));
  Image img;
  img.channels = magic[1] == '5' ? 1 : 3;
  img.width = read_header_number(in, path);
  img.height = read_header_number(in, path);
  const std::size_t maxval = read_header_number(in, path);
  require(maxval == 255, ErrorCode::kIo, fmt::format("{}: only maxval 255 is supported", path.string()));
  require(img.width > 0 && img.height > 0, ErrorCode::kIo, fmt::format("{}: empty image", path.string()));
  in.get();  // single whitespace before the raster
  img.pixels.resize(img.height * img.width * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  require(static_cast<std::size_t>(in.gcount()) == img.pixels.size(), ErrorCode::kIo,
          fmt::format("{}: truncated raster", path.string()));
  return img;
}

void write_pnm(const fs::path& path, const Image& image) {
  require(image.channels == 1 || image.channels == 3, ErrorCode::kValidation,
          fmt::format("PNM output needs 1 or 3 channels, got {}", image.channels));
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  out << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, fmt::format("write to {} failed", path.string()));
}

Dataset load_dataset(const fs::path& path, unsigned n_bits) {
  require(fs::exists(path), ErrorCode::kIo, fmt::format("dataset '{}' does not exist", path.string()));
  if (!fs::is_directory(path)) return quantize(load_tensor<std::uint8_t>(path), n_bits);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) files.push_back(entry.path());
  }
  require(!files.empty(), ErrorCode::kIo, fmt::format("no .pgm/.ppm images in '{}'", path.string()));
  std::sort(files.begin(), files.end());
  std::vector<Tensor<std::uint8_t>> parts;
  Shape first;
  for (const auto& f : files) {
    Image img = read_pnm(f);
    const Shape s{1, img.height, img.width, img.channels};
    if (parts.empty()) first = s;
    require(s == first, ErrorCode::kDimension,
            fmt::format("{} has shape {}, expected {}", f.string(), to_string(s), to_string(first)));
    parts.emplace_back(s, std::move(img.pixels));
  }
  return quantize(concat_batch(parts), n_bits);
}

BatchOrder::BatchOrder(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : size_(dataset_size), batch_(batch_size), seed_(seed) {
  require(size_ > 0, ErrorCode::kValidation, "dataset is empty");
  require(batch_ > 0, ErrorCode::kValidation, "batch size must be positive");
}

std::vector<std::size_t> BatchOrder::epoch_permutation(std::uint64_t epoch) const {
  std::vector<std::size_t> perm(size_);
  for (std::size_t i = 0; i < size_; ++i) perm[i] = i;
  // Fisher-Yates with our own index draw so the order does not depend on the
  // standard library's distribution implementation.
  Rng rng(seed_, streams::kData, epoch);
  for (std::size_t i = size_; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
    std::swap(perm[i - 1], perm[std::min(j, i - 1)]);
  }
  return perm;
}

std::vector<std::size_t> BatchOrder::batch(std::uint64_t step) const {
  const std::uint64_t epoch = step / batches_per_epoch();
  const std::size_t b = static_cast<std::size_t>(step % batches_per_epoch());
  const auto perm = epoch_permutation(epoch);
  const std::size_t begin = b * batch_;
  const std::size_t end = std::min(begin + batch_, size_);
  return {perm.begin() + static_cast<std::ptrdiff_t>(begin), perm.begin() + static_cast<std::ptrdiff_t>(end)};
}

template <typename T>
Image image_grid(const Tensor<T>& x, unsigned n_bits, std::size_t cols) {
  const Shape& s = x.shape();
  require(s.c() == 1 || s.c() == 3, ErrorCode::kValidation,
          fmt::format("image grid needs 1 or 3 channels, got {}", s.c()));
  require(cols >= 1 && s.n() >= 1, ErrorCode::kValidation, "image grid needs at least one image and column");
  const std::size_t grid_cols = std::min(cols, s.n());
  const std::size_t grid_rows = (s.n() + cols - 1) / cols;
  Image img;
  img.height = grid_rows * s.h();
  img.width = grid_cols * s.w();
  img.channels = s.c();
  img.pixels.assign(img.height * img.width * img.channels, 0);
  const double top = std::ldexp(1.0, static_cast<int>(n_bits)) - 1.0;
  for (std::size_t n = 0; n < s.n(); ++n) {
    const std::size_t r0 = (n / cols) * s.h(), c0 = (n % cols) * s.w();
    for (std::size_t i = 0; i < s.h(); ++i)
      for (std::size_t j = 0; j < s.w(); ++j)
        for (std::size_t k = 0; k < s.c(); ++k) {
          const double v = static_cast<double>(x.at(n, i, j, k));
          const double level = std::isfinite(v) ? std::clamp(std::floor(v), 0.0, top) : 0.0;
          img.pixels[((r0 + i) * img.width + (c0 + j)) * img.channels + k] =
              static_cast<std::uint8_t>(std::lround(level * 255.0 / top));
        }
  }
  return img;
}

template <typename T>
void write_image_grid(const fs::path& path, const Tensor<T>& x, unsigned n_bits, std::size_t cols) {
  write_pnm(path, image_grid(x, n_bits, cols));
}

Tensor<std::uint8_t> make_toy_images(std::size_t count, std::size_t height, std::size_t width, std::uint64_t seed) {
  require(count > 0 && height > 1 && width > 1, ErrorCode::kValidation, "toy dataset needs a positive size");
  Tensor<std::uint8_t> out(Shape{count, height, width, 1});
  Rng rng(seed);
  for (std::size_t n = 0; n < count; ++n) {
    const bool vertical = rng.uniform() < 0.5;
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const double t = static_cast<double>(vertical ? i : j) / static_cast<double>((vertical ? height : width) - 1);
        const double v = 40.0 + 175.0 * t + 20.0 * rng.normal();
        out.at(n, i, j, 0) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
  }
  return out;
}

Tensor<std::uint8_t> make_checkerboard_images(std::size_t count, std::size_t height, std::size_t width,
                                              std::uint64_t seed) {
  require(count > 0 && height > 1 && width > 1, ErrorCode::kValidation, "toy dataset needs a positive size");
  Tensor<std::uint8_t> out(Shape{count, height, width, 1});
  Rng rng(seed);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t cell = rng.uniform() < 0.5 ? 1 : 2;
    const std::size_t phase = rng.uniform() < 0.5 ? 0 : 1;
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const bool light = ((i / cell + j / cell + phase) % 2) == 1;
        const double v = (light ? 200.0 : 55.0) + 20.0 * rng.normal();
        out.at(n, i, j, 0) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
  }
  return out;
}

#define MACOW_INSTANTIATE(T)                                                                           \
  template Tensor<T> Dataset::gather<T>(const std::vector<std::size_t>&) const;                        \
  template Tensor<T> Dataset::all<T>() const;                                                          \
  template Image image_grid(const Tensor<T>&, unsigned, std::size_t);                                  \
  template void write_image_grid(const fs::path&, const Tensor<T>&, unsigned, std::size_t);
MACOW_INSTANTIATE(float)
MACOW_INSTANTIATE(double)
#undef MACOW_INSTANTIATE

}  // namespace macow
