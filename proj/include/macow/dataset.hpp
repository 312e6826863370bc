#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "macow/tensor.hpp"

namespace macow {

/// In-memory image collection quantized to n_bits (values in [0, 2^n_bits)).
struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  unsigned n_bits = 8;
  std::vector<std::uint8_t> levels;  // [N,h,w,c] row-major

  std::size_t per_item() const { return height * width * channels; }
  std::size_t size() const { return per_item() ? levels.size() / per_item() : 0; }
  Shape item_shape() const { return Shape{1, height, width, channels}; }

  template <typename T>
  Tensor<T> gather(const std::vector<std::size_t>& indices) const;
  template <typename T>
  Tensor<T> all() const;
};

/// 8-bit images [N,h,w,c] reduced to n_bits by integer division.
Dataset quantize(const Tensor<std::uint8_t>& images, unsigned n_bits);

/// An MCWT u8 file or a directory of binary PGM/PPM images (sorted by name).
Dataset load_dataset(const std::filesystem::path& path, unsigned n_bits);

/// Deterministic epoch-shuffled batches. Step s belongs to epoch
/// s / batches_per_epoch(); the last batch of an epoch may be short.
class BatchOrder {
 public:
  BatchOrder(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const { return (size_ + batch_ - 1) / batch_; }
  std::vector<std::size_t> batch(std::uint64_t step) const;
  std::vector<std::size_t> epoch_permutation(std::uint64_t epoch) const;

 private:
  std::size_t size_;
  std::size_t batch_;
  std::uint64_t seed_;
};

/// Binary PGM (c = 1) or PPM (c = 3) with maxval 255.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};
Image read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image& image);

/// Tiles x ([N,h,w,c], values in [0, 2^n_bits)) into a grid with `cols`
/// columns, row-major; cells left over in the last row stay black. Values are
/// floored, clamped and scaled so 2^n_bits - 1 becomes 255.
template <typename T>
Image image_grid(const Tensor<T>& x, unsigned n_bits, std::size_t cols);
template <typename T>
void write_image_grid(const std::filesystem::path& path, const Tensor<T>& x, unsigned n_bits, std::size_t cols);

/// Synthetic 8-bit images: each image picks one of two mean patterns (a
/// horizontal or a vertical ramp) and adds iid Gaussian pixel noise.
Tensor<std::uint8_t> make_toy_images(std::size_t count, std::size_t height, std::size_t width, std::uint64_t seed);
/// Checkerboards with cell size 1 or 2 and either phase, plus Gaussian noise.
Tensor<std::uint8_t> make_checkerboard_images(std::size_t count, std::size_t height, std::size_t width,
                                              std::uint64_t seed);

}  // namespace macow
