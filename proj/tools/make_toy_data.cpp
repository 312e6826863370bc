// Writes a synthetic u8 dataset as an MCWT file.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "macow/macow.h"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic grayscale image dataset"};
  std::string out;
  std::string pattern = "ramps";
  std::size_t count = 2048;
  std::size_t height = 8;
  std::size_t width = 8;
  std::uint64_t seed = 3;
  app.add_option("--out", out, "Output MCWT path")->required();
  app.add_option("--pattern", pattern, "ramps | checkerboard")
      ->check(CLI::IsMember({"ramps", "checkerboard"}))
      ->capture_default_str();
  app.add_option("--n", count, "Number of images")->capture_default_str();
  app.add_option("--height", height, "Image height")->capture_default_str();
  app.add_option("--width", width, "Image width")->capture_default_str();
  app.add_option("--seed", seed, "Random seed")->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }
  const auto kind = pattern == "ramps" ? MACOW_TOY_RAMPS : MACOW_TOY_CHECKERBOARD;
  if (macow_write_toy_dataset(out.c_str(), kind, count, height, width, seed) != MACOW_OK) {
    std::cerr << macow_last_error() << "\n";
    return 2;
  }
  return 0;
}
