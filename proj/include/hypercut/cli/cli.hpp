#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace hypercut::cli {

/// Raised for invalid argument combinations found after parsing; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Fully resolved settings of one run, echoed to `config.json`.
struct RunConfig {
  std::string subcommand;
  std::string data;
  std::string out = ".";
  std::uint64_t seed = 0;
  int epochs = -1;  // -1: subcommand default
  int batch = -1;
  double lr = -1.0;
  double alpha = 0.2;
  int dim = 128;
  int frames = 7;
  int size = 32;
  int channels = 1;
  int count = 2000;
  std::string regime = "oi+hypercut";
  bool static_scenes = false;
  bool border_only = false;
  std::string encoder;
  std::string model;
  std::string stream;
  std::string blurry;
  std::string variant = "per-frame-max";
  std::string alphas = "0,0.1,0.15,0.2,0.25,0.3";
  std::string dims = "1,16,64,128,256";

  nlohmann::json to_json() const;
};

/// Root-seed streams for the independently seeded components.
inline constexpr std::uint64_t kDataStream = 1;
inline constexpr std::uint64_t kEncoderStream = 2;
inline constexpr std::uint64_t kDeblurStream = 3;

/// Runs one subcommand. Returns 0 on success, 2 on usage errors, 1 on runtime errors.
int dispatch(int argc, char** argv);
int dispatch(const std::vector<std::string>& args);

}  // namespace hypercut::cli
