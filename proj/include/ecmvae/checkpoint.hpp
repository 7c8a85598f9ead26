#pragma once

#include <string>

#include "ecmvae/param_store.hpp"

namespace ecmvae {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint = <base>.json manifest (names, shapes, offsets, optimizer
// scalars, embedded config blob) + <base>.bin sidecar holding raw
// little-endian f64 arrays. Round-trips are bit-exact.
void save_checkpoint(const std::string& base_path, const ParamStore& store, const Adam* adam,
                     const std::string& config_json);
// adam may be null if optimizer state is not wanted back
void load_checkpoint(const std::string& base_path, ParamStore& store, Adam* adam,
                     std::string* config_json);

// raw little-endian helpers shared with the corpus format
void write_f64_le(std::ostream& os, const double* p, size_t n);
void read_f64_le(std::istream& is, double* p, size_t n);

}  // namespace ecmvae
