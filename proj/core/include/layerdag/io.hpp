#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "layerdag/dag.hpp"
#include "layerdag/model.hpp"

namespace layerdag {

// Dataset record rejected at a specific line (1-based); parse and validation
// failures both surface here.
struct DataError : std::runtime_error {
  int line;
  DataError(int line_, const std::string& what)
      : std::runtime_error("line " + std::to_string(line_) + ": " + what),
        line(line_) {}
};

struct VersionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CorruptFile : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// JSON-lines dataset: one object per line with keys n, attrs, edges and an
// optional label. Streams line by line; every record must pass validate_dag.
// Throws DataError with the offending line number.
std::vector<Dag> load_dataset(const std::string& path);
void save_dataset(const std::vector<Dag>& graphs, const std::string& path);

// Binary checkpoint: "LDAG" magic, u32 LE format version, u32 LE metadata
// length, UTF-8 JSON metadata (architecture, statistics, tensor directory),
// then all tensors as contiguous f32 LE values. save(load(f)) is
// byte-identical to f. Throws VersionMismatch or CorruptFile.
void save_checkpoint(const ModelParams& p, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

// Flat key=value run configuration. '#' starts a comment; unknown keys are
// rejected. Every key has the default below.
struct RunConfig {
  int hidden_dim = 128;
  int mpnn_layers = 3;
  int attn_blocks = 2;
  int attn_heads = 4;
  int t_train = 24;
  int t_min = 8;
  int t_max = 24;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 32;
  int epochs = 60;
  int patience = 10;
  uint64_t seed = 0;
  bool conditional = false;
  double w_size = 1.0, w_node = 1.0, w_edge = 1.0;  // loss_weights=a,b,c
  double s_offset = 0.008;
  bool shared_encoder = false;
};

// Throws ConfigError on unknown keys, malformed values, or unreadable files.
RunConfig parse_run_config_text(const std::string& text);
RunConfig parse_run_config(const std::string& path);

// CSV with a header row, comma separators, '.' decimal point.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

std::string format_double(double v);

// All writers above go through this: write to path + ".tmp", then rename.
void atomic_write(const std::string& path, const std::string& content);

}  // namespace layerdag
