#pragma once
// On-disk formats: raw little-endian float64 blocks plus key/value manifests.
#include <map>
#include <string>
#include <vector>

#include "nopkit/model.hpp"
#include "nopkit/pde.hpp"

namespace nop {

void write_f64(const std::string& path, const double* data, std::size_t n);
std::vector<double> read_f64(const std::string& path);

// SHA-1 hex digest, used as the content hash in dataset manifests.
std::string sha1_hex(const unsigned char* data, std::size_t n);

// "key = value" lines; lists are space-separated. Blank lines and lines
// starting with '#' are skipped.
void write_manifest(const std::string& path, const std::vector<std::pair<std::string, std::string>>& kv);
std::map<std::string, std::string> read_manifest(const std::string& path);

// Dataset directory: manifest.txt + inputs.bin + outputs.bin. Reads are gated
// on format_version; ConfigError on mismatch or corrupt sizes.
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

// Checkpoint directory: manifest.txt (model config + ordered parameter table)
// + params.bin holding all named parameters back to back.
void save_checkpoint(const std::string& dir, const OperatorModel& m);
OperatorModel load_checkpoint(const std::string& dir);

} // namespace nop
