#pragma once

#include <string>
#include <vector>

#include "eul/model.h"

namespace eul {

// Versioned binary container for a model: backbone config, backbone weights,
// and zero or more named adapter sets. The header (format version + a full
// shape table) is validated before any weight payload is read. All values are
// little-endian 64-bit floats.
struct Checkpoint {
  BackboneConfig cfg;
  TransformerModel model;           // adapter slots left empty
  std::vector<AdapterSet> adapter_sets;

  const AdapterSet* find_adapter_set(const std::string& request_id) const;
};

void save_checkpoint(const std::string& path, const TransformerModel& model,
                     const std::vector<AdapterSet>& adapter_sets = {});
Checkpoint load_checkpoint(const std::string& path);

// little-endian scalar IO shared with the gram file format
namespace wire {
void put_u32(std::string& buf, std::uint32_t v);
void put_u64(std::string& buf, std::uint64_t v);
void put_f64(std::string& buf, double v);
std::uint32_t get_u32(const std::string& buf, std::size_t& off);
std::uint64_t get_u64(const std::string& buf, std::size_t& off);
double get_f64(const std::string& buf, std::size_t& off);
std::uint32_t crc32(const unsigned char* data, std::size_t n);

// whole-file helpers; write_file_atomic writes a temp file then renames
std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, const std::string& contents);
}  // namespace wire

}  // namespace eul
