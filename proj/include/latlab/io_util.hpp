#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "latlab/tensor.hpp"

namespace latlab {

std::string base64_encode(const std::uint8_t* bytes, std::size_t n);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// Doubles are serialized as little-endian 64-bit IEEE values regardless of
// host byte order.
std::string doubles_to_b64(const double* values, std::size_t n);
std::vector<double> doubles_from_b64(const std::string& text);

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j, const std::string& where);

std::uint64_t fnv1a64(const void* bytes, std::size_t n);
std::uint64_t fnv1a64(const std::string& s);
std::string hex_u64(std::uint64_t v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);
std::uint64_t file_checksum(const std::string& path);

}  // namespace latlab
