#pragma once

// Flat binary tensor format: "OVSG", u32 version, u32 rank, u32 dims[rank],
// then float32 values, all little-endian.

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ovseg/tensor.hpp"

namespace ovseg {

inline constexpr uint32_t kTensorFormatVersion = 1;

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Row-per-class matrix plus a sidecar "<path>.json" holding {"class_names": [...]}.
void save_embeddings(const std::string& path, const Eigen::MatrixXd& m, const std::vector<std::string>& class_names);
std::pair<Eigen::MatrixXd, std::vector<std::string>> load_embeddings(const std::string& path);

Eigen::MatrixXd to_matrix(const Tensor& t);  // rank-2 tensors only
Tensor from_matrix(const Eigen::MatrixXd& m);

}  // namespace ovseg
