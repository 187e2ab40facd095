#include "ovseg/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "ovseg/errors.hpp"

namespace ovseg {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace {

void put_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t get_u32(std::istream& in) {
    uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw FormatError("tensor file truncated");
    return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
    out.write("OVSG", 4);
    put_u32(out, kTensorFormatVersion);
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (const auto d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
    std::vector<float> buf(t.data().begin(), t.data().end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw FormatError("tensor write failed");
}

Tensor read_tensor(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "OVSG", 4) != 0) throw FormatError("not an OVSG tensor (bad magic)");
    const auto version = get_u32(in);
    if (version != kTensorFormatVersion) throw FormatError("unsupported tensor version " + std::to_string(version));
    const auto rank = get_u32(in);
    if (rank > 16) throw FormatError("implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = get_u32(in);
    std::vector<float> buf(static_cast<size_t>(numel(shape)));
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float))))
        throw FormatError("tensor data truncated");
    return Tensor::from(shape, std::vector<double>(buf.begin(), buf.end()));
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    write_tensor(out, t);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read " + path);
    return read_tensor(in);
}

Eigen::MatrixXd to_matrix(const Tensor& t) {
    if (t.rank() != 2) throw ShapeError("expected a rank-2 tensor, got " + shape_str(t.shape()));
    Eigen::MatrixXd m(t.dim(0), t.dim(1));
    const auto v = t.data();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = v[static_cast<size_t>(i * m.cols() + j)];
    return m;
}

Tensor from_matrix(const Eigen::MatrixXd& m) {
    std::vector<double> v(static_cast<size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) v[static_cast<size_t>(i * m.cols() + j)] = m(i, j);
    return Tensor::from({m.rows(), m.cols()}, std::move(v));
}

void save_embeddings(const std::string& path, const Eigen::MatrixXd& m, const std::vector<std::string>& class_names) {
    if (!class_names.empty() && static_cast<Eigen::Index>(class_names.size()) != m.rows())
        throw ShapeError("embeddings: " + std::to_string(class_names.size()) + " names for " +
                         std::to_string(m.rows()) + " rows");
    save_tensor(path, from_matrix(m));
    std::ofstream side(path + ".json");
    side << nlohmann::json{{"class_names", class_names}}.dump(2) << "\n";
}

std::pair<Eigen::MatrixXd, std::vector<std::string>> load_embeddings(const std::string& path) {
    auto m = to_matrix(load_tensor(path));
    std::vector<std::string> names;
    std::ifstream side(path + ".json");
    if (side) {
        try {
            names = nlohmann::json::parse(side).at("class_names").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path + ".json: " + e.what());
        }
        if (!names.empty() && static_cast<Eigen::Index>(names.size()) != m.rows())
            throw ShapeError(path + ": sidecar lists " + std::to_string(names.size()) + " classes for " +
                             std::to_string(m.rows()) + " rows");
    }
    return {std::move(m), std::move(names)};
}

}  // namespace ovseg
