#include "bvx/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>

namespace bvx {

namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(value);
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes.data(), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
    throw FormatError("truncated checkpoint");
  }
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= U{bytes[i]} << (8 * i);
  return std::bit_cast<T>(bits);
}

}  // namespace

void save_checkpoint(std::ostream& out, const MlpModel<double>& model) {
  put_le(out, static_cast<std::int32_t>(model.input_dim()));
  put_le(out, static_cast<std::int32_t>(model.output_dim()));
  put_le(out, static_cast<std::int32_t>(model.width()));
  put_le(out, static_cast<std::int32_t>(model.head));
  put_le(out, static_cast<std::int32_t>(model.activation));
  const Eigen::VectorXd flat = model.to_flat();
  for (Eigen::Index i = 0; i < flat.size(); ++i) put_le(out, flat(i));
}

MlpModel<double> load_checkpoint(std::istream& in) {
  const auto d = get_le<std::int32_t>(in);
  const auto k = get_le<std::int32_t>(in);
  const auto h = get_le<std::int32_t>(in);
  const auto head = get_le<std::int32_t>(in);
  const auto act = get_le<std::int32_t>(in);
  if (d < 1 || k < 1 || h < 1) throw FormatError("checkpoint dimensions must be positive");
  if (head != static_cast<std::int32_t>(Head::Linear) && head != static_cast<std::int32_t>(Head::Softmax)) {
    throw FormatError("unknown head code in checkpoint");
  }
  if (act != static_cast<std::int32_t>(Activation::ReLU)) throw FormatError("unknown activation code in checkpoint");

  MlpModel<double> m;
  m.w1.resize(h, d);
  m.b1.resize(h);
  m.w2.resize(k, h);
  m.b2.resize(k);
  m.head = static_cast<Head>(head);
  m.activation = static_cast<Activation>(act);
  Eigen::VectorXd flat(m.parameter_count());
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat(i) = get_le<double>(in);
  m.assign_flat(flat);
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const MlpModel<double>& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  save_checkpoint(out, model);
}

MlpModel<double> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace bvx
