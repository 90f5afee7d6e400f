#include "feddah/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <type_traits>

#include "feddah/error.hpp"

namespace feddah {
namespace {

constexpr std::array<char, 4> kMagic = {'F', 'D', 'A', 'H'};

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

void put_f64(std::ostream& out, double value) { put_le(out, std::bit_cast<std::uint64_t>(value)); }

void put_string(std::ostream& out, const std::string& s) {
  put_le(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw IoError("checkpoint truncated");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

std::string get_string(std::istream& in) {
  const auto n = get_le<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IoError("checkpoint truncated inside a name");
  return s;
}

}  // namespace

std::vector<Tensor> Checkpoint::tensors_with_prefix(const std::string& prefix) const {
  std::vector<Tensor> out;
  for (const auto& nt : tensors) {
    if (nt.name.starts_with(prefix)) out.push_back(nt.tensor);
  }
  return out;
}

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint) {
  out.write(kMagic.data(), kMagic.size());
  put_le(out, checkpoint.version);
  put_le(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, tensor] : checkpoint.tensors) {
    put_string(out, name);
    put_le(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put_le(out, static_cast<std::uint64_t>(d));
    for (double v : tensor.data()) put_f64(out, v);
  }
  put_le(out, static_cast<std::uint32_t>(checkpoint.identities.size()));
  for (const auto& id : checkpoint.identities) {
    put_string(out, id.task_id);
    put_le(out, static_cast<std::uint64_t>(id.index));
    put_f64(out, id.mu);
    put_f64(out, id.sigma);
    put_le(out, static_cast<std::uint64_t>(id.z.size()));
    for (double v : id.z.data()) put_f64(out, v);
  }
  if (!out) throw IoError("failed to write checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError("not a checkpoint: bad magic");
  Checkpoint checkpoint;
  checkpoint.version = get_le<std::uint32_t>(in);
  if (checkpoint.version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(checkpoint.version));
  }
  const auto n_tensors = get_le<std::uint32_t>(in);
  for (std::uint32_t t = 0; t < n_tensors; ++t) {
    NamedTensor nt;
    nt.name = get_string(in);
    const auto rank = get_le<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(in));
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = get_f64(in);
    nt.tensor = Tensor(std::move(shape), std::move(values));
    checkpoint.tensors.push_back(std::move(nt));
  }
  const auto n_ids = get_le<std::uint32_t>(in);
  for (std::uint32_t k = 0; k < n_ids; ++k) {
    TaskIdentity id;
    id.task_id = get_string(in);
    id.index = static_cast<std::size_t>(get_le<std::uint64_t>(in));
    id.mu = get_f64(in);
    id.sigma = get_f64(in);
    const auto n = static_cast<std::size_t>(get_le<std::uint64_t>(in));
    std::vector<double> z(n);
    for (double& v : z) v = get_f64(in);
    id.z = Tensor::vector(std::move(z));
    checkpoint.identities.push_back(std::move(id));
  }
  return checkpoint;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_checkpoint(in);
}

void append_hyperparams(Checkpoint& checkpoint, const HyperParams& hp) {
  const auto names = hp.tensor_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    checkpoint.tensors.push_back({"hyper." + names[i], hp.tensors()[i]});
  }
}

HyperParams hyperparams_from(const Checkpoint& checkpoint, const ModelSpec& spec, std::size_t n_z, std::size_t d) {
  return HyperParams::from_tensors(spec, n_z, d, checkpoint.tensors_with_prefix("hyper."));
}

}  // namespace feddah
