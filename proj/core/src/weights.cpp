#include "lear/weights.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace lear {
namespace {

constexpr char kMagic[8] = {'L', 'E', 'A', 'R', 'C', 'K', 'P', 'T'};

template <typename U>
void write_le(std::ofstream& out, U v) {
  std::uint8_t buf[sizeof(U)];
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
  Bits bits;
  std::memcpy(&bits, &v, sizeof(U));
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = std::uint8_t(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U read_le(std::ifstream& in) {
  std::uint8_t buf[sizeof(U)];
  in.read(reinterpret_cast<char*>(buf), sizeof(U));
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= Bits(buf[i]) << (8 * i);
  U v;
  std::memcpy(&v, &bits, sizeof(U));
  return v;
}

}  // namespace

template <typename T>
void save_checkpoint(const ModelWeights<T>& w, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io", "cannot open checkpoint for writing: " + path);
  out.write(kMagic, 8);
  write_le<std::uint32_t>(out, w.format_version);
  for (const auto& [name, p] : w.params) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape.rank));
    for (int i = 0; i < p.shape.rank; ++i)
      write_le<std::uint64_t>(out, static_cast<std::uint64_t>(p.shape.dim[i]));
    for (const T v : p.values) write_le<float>(out, static_cast<float>(v));
  }
  if (!out) throw Error("io", "short write to checkpoint: " + path);
}

template <typename T>
ModelWeights<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw Error("format", "not a LEARCKPT file: " + path);
  ModelWeights<T> w;
  w.format_version = read_le<std::uint32_t>(in);
  if (w.format_version != 1)
    throw Error("format", "unsupported checkpoint version " +
                              std::to_string(w.format_version) + " in " + path);
  for (;;) {
    std::uint32_t name_len;
    {
      std::uint8_t buf[4];
      in.read(reinterpret_cast<char*>(buf), 4);
      if (in.gcount() == 0) break;  // clean end of file
      if (in.gcount() != 4) throw Error("format", "truncated checkpoint: " + path);
      name_len = std::uint32_t(buf[0]) | (std::uint32_t(buf[1]) << 8) |
                 (std::uint32_t(buf[2]) << 16) | (std::uint32_t(buf[3]) << 24);
    }
    if (name_len > (1u << 16)) throw Error("format", "implausible name length in " + path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t rank = read_le<std::uint32_t>(in);
    if (rank > 4) throw Error("format", "rank > 4 in checkpoint: " + path);
    Shape shape;
    shape.rank = static_cast<int>(rank);
    for (std::uint32_t i = 0; i < rank; ++i)
      shape.dim[i] = static_cast<std::int64_t>(read_le<std::uint64_t>(in));
    const std::int64_t count = shape.numel();
    std::vector<T> values(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i)
      values[static_cast<std::size_t>(i)] = static_cast<T>(read_le<float>(in));
    if (!in) throw Error("format", "truncated checkpoint record in " + path);
    w.add(name, shape, std::move(values));
  }
  return w;
}

template <typename T>
void adam_step(ModelWeights<T>& w, const std::map<std::string, std::vector<T>>& grads,
               AdamState<T>& state, T lr, T weight_decay) {
  if (lr <= T(0)) throw Error("optim", "learning rate must be positive");
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const std::int64_t t = state.step + 1;
  const T bias1 = static_cast<T>(1.0 - std::pow(beta1, static_cast<double>(t)));
  const T bias2 = static_cast<T>(1.0 - std::pow(beta2, static_cast<double>(t)));
  for (auto& [name, p] : w.params) {
    const auto git = grads.find(name);
    if (git == grads.end())
      throw Error("optim", "missing gradient for parameter: " + name);
    const auto& grad = git->second;
    if (grad.size() != p.values.size())
      throw Error("optim", "gradient size mismatch for parameter: " + name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(p.values.size(), T(0));
    if (v.empty()) v.assign(p.values.size(), T(0));
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const T gi = grad[i];
      m[i] = static_cast<T>(beta1) * m[i] + static_cast<T>(1.0 - beta1) * gi;
      v[i] = static_cast<T>(beta2) * v[i] + static_cast<T>(1.0 - beta2) * gi * gi;
      const T m_hat = m[i] / bias1;
      const T v_hat = v[i] / bias2;
      p.values[i] -= lr * (m_hat / (std::sqrt(v_hat) + static_cast<T>(eps)));
      if (weight_decay != T(0)) p.values[i] -= lr * weight_decay * p.values[i];
    }
  }
  state.step = t;
}

double one_cycle_lr(std::int64_t step, std::int64_t total_steps, double peak_lr) {
  if (total_steps < 1) total_steps = 1;
  const double floor_lr = peak_lr / 25.0;
  const double warm_end = 0.3 * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s < warm_end) {
    return floor_lr + (peak_lr - floor_lr) * (s / warm_end);
  }
  const double span = static_cast<double>(total_steps) - warm_end;
  const double frac = span > 0.0 ? (s - warm_end) / span : 1.0;
  const double c = 0.5 * (1.0 + std::cos(3.141592653589793238462643383279502884 *
                                         std::min(frac, 1.0)));
  return floor_lr + (peak_lr - floor_lr) * c;
}

template void save_checkpoint(const ModelWeights<float>&, const std::string&);
template void save_checkpoint(const ModelWeights<double>&, const std::string&);
template ModelWeights<float> load_checkpoint(const std::string&);
template ModelWeights<double> load_checkpoint(const std::string&);
template void adam_step(ModelWeights<float>&, const std::map<std::string, std::vector<float>>&,
                        AdamState<float>&, float, float);
template void adam_step(ModelWeights<double>&,
                        const std::map<std::string, std::vector<double>>&, AdamState<double>&,
                        double, double);

}  // namespace lear
