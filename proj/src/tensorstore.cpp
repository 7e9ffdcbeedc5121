#include "resjac/tensorstore.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

namespace resjac {

using nlohmann::json;

std::size_t dtype_size(DType dtype) { return dtype == DType::f32 ? 4 : 8; }

std::string to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

std::string to_string(TensorKind kind) {
  switch (kind) {
    case TensorKind::jacobian_mean: return "jacobian_mean";
    case TensorKind::jacobian_sample: return "jacobian_sample";
    case TensorKind::activations: return "activations";
  }
  return "?";
}

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void append_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T load_le(const char* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    bits |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<T>(bits);
}

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw ValidationError("malformed manifest: unknown dtype '" + s + "'");
}

TensorKind parse_kind(const std::string& s) {
  if (s == "jacobian_mean") return TensorKind::jacobian_mean;
  if (s == "jacobian_sample") return TensorKind::jacobian_sample;
  if (s == "activations") return TensorKind::activations;
  throw ValidationError("malformed manifest: unknown tensor kind '" + s + "'");
}

json manifest_to_json(const Manifest& m) {
  json index = json::array();
  for (const auto& t : m.tensor_index) {
    index.push_back({{"name", t.name},
                     {"kind", to_string(t.kind)},
                     {"layer", t.layer ? json(*t.layer) : json(nullptr)},
                     {"byte_offset", t.byte_offset},
                     {"byte_length", t.byte_length}});
  }
  return {{"model_id", m.model_id},
          {"checkpoint_id", m.checkpoint_id},
          {"d", m.d},
          {"L", m.L},
          {"S", m.S},
          {"n_samples", m.n_samples},
          {"dtype", to_string(m.dtype)},
          {"quantized", m.quantized},
          {"snapshot_labels", m.snapshot_labels},
          {"tensor_index", index}};
}

Manifest manifest_from_json(const json& j) {
  try {
    Manifest m;
    m.model_id = j.at("model_id").get<std::string>();
    m.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    m.d = j.at("d").get<int>();
    m.L = j.at("L").get<int>();
    m.S = j.at("S").get<int>();
    m.n_samples = j.at("n_samples").get<int>();
    m.dtype = parse_dtype(j.at("dtype").get<std::string>());
    m.quantized = j.value("quantized", false);
    if (j.contains("snapshot_labels")) m.snapshot_labels = j.at("snapshot_labels").get<std::vector<std::string>>();
    for (const auto& t : j.at("tensor_index")) {
      TensorEntry e;
      e.name = t.at("name").get<std::string>();
      e.kind = parse_kind(t.at("kind").get<std::string>());
      if (!t.at("layer").is_null()) e.layer = t.at("layer").get<int>();
      e.byte_offset = t.at("byte_offset").get<std::uint64_t>();
      e.byte_length = t.at("byte_length").get<std::uint64_t>();
      m.tensor_index.push_back(std::move(e));
    }
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
}

void check_dims(const Manifest& m) {
  if (m.d <= 0 || m.L <= 0 || m.S <= 0 || m.n_samples <= 0)
    throw ValidationError("manifest: d, L, S, n_samples must be positive");
}

void check_finite(const Matrix& a, const std::string& name, std::optional<int> layer) {
  // Row-major flat index, matching the on-disk layout.
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (!std::isfinite(a(i, j))) {
        std::ostringstream msg;
        msg << "non-finite value in " << name;
        if (layer) msg << " (layer " << *layer << ")";
        msg << " at flat index " << i * a.cols() + j;
        throw ValidationError(msg.str());
      }
}

void append_matrix(std::string& out, const Matrix& a, DType dtype, bool& quantized) {
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      double v = a(i, j);
      if (dtype == DType::f32) {
        float f = static_cast<float>(v);
        if (static_cast<double>(f) != v) quantized = true;
        append_le(out, f);
      } else {
        append_le(out, v);
      }
    }
}

double load_value(const char* p, DType dtype) {
  return dtype == DType::f32 ? static_cast<double>(load_le<float>(p)) : load_le<double>(p);
}

Matrix load_matrix(const char* p, int d, DType dtype) {
  Matrix a(d, d);
  const std::size_t sz = dtype_size(dtype);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = load_value(p + (static_cast<std::size_t>(i) * d + j) * sz, dtype);
  return a;
}

std::string frame(const Manifest& m, const std::string& data) {
  std::string header = manifest_to_json(m).dump();
  std::string out;
  out.reserve(16 + header.size() + data.size());
  out.append(kDumpMagic, 4);
  append_le(out, kDumpVersion);
  append_le(out, static_cast<std::uint64_t>(header.size()));
  out += header;
  out += data;
  return out;
}

std::string sample_name(int s, int layer) {
  return "jacobian_sample/" + std::to_string(s) + "/" + std::to_string(layer);
}

int parse_sample_index(const std::string& name) {
  // jacobian_sample/<s>/<layer>
  auto first = name.find('/');
  auto second = name.find('/', first + 1);
  if (first == std::string::npos || second == std::string::npos)
    throw ValidationError("malformed manifest: bad sample tensor name '" + name + "'");
  try {
    return std::stoi(name.substr(first + 1, second - first - 1));
  } catch (const std::exception&) {
    throw ValidationError("malformed manifest: bad sample tensor name '" + name + "'");
  }
}

}  // namespace

JacobianSet JacobianSet::from_means(std::vector<Matrix> means, std::string model_id, std::string checkpoint_id,
                                    int n_samples) {
  JacobianSet set;
  set.manifest.model_id = std::move(model_id);
  set.manifest.checkpoint_id = std::move(checkpoint_id);
  set.manifest.L = static_cast<int>(means.size());
  set.manifest.d = means.empty() ? 0 : static_cast<int>(means.front().rows());
  set.manifest.S = 2 * set.manifest.L;
  set.manifest.n_samples = n_samples;
  set.mean_jacobians = std::move(means);
  return set;
}

Matrix ActivationTensor::snapshot(int index) const {
  if (index < 0 || index >= S()) throw ValidationError("snapshot index " + std::to_string(index) + " out of range");
  Matrix out(n_samples(), d());
  for (int s = 0; s < n_samples(); ++s)
    for (int u = 0; u < d(); ++u) out(s, u) = at(s, index, u);
  return out;
}

ActivationTensor ActivationTensor::from_snapshots(const std::vector<Matrix>& snapshots, std::vector<std::string> labels,
                                                  std::string model_id, std::string checkpoint_id) {
  if (snapshots.empty()) throw ValidationError("no snapshots");
  ActivationTensor t;
  const int n = static_cast<int>(snapshots.front().rows());
  const int d = static_cast<int>(snapshots.front().cols());
  const int S = static_cast<int>(snapshots.size());
  t.manifest.model_id = std::move(model_id);
  t.manifest.checkpoint_id = std::move(checkpoint_id);
  t.manifest.d = d;
  t.manifest.S = S;
  t.manifest.L = std::max(1, S / 2);
  t.manifest.n_samples = n;
  t.manifest.snapshot_labels = std::move(labels);
  t.values.resize(static_cast<std::size_t>(n) * S * d);
  for (int k = 0; k < S; ++k) {
    if (snapshots[k].rows() != n || snapshots[k].cols() != d) throw ValidationError("shape mismatch between snapshots");
    for (int s = 0; s < n; ++s)
      for (int u = 0; u < d; ++u) t.values[(static_cast<std::size_t>(s) * S + k) * d + u] = snapshots[k](s, u);
  }
  return t;
}

void validate(const JacobianSet& set) {
  const Manifest& m = set.manifest;
  check_dims(m);
  if (static_cast<int>(set.mean_jacobians.size()) != m.L)
    throw ValidationError("shape mismatch: manifest declares L=" + std::to_string(m.L) + " but " +
                          std::to_string(set.mean_jacobians.size()) + " mean Jacobians given");
  auto check_shape = [&](const Matrix& a, const std::string& name) {
    if (a.rows() != m.d || a.cols() != m.d)
      throw ValidationError("shape mismatch: " + name + " is " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + ", manifest declares d=" + std::to_string(m.d));
  };
  for (int l = 0; l < m.L; ++l) {
    std::string name = "jacobian_mean/" + std::to_string(l);
    check_shape(set.mean_jacobians[l], name);
    check_finite(set.mean_jacobians[l], name, l);
  }
  if (set.sample_jacobians.empty()) return;
  if (static_cast<int>(set.sample_jacobians.size()) > m.n_samples)
    throw ValidationError("more sample Jacobians than n_samples");
  for (std::size_t s = 0; s < set.sample_jacobians.size(); ++s) {
    if (static_cast<int>(set.sample_jacobians[s].size()) != m.L)
      throw ValidationError("shape mismatch: sample " + std::to_string(s) + " does not hold L Jacobians");
    for (int l = 0; l < m.L; ++l) {
      std::string name = sample_name(static_cast<int>(s), l);
      check_shape(set.sample_jacobians[s][l], name);
      check_finite(set.sample_jacobians[s][l], name, l);
    }
  }
  // A partial reservoir cannot reproduce the mean; only a complete set is checked.
  if (static_cast<int>(set.sample_jacobians.size()) == m.n_samples) {
    for (int l = 0; l < m.L; ++l) {
      Matrix acc = Matrix::Zero(m.d, m.d);
      for (const auto& sample : set.sample_jacobians) acc += sample[l];
      acc /= static_cast<double>(m.n_samples);
      double ref = std::max(set.mean_jacobians[l].norm(), 1e-300);
      if ((acc - set.mean_jacobians[l]).norm() / ref > 1e-5)
        throw ValidationError("sample Jacobians do not average to the stored mean at layer " + std::to_string(l));
    }
  }
}

void validate(const ActivationTensor& t) {
  const Manifest& m = t.manifest;
  check_dims(m);
  const std::size_t expected = static_cast<std::size_t>(m.n_samples) * m.S * m.d;
  if (t.values.size() != expected)
    throw ValidationError("shape mismatch: activations hold " + std::to_string(t.values.size()) +
                          " values, manifest declares " + std::to_string(expected));
  if (!m.snapshot_labels.empty() && static_cast<int>(m.snapshot_labels.size()) != m.S)
    throw ValidationError("shape mismatch: snapshot_labels length differs from S");
  for (std::size_t i = 0; i < t.values.size(); ++i)
    if (!std::isfinite(t.values[i]))
      throw ValidationError("non-finite value in activations at flat index " + std::to_string(i));
}

std::string encode_dump(const JacobianSet& set) {
  validate(set);
  Manifest m = set.manifest;
  m.tensor_index.clear();
  m.quantized = false;
  const std::uint64_t len = static_cast<std::uint64_t>(m.d) * m.d * dtype_size(m.dtype);
  std::string data;
  data.reserve(len * (m.L * (1 + set.sample_jacobians.size())));
  for (int l = 0; l < m.L; ++l) {
    m.tensor_index.push_back({"jacobian_mean/" + std::to_string(l), TensorKind::jacobian_mean, l, data.size(), len});
    append_matrix(data, set.mean_jacobians[l], m.dtype, m.quantized);
  }
  for (std::size_t s = 0; s < set.sample_jacobians.size(); ++s)
    for (int l = 0; l < m.L; ++l) {
      m.tensor_index.push_back({sample_name(static_cast<int>(s), l), TensorKind::jacobian_sample, l, data.size(), len});
      append_matrix(data, set.sample_jacobians[s][l], m.dtype, m.quantized);
    }
  return frame(m, data);
}

std::string encode_dump(const ActivationTensor& t) {
  validate(t);
  Manifest m = t.manifest;
  m.tensor_index.clear();
  m.quantized = false;
  std::string data;
  data.reserve(t.values.size() * dtype_size(m.dtype));
  for (double v : t.values) {
    if (m.dtype == DType::f32) {
      float f = static_cast<float>(v);
      if (static_cast<double>(f) != v) m.quantized = true;
      append_le(data, f);
    } else {
      append_le(data, v);
    }
  }
  m.tensor_index.push_back({"activations", TensorKind::activations, std::nullopt, 0, data.size()});
  return frame(m, data);
}

Dump decode_dump(std::string_view bytes) {
  if (bytes.size() < 16) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kDumpMagic, 4) != 0) throw ValidationError("bad magic");
    throw ValidationError("truncated file");
  }
  if (std::memcmp(bytes.data(), kDumpMagic, 4) != 0) throw ValidationError("bad magic");
  const auto version = load_le<std::uint32_t>(bytes.data() + 4);
  if (version != kDumpVersion) throw ValidationError("unsupported version " + std::to_string(version));
  const auto header_len = load_le<std::uint64_t>(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw ValidationError("truncated file");

  json j;
  try {
    j = json::parse(bytes.substr(16, header_len));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  Manifest m = manifest_from_json(j);
  check_dims(m);

  const std::string_view data = bytes.substr(16 + header_len);
  const std::size_t sz = dtype_size(m.dtype);
  const std::uint64_t jac_len = static_cast<std::uint64_t>(m.d) * m.d * sz;
  const std::uint64_t act_len = static_cast<std::uint64_t>(m.n_samples) * m.S * m.d * sz;

  bool any_jacobian = false, any_activation = false;
  std::uint64_t data_end = 0;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (const auto& t : m.tensor_index) {
    if (t.kind == TensorKind::activations) {
      any_activation = true;
      if (t.byte_length != act_len) throw ValidationError("tensor " + t.name + ": byte_length does not match n_samples*S*d");
    } else {
      any_jacobian = true;
      if (t.byte_length != jac_len) throw ValidationError("tensor " + t.name + ": byte_length does not match d*d");
      if (!t.layer || *t.layer < 0 || *t.layer >= m.L) throw ValidationError("tensor " + t.name + ": layer out of range");
    }
    if (t.byte_offset > std::numeric_limits<std::uint64_t>::max() - t.byte_length)
      throw ValidationError("tensor " + t.name + ": offset overflow");
    spans.emplace_back(t.byte_offset, t.byte_offset + t.byte_length);
    data_end = std::max(data_end, t.byte_offset + t.byte_length);
  }
  if (any_jacobian && any_activation) throw ValidationError("dump mixes Jacobian and activation tensors");
  if (!any_jacobian && !any_activation) throw ValidationError("dump holds no tensors");
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i)
    if (spans[i].first < spans[i - 1].second) throw ValidationError("overlapping tensors in manifest");
  if (data_end > data.size()) throw ValidationError("truncated file");
  if (data_end < data.size()) throw ValidationError("trailing bytes after last tensor");

  if (any_activation) {
    if (m.tensor_index.size() != 1) throw ValidationError("activation dump must hold exactly one tensor");
    ActivationTensor t;
    t.manifest = m;
    const auto& e = m.tensor_index.front();
    const std::size_t count = static_cast<std::size_t>(m.n_samples) * m.S * m.d;
    t.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) t.values[i] = load_value(data.data() + e.byte_offset + i * sz, m.dtype);
    validate(t);
    return t;
  }

  JacobianSet set;
  set.manifest = m;
  set.mean_jacobians.resize(m.L);
  std::vector<bool> have_mean(m.L, false);
  std::map<std::pair<int, int>, Matrix> samples;
  int n_sample_sets = 0;
  for (const auto& e : m.tensor_index) {
    Matrix a = load_matrix(data.data() + e.byte_offset, m.d, m.dtype);
    check_finite(a, e.name, e.layer);
    if (e.kind == TensorKind::jacobian_mean) {
      if (have_mean[*e.layer]) throw ValidationError("duplicate mean Jacobian for layer " + std::to_string(*e.layer));
      have_mean[*e.layer] = true;
      set.mean_jacobians[*e.layer] = std::move(a);
    } else {
      int s = parse_sample_index(e.name);
      if (s < 0) throw ValidationError("negative sample index in " + e.name);
      if (!samples.emplace(std::make_pair(s, *e.layer), std::move(a)).second)
        throw ValidationError("duplicate sample tensor " + e.name);
      n_sample_sets = std::max(n_sample_sets, s + 1);
    }
  }
  for (int l = 0; l < m.L; ++l)
    if (!have_mean[l]) throw ValidationError("missing mean Jacobian for layer " + std::to_string(l));
  if (static_cast<std::size_t>(n_sample_sets) * m.L != samples.size())
    throw ValidationError("incomplete per-sample Jacobians");
  set.sample_jacobians.resize(n_sample_sets);
  for (auto& [key, a] : samples) {
    auto& row = set.sample_jacobians[key.first];
    if (row.empty()) row.resize(m.L);
    row[key.second] = std::move(a);
  }
  validate(set);
  return set;
}

void write_dump(const std::filesystem::path& path, const JacobianSet& set) { write_file(path, encode_dump(set)); }

void write_dump(const std::filesystem::path& path, const ActivationTensor& tensor) {
  write_file(path, encode_dump(tensor));
}

Dump read_dump(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("dump not found: " + path.string());
  return decode_dump(read_file(path));
}

JacobianSet read_jacobians(const std::filesystem::path& path) {
  Dump d = read_dump(path);
  if (auto* set = std::get_if<JacobianSet>(&d)) return std::move(*set);
  throw ValidationError(path.string() + " holds activations, expected Jacobians");
}

ActivationTensor read_activations(const std::filesystem::path& path) {
  Dump d = read_dump(path);
  if (auto* t = std::get_if<ActivationTensor>(&d)) return std::move(*t);
  throw ValidationError(path.string() + " holds Jacobians, expected activations");
}

}  // namespace resjac
