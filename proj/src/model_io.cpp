#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cpabaug/errors.hpp"
#include "cpabaug/genmodel.hpp"

namespace cpabaug {

using ojson = nlohmann::ordered_json;

namespace {

constexpr char kMagic[8] = {'G', 'M', 'O', 'D', 'E', 'L', '1', '\n'};
constexpr std::size_t kPrefix = 16;  // magic + u64 header length

static_assert(std::endian::native == std::endian::little, "model files are written in native little-endian order");

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t offset) {
  T v;
  std::memcpy(&v, in.data() + offset, sizeof(T));
  return v;
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32" || dtype == "i32") return 4;
  if (dtype == "f64") return 8;
  return 0;
}

ojson layer_json(const nn::LayerSpec& l) {
  if (l.kind == nn::LayerSpec::Kind::Dense) return {{"kind", "dense"}, {"in", l.in_c}, {"out", l.out_c}};
  return {{"kind", "conv3x3"}, {"in_c", l.in_c}, {"in_h", l.in_h}, {"in_w", l.in_w},
          {"out_c", l.out_c},  {"stride", l.stride}};
}

ojson header_for(const GenModel& m) {
  ojson h;
  h["format"] = kModelFormat;
  h["preset"] = preset_name(m.preset);
  h["patch_size"] = m.patch_size;
  h["latent_dim"] = m.latent_dim;
  h["theta_dim"] = m.theta_dim();
  h["activation"] = {{"kind", "leaky_relu"}, {"slope", nn::kLeakySlope}};
  h["tessellation"] = {{"nx", m.tess_config.nx}, {"ny", m.tess_config.ny}, {"cells", m.tess.cell_count()}};
  h["integration"] = {{"n_steps", m.integration.n_steps}, {"t_final", m.integration.t_final}};
  h["warp_convention"] = "backward: out(p) = in(p + u(p)); bilinear; border clamp; u in pixels";
  h["loss_conventions"] = {
      {"recon", "mean over pixels of squared intensity difference"},
      {"kl", "0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)"},
      {"reg", "root mean square displacement magnitude in pixels"},
      {"evaluate", "mean over pairs of the un-squared L2 norm summed over pixels"},
  };
  h["training"] = m.provenance;
  ojson enc = ojson::array(), dec = ojson::array();
  for (const auto& l : m.encoder.layers()) enc.push_back(layer_json(l));
  for (const auto& l : m.decoder.layers()) dec.push_back(layer_json(l));
  h["encoder_layers"] = std::move(enc);
  h["decoder_layers"] = std::move(dec);

  ojson arrays = ojson::array();
  const auto add = [&](const std::string& name, const char* dtype, std::vector<std::size_t> shape) {
    arrays.push_back({{"name", name}, {"dtype", dtype}, {"shape", std::move(shape)}});
  };
  const std::size_t nv = m.tess.vertices().size();
  add("tess.vertices", "f64", {nv, 2});
  add("tess.triangles", "i32", {static_cast<std::size_t>(m.tess.cell_count()), 3});
  add("tess.boundary", "i32", {nv});
  add("basis", "f64", {static_cast<std::size_t>(m.basis.B.rows()), static_cast<std::size_t>(m.basis.B.cols())});
  const auto add_net = [&](const char* prefix, const nn::Network& net) {
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
      const auto& l = net.layers()[i];
      const std::string base = std::string(prefix) + "." + std::to_string(i);
      if (l.kind == nn::LayerSpec::Kind::Dense) {
        add(base + ".weight", "f32", {static_cast<std::size_t>(l.out_c), static_cast<std::size_t>(l.in_c)});
      } else {
        add(base + ".weight", "f32",
            {static_cast<std::size_t>(l.out_c), static_cast<std::size_t>(l.in_c), 3, 3});
      }
      add(base + ".bias", "f32", {static_cast<std::size_t>(l.out_c)});
    }
  };
  add_net("encoder", m.encoder);
  add_net("decoder", m.decoder);
  h["arrays"] = std::move(arrays);
  return h;
}

}  // namespace

void round_params_to_f32(GenModel& model) {
  for (double& p : model.params) p = static_cast<double>(static_cast<float>(p));
}

std::vector<std::uint8_t> serialize_model(const GenModel& m) {
  const std::string header = header_for(m).dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put<std::uint64_t>(out, header.size());
  out.insert(out.end(), header.begin(), header.end());

  for (const auto& v : m.tess.vertices()) {
    put<double>(out, v.x());
    put<double>(out, v.y());
  }
  for (const auto& t : m.tess.triangles()) {
    for (int k : t) put<std::int32_t>(out, k);
  }
  for (bool b : m.tess.boundary_vertex_flags()) put<std::int32_t>(out, b ? 1 : 0);
  for (Eigen::Index r = 0; r < m.basis.B.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.basis.B.cols(); ++c) put<double>(out, m.basis.B(r, c));
  }
  // Layer weights then bias, encoder before decoder: the flat parameter order.
  for (double p : m.params) put<float>(out, static_cast<float>(p));
  return out;
}

GenModel deserialize_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kPrefix || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw SchemaError("model file: bad magic at byte offset 0 (expected GMODEL1)");
  }
  const auto header_len = get<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - kPrefix) {
    throw SchemaError("model file: header length " + std::to_string(header_len) + " at byte offset 8 exceeds file size");
  }
  ojson h;
  try {
    h = ojson::parse(bytes.begin() + kPrefix, bytes.begin() + static_cast<std::ptrdiff_t>(kPrefix + header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("model file: malformed JSON header at byte offset " + std::to_string(kPrefix + e.byte - 1));
  }

  GenModel m;
  std::size_t offset = kPrefix + header_len;
  try {
    if (h.at("format").get<std::string>() != kModelFormat) {
      throw SchemaError("model file: unsupported format '" + h.at("format").get<std::string>() +
                        "' in header at byte offset " + std::to_string(kPrefix));
    }
    m.preset = parse_preset(h.at("preset").get<std::string>());
    m.patch_size = h.at("patch_size").get<int>();
    m.latent_dim = h.at("latent_dim").get<int>();
    m.tess_config.nx = h.at("tessellation").at("nx").get<int>();
    m.tess_config.ny = h.at("tessellation").at("ny").get<int>();
    m.tess_config.validate();
    m.integration.n_steps = h.at("integration").at("n_steps").get<int>();
    m.integration.t_final = h.at("integration").at("t_final").get<double>();
    m.integration.validate();
    m.provenance = h.at("training");
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("model file: bad header field (header at byte offset " + std::to_string(kPrefix) +
                      "): " + e.what());
  } catch (const SchemaError&) {
    throw;
  } catch (const ValidationError& e) {
    throw SchemaError("model file: invalid header (byte offset " + std::to_string(kPrefix) + "): " + e.what());
  }

  const ojson& arrays = h.contains("arrays") ? h["arrays"] : ojson();
  if (!arrays.is_array()) throw SchemaError("model file: header has no array table (byte offset 16)");
  std::size_t next_array = 0;
  // Checks the next declared array and returns its element count.
  const auto expect = [&](const std::string& name, const std::string& dtype) -> std::size_t {
    if (next_array >= arrays.size()) {
      throw SchemaError("model file: array '" + name + "' missing from header (payload byte offset " +
                        std::to_string(offset) + ")");
    }
    const ojson& a = arrays[next_array++];
    if (a.value("name", "") != name || a.value("dtype", "") != dtype) {
      throw SchemaError("model file: expected array '" + name + "' (" + dtype + ") at byte offset " +
                        std::to_string(offset) + ", header declares '" + a.value("name", "?") + "'");
    }
    std::size_t count = 1;
    for (const auto& dim : a.at("shape")) count *= dim.get<std::size_t>();
    if (offset + count * dtype_size(dtype) > bytes.size()) {
      throw SchemaError("model file: array '" + name + "' truncated at byte offset " + std::to_string(offset));
    }
    return count;
  };

  const std::size_t nv2 = expect("tess.vertices", "f64");
  std::vector<Eigen::Vector2d> verts(nv2 / 2);
  for (auto& v : verts) {
    v.x() = get<double>(bytes, offset);
    v.y() = get<double>(bytes, offset + 8);
    offset += 16;
  }
  const std::size_t nt3 = expect("tess.triangles", "i32");
  std::vector<std::array<int, 3>> tris(nt3 / 3);
  for (auto& t : tris) {
    for (int& k : t) {
      k = get<std::int32_t>(bytes, offset);
      offset += 4;
    }
  }
  const std::size_t nb = expect("tess.boundary", "i32");
  std::vector<bool> boundary(nb);
  for (std::size_t i = 0; i < nb; ++i, offset += 4) boundary[i] = get<std::int32_t>(bytes, offset) != 0;
  const std::size_t tess_offset = offset;
  try {
    m.tess = Tessellation::from_parts(m.tess_config, std::move(verts), std::move(tris), std::move(boundary));
  } catch (const ValidationError& e) {
    throw SchemaError("model file: tessellation arrays before byte offset " + std::to_string(tess_offset) +
                      " are inconsistent: " + e.what());
  }

  const ojson& basis_decl = arrays.size() > next_array ? arrays[next_array] : ojson();
  const std::size_t nbasis = expect("basis", "f64");
  const auto rows = basis_decl.at("shape").at(0).get<Eigen::Index>();
  const auto cols = basis_decl.at("shape").at(1).get<Eigen::Index>();
  if (rows != 6 * m.tess.cell_count() || static_cast<std::size_t>(rows * cols) != nbasis || cols < 1) {
    throw SchemaError("model file: basis shape does not match the tessellation (byte offset " + std::to_string(offset) +
                      ")");
  }
  m.basis.B.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c, offset += 8) m.basis.B(r, c) = get<double>(bytes, offset);
  }
  if (h.value("theta_dim", -1) != m.theta_dim()) {
    throw SchemaError("model file: theta_dim in header disagrees with the basis (header at byte offset 16)");
  }

  try {
    build_networks(m);
  } catch (const ValidationError& e) {
    throw SchemaError(std::string("model file: invalid architecture (header at byte offset 16): ") + e.what());
  }
  std::size_t cursor = 0;
  const auto read_net = [&](const char* prefix, const nn::Network& net) {
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
      const auto& l = net.layers()[i];
      const std::string base = std::string(prefix) + "." + std::to_string(i);
      const std::size_t nw = expect(base + ".weight", "f32");
      if (nw != l.weight_count()) {
        throw SchemaError("model file: array '" + base + ".weight' has the wrong shape (byte offset " +
                          std::to_string(offset) + ")");
      }
      for (std::size_t k = 0; k < nw; ++k, offset += 4) m.params[cursor++] = get<float>(bytes, offset);
      const std::size_t nbias = expect(base + ".bias", "f32");
      if (nbias != static_cast<std::size_t>(l.out_c)) {
        throw SchemaError("model file: array '" + base + ".bias' has the wrong shape (byte offset " +
                          std::to_string(offset) + ")");
      }
      for (std::size_t k = 0; k < nbias; ++k, offset += 4) m.params[cursor++] = get<float>(bytes, offset);
    }
  };
  read_net("encoder", m.encoder);
  read_net("decoder", m.decoder);
  if (next_array != arrays.size()) {
    throw SchemaError("model file: header declares unexpected extra arrays (payload byte offset " +
                      std::to_string(offset) + ")");
  }
  if (offset != bytes.size()) {
    throw SchemaError("model file: " + std::to_string(bytes.size() - offset) + " trailing bytes at byte offset " +
                      std::to_string(offset));
  }
  return m;
}

void save_model(const std::filesystem::path& path, const GenModel& model) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

GenModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace cpabaug
