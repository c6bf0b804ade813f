#include "layerdag/io.hpp"

#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace layerdag {

using nlohmann::json;

void atomic_write(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

Dag parse_record(const json& j, int line) {
  if (!j.is_object()) throw DataError(line, "record is not an object");
  for (const auto& [key, _] : j.items())
    if (key != "n" && key != "attrs" && key != "edges" && key != "label")
      throw DataError(line, "unknown key: " + key);
  if (!j.contains("n") || !j["n"].is_number_integer())
    throw DataError(line, "missing or non-integer \"n\"");
  Dag d;
  d.num_nodes = j["n"].get<int>();
  if (d.num_nodes < 0) throw DataError(line, "negative node count");
  if (!j.contains("attrs") || !j["attrs"].is_array())
    throw DataError(line, "missing or non-array \"attrs\"");
  for (const auto& row : j["attrs"]) {
    if (!row.is_array()) throw DataError(line, "attrs row is not an array");
    std::vector<int> vals;
    for (const auto& v : row) {
      if (!v.is_number_integer() || v.get<int>() < 0)
        throw DataError(line, "attribute values must be nonnegative integers");
      vals.push_back(v.get<int>());
    }
    d.attrs.push_back(std::move(vals));
  }
  if (static_cast<int>(d.attrs.size()) != d.num_nodes)
    throw DataError(line, "attrs length does not match \"n\"");
  if (!j.contains("edges") || !j["edges"].is_array())
    throw DataError(line, "missing or non-array \"edges\"");
  for (const auto& e : j["edges"]) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() ||
        !e[1].is_number_integer())
      throw DataError(line, "edges must be [u, v] integer pairs");
    d.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
  }
  if (j.contains("label")) {
    if (!j["label"].is_number())
      throw DataError(line, "label must be a number");
    d.label = j["label"].get<double>();
  }
  if (auto err = validate_dag(d)) throw DataError(line, err->message);
  // The layerwise partition also certifies the predecessor property (each
  // non-source node reachable from layer l-1); surfaced with the line number.
  try {
    LayerPartition part = layer_partition(d);
    for (size_t l = 1; l < part.layers.size(); ++l)
      if (part.edge_slices[l - 1].empty())
        throw DataError(line, "layer without incoming edges");
  } catch (const std::invalid_argument& e) {
    throw DataError(line, e.what());
  }
  return d;
}

}  // namespace

std::vector<Dag> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::vector<Dag> out;
  std::string lineStr;
  int line = 0;
  while (std::getline(in, lineStr)) {
    ++line;
    if (lineStr.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(lineStr);
    } catch (const json::parse_error& e) {
      throw DataError(line, std::string("parse error: ") + e.what());
    }
    out.push_back(parse_record(j, line));
  }
  return out;
}

void save_dataset(const std::vector<Dag>& graphs, const std::string& path) {
  std::ostringstream out;
  for (const Dag& g : graphs) {
    Dag d = g;
    canonicalize_edges(d.edges);
    json j;
    j["n"] = d.num_nodes;
    j["attrs"] = d.attrs;
    json edges = json::array();
    for (const auto& [u, v] : d.edges) edges.push_back({u, v});
    j["edges"] = std::move(edges);
    if (d.label) j["label"] = *d.label;
    out << j.dump() << '\n';
  }
  atomic_write(path, out.str());
}

namespace {

constexpr uint32_t kCheckpointVersion = 1;

void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const std::string& s, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const ModelParams& p, const std::string& path) {
  json meta;
  meta["arch"] = {{"hidden_dim", p.arch.hidden_dim},
                  {"mpnn_layers", p.arch.mpnn_layers},
                  {"attn_blocks", p.arch.attn_blocks},
                  {"attn_heads", p.arch.attn_heads},
                  {"embed_dim", p.arch.embed_dim},
                  {"shared_encoder", p.arch.shared_encoder}};
  meta["channel_sizes"] = p.channel_sizes;
  meta["n_max"] = p.n_max;
  meta["l_max"] = p.l_max;
  meta["max_nodes"] = p.max_nodes;
  meta["d_in"] = p.d_in;
  meta["marginals"] = p.marginals;
  meta["conditional"] = p.conditional;
  meta["label_log_min"] = p.label_log_min;
  meta["label_log_max"] = p.label_log_max;
  meta["t_train"] = p.t_train;
  meta["s_offset"] = p.s_offset;
  json dir = json::array();
  int64_t offset = 0;
  for (size_t i = 0; i < p.params.count(); ++i) {
    const Tensor& t = p.params.tensor_at(i);
    dir.push_back({{"name", p.params.name_at(i)},
                   {"shape", t.shape},
                   {"offset", offset}});
    offset += t.size();
  }
  meta["tensors"] = std::move(dir);

  std::string meta_str = meta.dump();
  std::string out = "LDAG";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<uint32_t>(meta_str.size()));
  out += meta_str;
  for (size_t i = 0; i < p.params.count(); ++i)
    for (double v : p.params.tensor_at(i).data) {
      float f = static_cast<float>(v);
      char buf[4];
      std::memcpy(buf, &f, 4);
      out.append(buf, 4);
    }
  atomic_write(path, out);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string buf = ss.str();
  if (buf.size() < 12 || buf.compare(0, 4, "LDAG") != 0)
    throw CorruptFile("checkpoint: bad magic bytes");
  uint32_t version = get_u32(buf, 4);
  if (version != kCheckpointVersion)
    throw VersionMismatch("checkpoint format version " +
                          std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  uint32_t meta_len = get_u32(buf, 8);
  if (buf.size() < 12 + static_cast<size_t>(meta_len))
    throw CorruptFile("checkpoint: truncated metadata");
  json meta;
  try {
    meta = json::parse(buf.substr(12, meta_len));
  } catch (const json::parse_error& e) {
    throw CorruptFile(std::string("checkpoint: metadata parse error: ") +
                      e.what());
  }

  ModelParams p;
  try {
    const json& a = meta.at("arch");
    p.arch.hidden_dim = a.at("hidden_dim").get<int>();
    p.arch.mpnn_layers = a.at("mpnn_layers").get<int>();
    p.arch.attn_blocks = a.at("attn_blocks").get<int>();
    p.arch.attn_heads = a.at("attn_heads").get<int>();
    p.arch.embed_dim = a.at("embed_dim").get<int>();
    p.arch.shared_encoder = a.at("shared_encoder").get<bool>();
    p.channel_sizes = meta.at("channel_sizes").get<std::vector<int>>();
    p.n_max = meta.at("n_max").get<int>();
    p.l_max = meta.at("l_max").get<int>();
    p.max_nodes = meta.at("max_nodes").get<int>();
    p.d_in = meta.at("d_in").get<double>();
    p.marginals = meta.at("marginals").get<std::vector<std::vector<double>>>();
    p.conditional = meta.at("conditional").get<bool>();
    p.label_log_min = meta.at("label_log_min").get<double>();
    p.label_log_max = meta.at("label_log_max").get<double>();
    p.t_train = meta.at("t_train").get<int>();
    p.s_offset = meta.at("s_offset").get<double>();

    size_t payload_start = 12 + meta_len;
    size_t payload_floats = (buf.size() - payload_start) / 4;
    if ((buf.size() - payload_start) % 4 != 0)
      throw CorruptFile("checkpoint: payload not a multiple of 4 bytes");
    int64_t expected = 0;
    for (const json& e : meta.at("tensors")) {
      std::vector<int> shape = e.at("shape").get<std::vector<int>>();
      int64_t offset = e.at("offset").get<int64_t>();
      if (offset != expected)
        throw CorruptFile("checkpoint: inconsistent tensor offset for " +
                          e.at("name").get<std::string>());
      Tensor t(shape);
      if (offset + t.size() > static_cast<int64_t>(payload_floats))
        throw CorruptFile("checkpoint: truncated payload");
      for (int64_t j = 0; j < t.size(); ++j) {
        float f;
        std::memcpy(&f, buf.data() + payload_start + 4 * (offset + j), 4);
        t.data[j] = static_cast<double>(f);
      }
      p.params.add(e.at("name").get<std::string>(), std::move(t));
      expected += p.params.tensor_at(p.params.count() - 1).size();
    }
    if (expected != static_cast<int64_t>(payload_floats))
      throw CorruptFile("checkpoint: payload size does not match directory");
  } catch (const json::exception& e) {
    throw CorruptFile(std::string("checkpoint: bad metadata: ") + e.what());
  }
  return p;
}

namespace {

int parse_int(const std::string& k, const std::string& v) {
  try {
    size_t pos = 0;
    int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError("config key " + k + ": bad integer \"" + v + "\"");
  }
}

double parse_real(const std::string& k, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError("config key " + k + ": bad number \"" + v + "\"");
  }
}

bool parse_bool(const std::string& k, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + k + ": bad boolean \"" + v + "\"");
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string lineStr;
  while (std::getline(in, lineStr)) {
    std::string s = trim(lineStr);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line without '=': " + s);
    std::string key = trim(s.substr(0, eq));
    std::string val = trim(s.substr(eq + 1));
    if (key == "hidden_dim") c.hidden_dim = parse_int(key, val);
    else if (key == "mpnn_layers") c.mpnn_layers = parse_int(key, val);
    else if (key == "attn_blocks") c.attn_blocks = parse_int(key, val);
    else if (key == "attn_heads") c.attn_heads = parse_int(key, val);
    else if (key == "t_train") c.t_train = parse_int(key, val);
    else if (key == "t_min") c.t_min = parse_int(key, val);
    else if (key == "t_max") c.t_max = parse_int(key, val);
    else if (key == "lr") c.lr = parse_real(key, val);
    else if (key == "beta1") c.beta1 = parse_real(key, val);
    else if (key == "beta2") c.beta2 = parse_real(key, val);
    else if (key == "batch_size") c.batch_size = parse_int(key, val);
    else if (key == "epochs") c.epochs = parse_int(key, val);
    else if (key == "patience") c.patience = parse_int(key, val);
    else if (key == "seed")
      c.seed = static_cast<uint64_t>(parse_real(key, val));
    else if (key == "conditional") c.conditional = parse_bool(key, val);
    else if (key == "s_offset") c.s_offset = parse_real(key, val);
    else if (key == "shared_encoder")
      c.shared_encoder = parse_bool(key, val);
    else if (key == "loss_weights") {
      std::istringstream ws(val);
      std::string part;
      std::vector<double> w;
      while (std::getline(ws, part, ','))
        w.push_back(parse_real(key, trim(part)));
      if (w.size() != 3)
        throw ConfigError("loss_weights needs three comma-separated values");
      c.w_size = w[0];
      c.w_node = w[1];
      c.w_edge = w[2];
    } else {
      throw ConfigError("unknown config key: " + key);
    }
  }
  return c;
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config_text(ss.str());
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream out;
  for (size_t i = 0; i < header.size(); ++i)
    out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw std::invalid_argument("write_csv: row width mismatch");
    for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
  atomic_write(path, out.str());
}

}  // namespace layerdag
