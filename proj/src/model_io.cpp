#include "deepmix/model_io.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>

#include "deepmix/errors.hpp"

namespace deepmix {

namespace {

constexpr const char* kMagic = "deepmix-model";
constexpr int kVersion = 1;

struct LayerHeader {
  std::size_t in = 0;
  std::size_t out = 0;
  std::string attr_key;
  std::string attr_value;
};

class PayloadWriter {
 public:
  void put(std::span<const double> values) {
    for (double v : values) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int b = 0; b < 4; ++b) bytes_.push_back(static_cast<char>((bits >> (8 * b)) & 0xffU));
    }
  }
  [[nodiscard]] const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class PayloadReader {
 public:
  explicit PayloadReader(std::string_view bytes) : bytes_(bytes) {}
  void get(std::span<double> out) {
    if (pos_ + 4 * out.size() > bytes_.size()) throw FormatError("model file: payload truncated");
    for (double& v : out) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= std::uint32_t{static_cast<unsigned char>(bytes_[pos_++])} << (8 * b);
      }
      v = static_cast<double>(std::bit_cast<float>(bits));
    }
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string model_kind_name(const AnyModel& model) {
  switch (model.index()) {
    case 0: return "dbn";
    case 1: return "cae";
    default: return "mlp";
  }
}

void check_meta(const ModelMeta& meta) {
  for (const auto& [key, value] : meta) {
    if (key.empty() || key.find_first_of("= \t\n") != std::string::npos ||
        value.find('\n') != std::string::npos) {
      throw ArgumentError("model metadata key/value not representable: '" + key + "'");
    }
  }
}

std::size_t parse_count(const std::string& token, const char* what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError(std::string("model file: bad ") + what + " '" + token + "'");
  }
}

}  // namespace

std::string serialize_model(const AnyModel& model, const ModelMeta& meta) {
  check_meta(meta);
  std::vector<LayerHeader> headers;
  PayloadWriter payload;

  if (const auto* dbn = std::get_if<Dbn>(&model)) {
    dbn->validate();
    for (const Rbm& l : dbn->layers) {
      headers.push_back({l.n_visible(), l.n_hidden(), "visible", to_string(l.visible_kind)});
      payload.put(l.weights.values());
      payload.put(l.hidden_bias);
      payload.put(l.visible_bias);
    }
  } else if (const auto* cae = std::get_if<StackedCae>(&model)) {
    cae->validate();
    for (const Cae& l : cae->layers) {
      headers.push_back({l.n_input(), l.n_hidden(), "alpha", fmt::format("{}", l.alpha)});
      payload.put(l.weights.values());
      payload.put(l.hidden_bias);
      payload.put(l.visible_bias);
    }
  } else {
    const auto& mlp = std::get<Mlp>(model);
    auto add = [&](const DenseLayer& l, const char* role) {
      headers.push_back({l.weights.cols(), l.weights.rows(), "role", role});
      payload.put(l.weights.values());
      payload.put(l.bias);
    };
    for (const DenseLayer& l : mlp.hidden) add(l, "hidden");
    add(mlp.output, "output");
  }

  std::string out = fmt::format("{} {}\nkind {}\nlayers {}\n", kMagic, kVersion,
                                model_kind_name(model), headers.size());
  for (std::size_t i = 0; i < headers.size(); ++i) {
    const auto& h = headers[i];
    out += fmt::format("layer {} {} {} {}={}\n", i, h.in, h.out, h.attr_key, h.attr_value);
  }
  for (const auto& [key, value] : meta) out += fmt::format("meta {}={}\n", key, value);
  out += fmt::format("payload f32le {}\nend\n", payload.bytes().size() / 4);
  out += payload.bytes();
  return out;
}

ModelFile deserialize_model(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw FormatError("model file: truncated header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  auto tokens = [](const std::string& line) {
    std::istringstream is(line);
    return std::vector<std::string>(std::istream_iterator<std::string>(is), {});
  };

  auto first = tokens(next_line());
  if (first.size() != 2 || first[0] != kMagic) throw FormatError("model file: missing magic line");
  if (first[1] != std::to_string(kVersion)) {
    throw FormatError("model file: unsupported version " + first[1]);
  }
  auto kind_line = tokens(next_line());
  if (kind_line.size() != 2 || kind_line[0] != "kind") throw FormatError("model file: missing kind");
  const std::string kind = kind_line[1];
  if (kind != "dbn" && kind != "cae" && kind != "mlp") {
    throw FormatError("model file: unknown kind '" + kind + "'");
  }
  auto layers_line = tokens(next_line());
  if (layers_line.size() != 2 || layers_line[0] != "layers") {
    throw FormatError("model file: missing layer count");
  }
  const std::size_t n_layers = parse_count(layers_line[1], "layer count");

  std::vector<LayerHeader> headers;
  std::size_t expected_floats = 0;
  for (std::size_t i = 0; i < n_layers; ++i) {
    auto t = tokens(next_line());
    if (t.size() != 5 || t[0] != "layer" || parse_count(t[1], "layer index") != i) {
      throw FormatError("model file: bad layer line " + std::to_string(i));
    }
    LayerHeader h{parse_count(t[2], "layer input"), parse_count(t[3], "layer output"), {}, {}};
    const auto eq = t[4].find('=');
    if (eq == std::string::npos) throw FormatError("model file: bad layer attribute");
    h.attr_key = t[4].substr(0, eq);
    h.attr_value = t[4].substr(eq + 1);
    expected_floats += h.in * h.out + h.out + (kind == "mlp" ? 0 : h.in);
    headers.push_back(std::move(h));
  }

  ModelFile file;
  std::string line = next_line();
  while (line.rfind("meta ", 0) == 0) {
    const std::string entry = line.substr(5);
    const auto eq = entry.find('=');
    if (eq == std::string::npos) throw FormatError("model file: bad meta line");
    file.meta[entry.substr(0, eq)] = entry.substr(eq + 1);
    line = next_line();
  }
  auto payload_line = tokens(line);
  if (payload_line.size() != 3 || payload_line[0] != "payload" || payload_line[1] != "f32le") {
    throw FormatError("model file: missing payload line");
  }
  const std::size_t declared = parse_count(payload_line[2], "payload size");
  if (declared != expected_floats) {
    throw FormatError("model file: payload declares " + std::to_string(declared) +
                      " floats but layer shapes need " + std::to_string(expected_floats));
  }
  if (next_line() != "end") throw FormatError("model file: missing end marker");
  if (bytes.size() - pos != 4 * declared) {
    throw FormatError("model file: payload is " + std::to_string(bytes.size() - pos) +
                      " bytes, header declares " + std::to_string(4 * declared));
  }

  PayloadReader reader(std::string_view(bytes).substr(pos));
  auto expect_attr = [&](const LayerHeader& h, const char* key) {
    if (h.attr_key != key) throw FormatError(std::string("model file: expected attribute ") + key);
  };
  if (kind == "dbn") {
    Dbn d;
    for (const auto& h : headers) {
      expect_attr(h, "visible");
      Rbm l = Rbm::zeros(h.in, h.out, parse_visible_kind(h.attr_value));
      reader.get(l.weights.values());
      reader.get(l.hidden_bias);
      reader.get(l.visible_bias);
      d.layers.push_back(std::move(l));
    }
    d.validate();
    file.model = std::move(d);
  } else if (kind == "cae") {
    StackedCae s;
    for (const auto& h : headers) {
      expect_attr(h, "alpha");
      double alpha = 0.0;
      try {
        alpha = std::stod(h.attr_value);
      } catch (const std::exception&) {
        throw FormatError("model file: bad alpha '" + h.attr_value + "'");
      }
      Cae l = Cae::zeros(h.in, h.out, alpha);
      reader.get(l.weights.values());
      reader.get(l.hidden_bias);
      reader.get(l.visible_bias);
      s.layers.push_back(std::move(l));
    }
    s.validate();
    file.model = std::move(s);
  } else {
    Mlp mlp;
    for (std::size_t i = 0; i < headers.size(); ++i) {
      const auto& h = headers[i];
      expect_attr(h, "role");
      const bool last = i + 1 == headers.size();
      if (h.attr_value != (last ? "output" : "hidden")) {
        throw FormatError("model file: mlp layer roles out of order");
      }
      DenseLayer l{Matrix(h.out, h.in), Vector(h.out, 0.0)};
      reader.get(l.weights.values());
      reader.get(l.bias);
      if (last) {
        mlp.output = std::move(l);
      } else {
        mlp.hidden.push_back(std::move(l));
      }
    }
    if (headers.empty()) throw FormatError("model file: mlp without layers");
    file.model = std::move(mlp);
  }
  return file;
}

void save_model(const std::filesystem::path& path, const AnyModel& model, const ModelMeta& meta) {
  const std::string bytes = serialize_model(model, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_model(bytes);
}

}  // namespace deepmix
