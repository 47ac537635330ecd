#include "ddvkit/serialize.hpp"

#include <cmath>

#include "ddvkit/container.hpp"
#include "ddvkit/error.hpp"

namespace ddv {

using nlohmann::json;

namespace {

json layer_header(const Layer& l) {
  json j{{"kind", to_string(l.kind)}};
  switch (l.kind) {
    case LayerKind::dense:
      j["in_features"] = l.in_features;
      j["out_features"] = l.out_features;
      break;
    case LayerKind::conv2d:
      j["in_channels"] = l.in_channels;
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::maxpool: j["pool"] = l.pool; break;
    default: break;
  }
  if (l.quant) j["quant"] = {{"scale", l.quant->scale}, {"zero_point", l.quant->zero_point}};
  return j;
}

Layer layer_from_header(const json& j) {
  const LayerKind kind = layer_kind_from_string(j.at("kind").get<std::string>());
  switch (kind) {
    case LayerKind::dense:
      return dense_layer(j.at("in_features").get<std::size_t>(),
                         j.at("out_features").get<std::size_t>());
    case LayerKind::conv2d:
      return conv2d_layer(j.at("in_channels").get<std::size_t>(),
                          j.at("out_channels").get<std::size_t>(),
                          j.at("kernel").get<std::size_t>(), j.at("stride").get<std::size_t>(),
                          j.at("padding").get<std::size_t>());
    case LayerKind::relu: return relu_layer();
    case LayerKind::maxpool: return maxpool_layer(j.at("pool").get<std::size_t>());
    case LayerKind::softmax: return softmax_layer();
  }
  throw UnsupportedOperation("unsupported layer kind");
}

}  // namespace

std::string encode_model(const Model& model) {
  Container c;
  json layers = json::array();
  for (const Layer& l : model.layers()) {
    layers.push_back(layer_header(l));
    if (l.quant) {
      // Quantized weights are stored as their int8 codes; floats hold them exactly.
      for (auto code : l.quant->codes) c.blob.push_back(static_cast<float>(code));
    } else {
      c.blob.insert(c.blob.end(), l.weights.data().begin(), l.weights.data().end());
    }
    c.blob.insert(c.blob.end(), l.bias.data().begin(), l.bias.data().end());
  }
  c.header = json{{"format", kModelFormat},
                  {"id", model.id()},
                  {"input_shape", model.input_shape()},
                  {"output_dim", model.output_dim()},
                  {"access", to_string(model.access())},
                  {"lineage", model.lineage()},
                  {"layers", std::move(layers)}};
  return encode_container(c);
}

Model decode_model(std::string_view bytes) {
  Container c = decode_container(bytes);
  const json& h = c.header;
  const std::size_t header_end = bytes.find('\n');
  try {
    if (h.value("format", std::string{}) != kModelFormat) {
      throw ParseError("not a model file (format '" + h.value("format", std::string{}) + "')", 0);
    }
    std::vector<Layer> layers;
    std::size_t offset = 0;
    auto take = [&](std::span<float> dst) {
      if (offset + dst.size() > c.blob.size()) {
        throw ParseError("weight blob shorter than layer specs require",
                         header_end + 9 + c.blob.size() * sizeof(float));
      }
      std::copy_n(c.blob.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
      offset += dst.size();
    };
    for (const json& lj : h.at("layers")) {
      Layer l = layer_from_header(lj);
      take(l.weights.data());
      if (lj.contains("quant")) {
        QuantParams q;
        q.scale = lj["quant"].at("scale").get<double>();
        q.zero_point = lj["quant"].at("zero_point").get<std::int32_t>();
        q.codes.reserve(l.weights.size());
        for (float& w : l.weights.data()) {
          if (w < -128.0f || w > 127.0f || w != std::floor(w)) {
            throw ParseError("quantized code out of int8 range", header_end + 9 + offset * 4);
          }
          q.codes.push_back(static_cast<std::int8_t>(w));
          w = q.dequantize(q.codes.back());
        }
        l.quant = std::move(q);
      }
      take(l.bias.data());
      layers.push_back(std::move(l));
    }
    if (offset != c.blob.size()) {
      throw ParseError("weight blob longer than layer specs require", header_end + 9 + offset * 4);
    }
    Model m(h.at("id").get<std::string>(), h.at("input_shape").get<Shape>(), std::move(layers),
            access_from_string(h.value("access", std::string("whitebox"))));
    if (m.output_dim() != h.at("output_dim").get<std::size_t>()) {
      throw ParseError("declared output_dim does not match layers", 0);
    }
    m.set_lineage(h.value("lineage", std::vector<LineageRecord>{}));
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid model header: ") + e.what(), 0);
  }
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_file(path, encode_model(model));
}

Model load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

}  // namespace ddv
