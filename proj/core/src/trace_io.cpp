#include "steersig/trace_io.hpp"

#include <bit>
#include <cstring>

#include <nlohmann/json.hpp>

#include "steersig/checkpoint.hpp"
#include "steersig/error.hpp"

namespace steersig {

static_assert(std::endian::native == std::endian::little, "trace payloads assume a little-endian host");

namespace {

struct Dims {
  std::size_t layers = 0, d = 0, heads = 0, vocab = 0;
};

Dims dims_of(const GenerationTrace& trace) {
  if (trace.steps.empty()) throw InvalidArgument("trace has no steps");
  const auto& s = trace.steps.front();
  Dims dims;
  dims.layers = s.attention.size();
  dims.d = s.residual_pre.empty() ? 0 : s.residual_pre.front().size();
  dims.heads = dims.layers == 0 ? 0 : s.attention.front().size();
  dims.vocab = s.logits.size();
  return dims;
}

void put(std::string& out, std::span<const double> v) {
  out.append(reinterpret_cast<const char*>(v.data()), v.size_bytes());
}

class Reader {
 public:
  explicit Reader(std::string_view payload) : payload_(payload) {}

  std::vector<double> take(std::size_t n) {
    if ((payload_.size() - pos_) / sizeof(double) < n) throw FormatError("trace payload truncated");
    std::vector<double> v(n);
    std::memcpy(v.data(), payload_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  bool done() const { return pos_ == payload_.size(); }

 private:
  std::string_view payload_;
  std::size_t pos_ = 0;
};

void check_len(const std::vector<double>& v, std::size_t n, const char* what) {
  if (v.size() != n) throw InvalidArgument(std::string("inconsistent ") + what + " length in trace");
}

GenerationTrace load_trace_impl(std::string_view bytes) {
  auto [header, payload] = decode_container(kTraceMagic, bytes);
  if (header.value("format", std::string{}) != "steersig-trace" || header.value("version", 0) != 1) {
    throw FormatError("not a version 1 steersig trace");
  }
  GenerationTrace trace;
  trace.prompt = header.at("prompt").get<std::vector<TokenId>>();
  trace.generated = header.at("generated").get<std::vector<TokenId>>();
  trace.policy = header.at("policy").get<DecodePolicy>();
  Dims dims;
  dims.layers = header.at("n_layers").get<std::size_t>();
  dims.d = header.at("d_model").get<std::size_t>();
  dims.heads = header.at("n_heads").get<std::size_t>();
  dims.vocab = header.at("vocab_size").get<std::size_t>();
  const auto steps = header.at("steps").get<std::size_t>();
  if (steps != trace.generated.size() || steps == 0) throw FormatError("step count does not match generated tokens");

  Reader r(payload);
  for (std::size_t t = 1; t <= steps; ++t) {
    StepTrace s;
    s.step = t;
    const std::size_t ctx = trace.prompt.size() + t - 1;
    for (std::size_t l = 0; l <= dims.layers; ++l) s.residual_pre.push_back(r.take(dims.d));
    for (std::size_t l = 0; l <= dims.layers; ++l) s.residual_post.push_back(r.take(dims.d));
    for (std::size_t l = 0; l < dims.layers; ++l) s.contribution.push_back(r.take(dims.d));
    s.attention.resize(dims.layers);
    for (std::size_t l = 0; l < dims.layers; ++l) {
      for (std::size_t h = 0; h < dims.heads; ++h) s.attention[l].push_back(r.take(ctx));
    }
    s.logits = r.take(dims.vocab);
    trace.steps.push_back(std::move(s));
  }
  if (!r.done()) throw FormatError("trailing bytes after trace payload");
  return trace;
}

}  // namespace

std::string save_trace(const GenerationTrace& trace) {
  const auto dims = dims_of(trace);
  if (trace.generated.size() != trace.steps.size()) throw InvalidArgument("generated/steps size mismatch");
  std::string payload;
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const auto& s = trace.steps[i];
    const std::size_t ctx = trace.prompt.size() + i;
    if (s.residual_pre.size() != dims.layers + 1 || s.residual_post.size() != dims.layers + 1 ||
        s.contribution.size() != dims.layers || s.attention.size() != dims.layers) {
      throw InvalidArgument("inconsistent layer count in trace");
    }
    for (const auto& v : s.residual_pre) check_len(v, dims.d, "residual"), put(payload, v);
    for (const auto& v : s.residual_post) check_len(v, dims.d, "residual"), put(payload, v);
    for (const auto& v : s.contribution) check_len(v, dims.d, "contribution"), put(payload, v);
    for (const auto& layer : s.attention) {
      if (layer.size() != dims.heads) throw InvalidArgument("inconsistent head count in trace");
      for (const auto& row : layer) check_len(row, ctx, "attention"), put(payload, row);
    }
    check_len(s.logits, dims.vocab, "logits");
    put(payload, s.logits);
  }
  const nlohmann::json header{{"format", "steersig-trace"}, {"version", 1},
                              {"prompt", trace.prompt},     {"generated", trace.generated},
                              {"policy", trace.policy},     {"n_layers", dims.layers},
                              {"d_model", dims.d},          {"n_heads", dims.heads},
                              {"vocab_size", dims.vocab},   {"steps", trace.steps.size()}};
  return encode_container(kTraceMagic, header, std::as_bytes(std::span(payload.data(), payload.size())));
}

GenerationTrace load_trace(std::string_view bytes) {
  try {
    return load_trace_impl(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("trace header: ") + e.what());
  }
}

void save_trace_file(const GenerationTrace& trace, const std::filesystem::path& path) {
  write_file_atomic(path, save_trace(trace));
}

GenerationTrace load_trace_file(const std::filesystem::path& path) { return load_trace(read_file(path)); }

}  // namespace steersig
