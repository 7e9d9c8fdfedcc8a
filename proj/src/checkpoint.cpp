#include "diffpad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <utility>

#include "diffpad/error.hpp"
#include "diffpad/io.hpp"

namespace diffpad {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'P', 'A', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr std::size_t kPrefix = sizeof(kMagic) + 4 + 8;

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(std::string_view in, std::size_t pos) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorCode::kBadCheckpoint, msg); }

struct Entry {
  std::string name;
  const Tensor<float>* value;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<Entry> entries;
  for (const auto& a : ckpt.params.arrays()) entries.push_back({a.name, &a.value});
  if (ckpt.optimizer) {
    const AdamState& st = *ckpt.optimizer;
    if (!st.m.empty() && (st.m.size() != ckpt.params.size() || st.v.size() != ckpt.params.size())) {
      bad("optimizer state does not match parameter count");
    }
    for (std::size_t i = 0; i < st.m.size(); ++i)
      entries.push_back({"adam.m/" + ckpt.params[i].name, &st.m[i]});
    for (std::size_t i = 0; i < st.v.size(); ++i)
      entries.push_back({"adam.v/" + ckpt.params[i].name, &st.v[i]});
  }

  json arrays = json::array();
  std::uint64_t offset = 0;
  for (const Entry& e : entries) {
    const Tensor<float>& t = *e.value;
    arrays.push_back({{"name", e.name},
                      {"shape", {t.c, t.n, t.h, t.w}},
                      {"offset", offset},
                      {"count", t.size()}});
    offset += 4 * t.size();
  }
  json header = {{"kind", ckpt.kind},
                 {"config", ckpt.config},
                 {"epoch", ckpt.epoch},
                 {"meta", ckpt.meta},
                 {"arrays", std::move(arrays)}};
  if (ckpt.optimizer) header["optimizer"] = {{"step", ckpt.optimizer->step}};
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const Entry& e : entries) {
    for (float f : e.value->data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kPrefix || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    bad("not a checkpoint (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) bad("unsupported format version " + std::to_string(version));
  const auto header_len = get_le<std::uint64_t>(bytes, 12);
  if (header_len > bytes.size() - kPrefix) bad("truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(kPrefix, header_len));
  } catch (const json::exception& e) {
    bad(std::string("header: ") + e.what());
  }
  const std::string_view payload = bytes.substr(kPrefix + header_len);

  Checkpoint ckpt;
  std::vector<NamedArray> m, v;
  try {
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.config = header.at("config");
    ckpt.meta = header.value("meta", json::object());
    ckpt.epoch = header.at("epoch").get<int>();
    for (const json& a : header.at("arrays")) {
      const auto shape = a.at("shape").get<std::vector<int>>();
      if (shape.size() != 4) bad("array shape must have 4 dims");
      Tensor<float> t(shape[0], shape[1], shape[2], shape[3]);
      const auto off = a.at("offset").get<std::uint64_t>();
      const auto count = a.at("count").get<std::uint64_t>();
      if (count != t.size()) bad("array count does not match shape");
      if (off > payload.size() || 4 * count > payload.size() - off) bad("array past end of payload");
      for (std::size_t i = 0; i < t.size(); ++i) {
        t.data[i] = std::bit_cast<float>(get_le<std::uint32_t>(payload, off + 4 * i));
      }
      std::string name = a.at("name").get<std::string>();
      if (name.starts_with("adam.m/")) {
        m.push_back({name.substr(7), std::move(t)});
      } else if (name.starts_with("adam.v/")) {
        v.push_back({name.substr(7), std::move(t)});
      } else {
        ckpt.params.add(std::move(name), std::move(t));
      }
    }
    if (header.contains("optimizer")) {
      AdamState st;
      st.step = header["optimizer"].at("step").get<std::int64_t>();
      if (!m.empty() && (m.size() != ckpt.params.size() || v.size() != ckpt.params.size())) {
        bad("optimizer moments do not match parameter count");
      }
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i].name != ckpt.params[i].name || v[i].name != ckpt.params[i].name) {
          bad("optimizer moment order differs from parameters");
        }
        st.m.push_back(std::move(m[i].value));
        st.v.push_back(std::move(v[i].value));
      }
      ckpt.optimizer = std::move(st);
    }
  } catch (const json::exception& e) {
    bad(std::string("header: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kBadCheckpoint) {
      throw Error(ErrorCode::kBadCheckpoint, path.string() + ": " + e.what());
    }
    throw;
  }
}

void require_kind(const Checkpoint& ckpt, std::string_view kind) {
  if (ckpt.kind != kind) {
    bad("expected a '" + std::string(kind) + "' checkpoint, found '" + ckpt.kind + "'");
  }
}

json to_json(const NetConfig& c) {
  return {{"in_channels", c.in_channels},     {"base_channels", c.base_channels},
          {"depth", c.depth},                 {"time_embed_dim", c.time_embed_dim},
          {"norm_groups", c.norm_groups},     {"image_height", c.image_height},
          {"image_width", c.image_width}};
}

NetConfig net_config_from_json(const json& j) {
  NetConfig c;
  try {
    c.in_channels = j.at("in_channels").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.depth = j.at("depth").get<int>();
    c.time_embed_dim = j.at("time_embed_dim").get<int>();
    c.norm_groups = j.at("norm_groups").get<int>();
    c.image_height = j.at("image_height").get<int>();
    c.image_width = j.at("image_width").get<int>();
  } catch (const json::exception& e) {
    bad(std::string("network config: ") + e.what());
  }
  return c;
}

json to_json(const NoiseSchedule& s) {
  if (std::string_view(s.family()) != "linear") {
    throw Error(ErrorCode::kInvalidSchedule, "only linear schedules serialize");
  }
  return {{"T", s.steps()},
          {"beta_start", s.beta_start()},
          {"beta_end", s.beta_end()},
          {"family", s.family()}};
}

NoiseSchedule schedule_from_json(const json& j) {
  try {
    if (j.at("family").get<std::string>() != "linear") bad("unknown schedule family");
    return make_linear_schedule(j.at("T").get<int>(), j.at("beta_start").get<double>(),
                                j.at("beta_end").get<double>());
  } catch (const json::exception& e) {
    bad(std::string("schedule: ") + e.what());
  } catch (const Error& e) {
    bad(std::string("schedule: ") + e.what());
  }
}

Checkpoint to_checkpoint(const DiffusionModel& model) {
  Checkpoint c;
  c.kind = "diffusion";
  c.config = {{"network", to_json(model.net.config())},
              {"schedule", to_json(model.schedule)},
              {"truncation", model.truncation}};
  c.meta = model.meta;
  c.epoch = model.epoch;
  c.params = model.net.params();
  c.optimizer = model.optimizer;
  return c;
}

DiffusionModel diffusion_from_checkpoint(const Checkpoint& ckpt) {
  require_kind(ckpt, "diffusion");
  NetConfig cfg;
  NoiseSchedule schedule;
  int truncation = 0;
  try {
    cfg = net_config_from_json(ckpt.config.at("network"));
    schedule = schedule_from_json(ckpt.config.at("schedule"));
    truncation = ckpt.config.at("truncation").get<int>();
  } catch (const json::exception& e) {
    bad(std::string("diffusion config: ") + e.what());
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    bad(e.what());
  }
  return DiffusionModel{DenoiserNetwork(cfg, ckpt.params), std::move(schedule), truncation,
                        ckpt.epoch, ckpt.optimizer, ckpt.meta};
}

}  // namespace diffpad
