#include "diffpad/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "diffpad/error.hpp"
#include "diffpad/io.hpp"

namespace diffpad {

namespace pt = boost::property_tree;

AutoencoderConfig ModelSection::autoencoder() const {
  AutoencoderConfig c;
  c.variant = kind == "vae" ? AeVariant::kVae : AeVariant::kCae;
  c.in_channels = net.in_channels;
  c.image_height = net.image_height;
  c.image_width = net.image_width;
  c.latent_dim = latent_dim;
  return c;
}

NoiseSchedule RunConfig::schedule() const {
  try {
    return make_linear_schedule(model.steps, model.beta_start, model.beta_end);
  } catch (const Error& e) {
    throw Error(ErrorCode::kInvalidConfig, e.what());
  }
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidConfig, msg); };
  if (jobs < 1) fail("jobs must be >= 1");
  if (model.kind != "diffusion" && model.kind != "cae" && model.kind != "vae") {
    fail("model.kind must be diffusion, cae or vae");
  }
  model.net.validate();
  schedule();
  const int n = model.effective_truncation();
  if (n < 1 || n >= model.steps) fail("model.truncation must be in [1, steps)");
  if (model.kind != "diffusion") model.autoencoder().validate();
  train.validate();
  if (pipeline.restarts < 1) fail("pipeline.restarts must be >= 1");
  if (pipeline.roi_height < 0 || pipeline.roi_width < 0) fail("pipeline ROI must be >= 0");
  if (!(eval.target_apcer > 0.0 && eval.target_apcer < 100.0)) fail("eval.target_apcer must be in (0, 100)");
  if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) fail("data.train_fraction must be in (0, 1)");
  synth_config().validate();
}

SynthConfig RunConfig::synth_config() const {
  SynthConfig s = data.synth;
  s.channels = model.net.in_channels;
  s.height = model.net.image_height;
  s.width = model.net.image_width;
  s.seed = synth_seed();
  return s;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) {
    throw Error(ErrorCode::kInvalidConfig, key + ": cannot parse '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw Error(ErrorCode::kInvalidConfig, key + ": expected true or false, got '" + text + "'");
}

struct Field {
  std::function<void(const std::string&, const std::string&)> set;
  std::function<std::string()> get;
};

// Declarative key table shared by the parser and the formatter.
std::vector<std::pair<std::string, std::vector<std::pair<std::string, Field>>>> fields(RunConfig& c) {
  auto i32 = [](int& v) {
    return Field{[&v](const std::string& k, const std::string& s) { v = parse_number<int>(k, s); },
                 [&v] { return std::to_string(v); }};
  };
  auto u64 = [](std::uint64_t& v) {
    return Field{[&v](const std::string& k, const std::string& s) { v = parse_number<std::uint64_t>(k, s); },
                 [&v] { return std::to_string(v); }};
  };
  auto f64 = [](double& v) {
    return Field{[&v](const std::string& k, const std::string& s) { v = parse_number<double>(k, s); },
                 [&v] { return fmt(v); }};
  };
  auto str = [](std::string& v) {
    return Field{[&v](const std::string&, const std::string& s) { v = s; }, [&v] { return v; }};
  };
  auto boolean = [](bool& v) {
    return Field{[&v](const std::string& k, const std::string& s) { v = parse_bool(k, s); },
                 [&v] { return std::string(v ? "true" : "false"); }};
  };
  Field metric{[&c](const std::string&, const std::string& s) { c.pipeline.metric = parse_metric(s); },
               [&c] { return std::string(to_string(c.pipeline.metric)); }};
  Field pais{[&c](const std::string&, const std::string& s) {
               c.data.synth.pai_types.clear();
               std::stringstream ss(s);
               for (std::string item; std::getline(ss, item, ',');) {
                 item.erase(0, item.find_first_not_of(' '));
                 item.erase(item.find_last_not_of(' ') + 1);
                 if (!item.empty()) c.data.synth.pai_types.push_back(parse_pai_type(item));
               }
             },
             [&c] {
               std::string out;
               for (PaiType p : c.data.synth.pai_types) out += (out.empty() ? "" : ",") + std::string(to_string(p));
               return out;
             }};
  NetConfig& net = c.model.net;
  SynthConfig& syn = c.data.synth;
  return {
      {"run", {{"seed", u64(c.seed)}, {"jobs", i32(c.jobs)}, {"deterministic", boolean(c.deterministic)}}},
      {"model",
       {{"kind", str(c.model.kind)},
        {"in_channels", i32(net.in_channels)},
        {"base_channels", i32(net.base_channels)},
        {"depth", i32(net.depth)},
        {"time_embed_dim", i32(net.time_embed_dim)},
        {"norm_groups", i32(net.norm_groups)},
        {"image_height", i32(net.image_height)},
        {"image_width", i32(net.image_width)},
        {"steps", i32(c.model.steps)},
        {"beta_start", f64(c.model.beta_start)},
        {"beta_end", f64(c.model.beta_end)},
        {"truncation", i32(c.model.truncation)},
        {"latent_dim", i32(c.model.latent_dim)}}},
      {"train",
       {{"epochs", i32(c.train.epochs)},
        {"batch_size", i32(c.train.batch_size)},
        {"learning_rate", f64(c.train.learning_rate)},
        {"checkpoint_every", i32(c.train.checkpoint_every)}}},
      {"pipeline",
       {{"metric", metric},
        {"roi_height", i32(c.pipeline.roi_height)},
        {"roi_width", i32(c.pipeline.roi_width)},
        {"restarts", i32(c.pipeline.restarts)},
        {"features", str(c.pipeline.features)},
        {"feature_seed", u64(c.pipeline.feature_seed)}}},
      {"eval", {{"target_apcer", f64(c.eval.target_apcer)}, {"pooled", boolean(c.eval.pooled)}}},
      {"data",
       {{"manifest", str(c.data.manifest)},
        {"train_fraction", f64(c.data.train_fraction)},
        {"n_bonafide", i32(syn.n_bonafide)},
        {"n_attack_per_pai", i32(syn.n_attack_per_pai)},
        {"pai_types", pais},
        {"freq_min", f64(syn.freq_min)},
        {"freq_max", f64(syn.freq_max)},
        {"images_per_subject", i32(syn.images_per_subject)},
        {"noise_sigma", f64(syn.noise_sigma)},
        {"blur_radius", f64(syn.blur_radius)}}},
  };
}

}  // namespace

RunConfig parse_config(std::string_view text) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("config line ") + std::to_string(e.line()) +
                                               ": " + e.message());
  }
  RunConfig c;
  auto table = fields(c);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw Error(ErrorCode::kInvalidConfig, "key '" + section + "' outside any section");
    }
    auto sec = std::find_if(table.begin(), table.end(), [&](const auto& s) { return s.first == section; });
    if (sec == table.end()) throw Error(ErrorCode::kInvalidConfig, "unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      auto f = std::find_if(sec->second.begin(), sec->second.end(), [&](const auto& kv) { return kv.first == key; });
      if (f == sec->second.end()) {
        throw Error(ErrorCode::kInvalidConfig, "unknown key " + section + "." + key);
      }
      try {
        f->second.set(section + "." + key, value.data());
      } catch (const Error& e) {
        throw Error(ErrorCode::kInvalidConfig, e.what());
      }
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::kInvalidConfig, e.what());
  }
  return parse_config(text);
}

std::string format_config(const RunConfig& c) {
  RunConfig copy = c;
  std::string out;
  for (const auto& [section, body] : fields(copy)) {
    out += "[" + section + "]\n";
    for (const auto& [key, field] : body) out += key + " = " + field.get() + "\n";
    out += "\n";
  }
  return out;
}

std::string config_digest(const RunConfig& c) {
  RunConfig canon = c;
  canon.jobs = 1;
  canon.deterministic = false;
  return sha256_hex(format_config(canon));
}

}  // namespace diffpad
