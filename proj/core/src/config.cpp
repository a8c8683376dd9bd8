#include "robust/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "json.hpp"

namespace robust {

namespace {

using json = nlohmann::json;
using Setter = std::function<void(TrainConfig&, const json&)>;
using Section = std::map<std::string, Setter, std::less<>>;

double as_double(const json& v) {
  if (!v.is_number()) throw std::invalid_argument("expected a number");
  return v.get<double>();
}

long long as_int(const json& v) {
  if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
  return v.get<long long>();
}

std::size_t as_size(const json& v) {
  const long long i = as_int(v);
  if (i < 0) throw std::invalid_argument("expected a nonnegative integer");
  return static_cast<std::size_t>(i);
}

std::string as_string(const json& v) {
  if (!v.is_string()) throw std::invalid_argument("expected a string");
  return v.get<std::string>();
}

bool as_bool(const json& v) {
  if (!v.is_boolean()) throw std::invalid_argument("expected true or false");
  return v.get<bool>();
}

template <class T, class F>
std::vector<T> as_list(const json& v, F item) {
  if (!v.is_array()) throw std::invalid_argument("expected a list");
  std::vector<T> out;
  for (const auto& e : v) out.push_back(static_cast<T>(item(e)));
  return out;
}

const Section& experiment_keys() {
  static const Section s{
      {"name", [](TrainConfig& c, const json& v) { c.name = as_string(v); }},
      {"method", [](TrainConfig& c, const json& v) { c.method = parse_method(as_string(v)); }},
      {"methods",
       [](TrainConfig& c, const json& v) {
         c.methods = as_list<Method>(v, [](const json& e) { return parse_method(as_string(e)); });
       }},
      {"alpha", [](TrainConfig& c, const json& v) { c.alpha = as_double(v); }},
      {"epochs", [](TrainConfig& c, const json& v) { c.epochs = static_cast<int>(as_int(v)); }},
      {"batch_size", [](TrainConfig& c, const json& v) { c.batch_size = static_cast<int>(as_int(v)); }},
      {"learning_rate", [](TrainConfig& c, const json& v) { c.learning_rate = as_double(v); }},
      {"hidden", [](TrainConfig& c, const json& v) { c.hidden = as_list<std::size_t>(v, as_size); }},
      {"seeds", [](TrainConfig& c, const json& v) { c.seeds = as_list<std::uint64_t>(v, as_size); }},
      {"corruption_levels",
       [](TrainConfig& c, const json& v) { c.corruption_levels = as_list<double>(v, as_double); }},
      {"eval_draws", [](TrainConfig& c, const json& v) { c.eval_draws = as_size(v); }},
      {"record_wall_ms", [](TrainConfig& c, const json& v) { c.record_wall_ms = as_bool(v); }},
      {"output_dir", [](TrainConfig& c, const json& v) { c.output_dir = as_string(v); }},
  };
  return s;
}

const Section& perturbation_keys() {
  static const Section s{
      {"noise_scale", [](TrainConfig& c, const json& v) { c.perturbation.noise_scale = as_double(v); }},
      {"linf_bound", [](TrainConfig& c, const json& v) { c.perturbation.linf_bound = as_double(v); }},
      {"step_size", [](TrainConfig& c, const json& v) { c.perturbation.step_size = as_double(v); }},
      {"inner_steps",
       [](TrainConfig& c, const json& v) { c.perturbation.inner_steps = static_cast<int>(as_int(v)); }},
      {"init_sigma", [](TrainConfig& c, const json& v) { c.perturbation.init_sigma = as_double(v); }},
      {"probe_xi", [](TrainConfig& c, const json& v) { c.perturbation.probe_xi = as_double(v); }},
      {"pdm_samples",
       [](TrainConfig& c, const json& v) { c.perturbation.pdm_samples = static_cast<int>(as_int(v)); }},
      {"kl_direction",
       [](TrainConfig& c, const json& v) { c.perturbation.kl_direction = parse_kl_direction(as_string(v)); }},
      {"vat_detach_clean", [](TrainConfig& c, const json& v) { c.perturbation.vat_detach_clean = as_bool(v); }},
  };
  return s;
}

const Section& tat_keys() {
  static const Section s{
      {"divergence", [](TrainConfig& c, const json& v) { c.tat.divergence = parse_divergence(as_string(v)); }},
      {"tally_smoothing", [](TrainConfig& c, const json& v) { c.tat.tally_smoothing = as_double(v); }},
      {"tally_momentum", [](TrainConfig& c, const json& v) { c.tat.tally_momentum = as_double(v); }},
  };
  return s;
}

const Section& dataset_keys() {
  static const Section s{
      {"generator", [](TrainConfig& c, const json& v) { c.dataset.generator = parse_generator(as_string(v)); }},
      {"n_points", [](TrainConfig& c, const json& v) { c.dataset.n_points = as_size(v); }},
      {"n_features", [](TrainConfig& c, const json& v) { c.dataset.n_features = as_size(v); }},
      {"n_classes", [](TrainConfig& c, const json& v) { c.dataset.n_classes = as_size(v); }},
      {"noise", [](TrainConfig& c, const json& v) { c.dataset.noise = as_double(v); }},
      {"seed", [](TrainConfig& c, const json& v) { c.dataset.seed = as_size(v); }},
      {"resample_per_seed", [](TrainConfig& c, const json& v) { c.dataset.resample_per_seed = as_bool(v); }},
      {"shift_rotation_deg", [](TrainConfig& c, const json& v) { c.dataset.shift.rotation_deg = as_double(v); }},
      {"shift_translation",
       [](TrainConfig& c, const json& v) { c.dataset.shift.translation = as_list<double>(v, as_double); }},
      {"shift_noise", [](TrainConfig& c, const json& v) { c.dataset.shift.extra_noise = as_double(v); }},
  };
  return s;
}

const Setter* find_override(std::string_view key) {
  for (const Section* s : {&experiment_keys(), &perturbation_keys(), &tat_keys()}) {
    if (auto it = s->find(key); it != s->end()) return &it->second;
  }
  return nullptr;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

json number(double v) { return json(v); }

}  // namespace

TrainConfig parse_config(std::string_view text, std::string_view source) {
  TrainConfig cfg;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  auto fail = [&](std::string_view msg) -> void {
    throw std::invalid_argument(fmt::format("{}:{}: {}", source, line_no, msg));
  };

  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section.rfind("method.", 0) == 0) {
        parse_method(section.substr(7));
        cfg.method_overrides[section.substr(7)];
      } else if (section != "experiment" && section != "perturbation" && section != "tat" &&
                 section != "dataset") {
        fail(fmt::format("unknown section [{}]", section));
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value_text = trim(line.substr(eq + 1));
    if (section.empty()) fail("key outside a section");

    json value;
    try {
      value = json::parse(value_text);
    } catch (const json::parse_error&) {
      fail(fmt::format("{}: value is not a JSON literal: {}", key, value_text));
    }

    try {
      if (section.rfind("method.", 0) == 0) {
        const Setter* setter = key == "method" || key == "methods" ? nullptr : find_override(key);
        if (!setter) fail(fmt::format("unknown override key '{}'", key));
        TrainConfig probe = cfg;
        (*setter)(probe, value);
        cfg.method_overrides[section.substr(7)][key] = value.dump();
        continue;
      }
      const Section& keys = section == "experiment"     ? experiment_keys()
                            : section == "perturbation" ? perturbation_keys()
                            : section == "tat"          ? tat_keys()
                                                        : dataset_keys();
      const auto it = keys.find(key);
      if (it == keys.end()) fail(fmt::format("unknown key '{}' in [{}]", key, section));
      it->second(cfg, value);
    } catch (const std::invalid_argument& e) {
      const std::string what = e.what();
      if (what.rfind(std::string(source) + ":", 0) == 0) throw;
      fail(fmt::format("{}: {}", key, what));
    }
  }

  try {
    cfg.validate();
    for (const auto& [m, _] : cfg.method_overrides) for_method(cfg, parse_method(m)).validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(fmt::format("{}: {}", source, e.what()));
  }
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open config '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string serialize_config(const TrainConfig& cfg) {
  std::string out;
  auto put = [&out](std::string_view key, const json& v) { out += fmt::format("{} = {}\n", key, v.dump()); };
  auto methods = [](const std::vector<Method>& ms) {
    json a = json::array();
    for (Method m : ms) a.push_back(std::string(to_string(m)));
    return a;
  };

  out += "[experiment]\n";
  put("name", cfg.name);
  put("method", std::string(to_string(cfg.method)));
  put("methods", methods(cfg.methods));
  put("alpha", number(cfg.alpha));
  put("epochs", cfg.epochs);
  put("batch_size", cfg.batch_size);
  put("learning_rate", number(cfg.learning_rate));
  put("hidden", cfg.hidden);
  put("seeds", cfg.seeds);
  put("corruption_levels", cfg.corruption_levels);
  put("eval_draws", cfg.eval_draws);
  put("record_wall_ms", cfg.record_wall_ms);
  put("output_dir", cfg.output_dir);

  const PerturbationConfig& p = cfg.perturbation;
  out += "\n[perturbation]\n";
  put("noise_scale", number(p.noise_scale));
  put("linf_bound", number(p.linf_bound));
  put("step_size", number(p.step_size));
  put("inner_steps", p.inner_steps);
  put("init_sigma", number(p.init_sigma));
  put("probe_xi", number(p.probe_xi));
  put("pdm_samples", p.pdm_samples);
  put("kl_direction", std::string(to_string(p.kl_direction)));
  put("vat_detach_clean", p.vat_detach_clean);

  out += "\n[tat]\n";
  put("divergence", std::string(to_string(cfg.tat.divergence)));
  put("tally_smoothing", number(cfg.tat.tally_smoothing));
  put("tally_momentum", number(cfg.tat.tally_momentum));

  const DatasetSpec& d = cfg.dataset;
  out += "\n[dataset]\n";
  put("generator", std::string(to_string(d.generator)));
  put("n_points", d.n_points);
  put("n_features", d.n_features);
  put("n_classes", d.n_classes);
  put("noise", number(d.noise));
  put("seed", d.seed);
  put("resample_per_seed", d.resample_per_seed);
  put("shift_rotation_deg", number(d.shift.rotation_deg));
  put("shift_translation", d.shift.translation);
  put("shift_noise", number(d.shift.extra_noise));

  for (const auto& [m, keys] : cfg.method_overrides) {
    out += fmt::format("\n[method.{}]\n", m);
    for (const auto& [k, v] : keys) out += fmt::format("{} = {}\n", k, v);
  }
  return out;
}

TrainConfig for_method(const TrainConfig& cfg, Method method) {
  TrainConfig out = cfg;
  out.method = method;
  const auto it = cfg.method_overrides.find(std::string(to_string(method)));
  if (it == cfg.method_overrides.end()) return out;
  for (const auto& [key, text] : it->second) {
    const Setter* setter = find_override(key);
    if (!setter) throw std::invalid_argument(fmt::format("unknown override key '{}'", key));
    (*setter)(out, json::parse(text));
  }
  return out;
}

}  // namespace robust
