#include "omla/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "omla/binio.hpp"
#include "omla/error.hpp"
#include "omla/random.hpp"

namespace omla {

const std::vector<ConfigKey>& config_keys() {
  using T = ConfigType;
  static const std::vector<ConfigKey> keys = {
      // general
      {"seed", T::kUInt, "1", "master seed; every random stream is derived from it", "ledger"},
      {"threads", T::kInt, "1", "worker threads for per-video work", "ledger"},
      {"verbose", T::kBool, "false", "progress lines on stderr", "ledger"},
      {"data_dir", T::kString, "data", "dataset directory used when a command is given none", "ledger"},
      // data
      {"height", T::kInt, "32", "image height in pixels", "ledger"},
      {"width", T::kInt, "64", "image width in pixels", "ledger"},
      {"focal_times_baseline", T::kDouble, "0", "f*B for depth conversion; 0 means 0.75*width", "ledger"},
      {"source_videos", T::kInt, "24", "number of source-domain training videos", "desk"},
      {"source_length", T::kInt, "20", "frames per source video", "desk"},
      {"target_videos", T::kInt, "20", "number of held-out target-domain videos", "ledger"},
      {"target_length", T::kInt, "100", "frames per target video", "ledger"},
      {"integer_disparity", T::kBool, "false", "round layer disparities to whole pixels", "ledger"},
      {"source_texture_scale", T::kDouble, "1.0", "source texture frequency multiplier", "ledger"},
      {"source_brightness", T::kDouble, "0.0", "source brightness offset", "ledger"},
      {"source_contrast", T::kDouble, "1.0", "source contrast gain", "ledger"},
      {"source_noise", T::kDouble, "0.002", "source per-pixel noise sigma", "ledger"},
      {"source_palette_seed", T::kUInt, "11", "source colour palette", "ledger"},
      {"source_depth_min", T::kDouble, "6.0", "nearest source object depth (m)", "ledger"},
      {"source_depth_max", T::kDouble, "14.0", "farthest source background depth (m)", "ledger"},
      {"source_motion", T::kDouble, "0.04", "source per-frame shift per pixel of disparity", "ledger"},
      {"target_texture_scale", T::kDouble, "1.0", "target texture frequency multiplier", "ledger"},
      {"target_brightness", T::kDouble, "0.12", "target brightness offset", "ledger"},
      {"target_contrast", T::kDouble, "0.5", "target contrast gain", "ledger"},
      {"target_noise", T::kDouble, "0.003", "target per-pixel noise sigma", "ledger"},
      {"target_palette_seed", T::kUInt, "29", "target colour palette", "ledger"},
      {"target_depth_min", T::kDouble, "6.0", "nearest target object depth (m)", "ledger"},
      {"target_depth_max", T::kDouble, "14.0", "farthest target background depth (m)", "ledger"},
      {"target_motion", T::kDouble, "0.01", "target per-frame shift per pixel of disparity", "ledger"},
      // network
      {"channels", T::kIntList, "16,32,48,64", "encoder widths, one stride-2 block each", "ledger"},
      {"kernel", T::kInt, "3", "convolution kernel size", "ledger"},
      {"d_max", T::kDouble, "0", "largest predicted disparity; 0 means 0.75*width (48 at width 64)", "ledger"},
      {"bn_eps", T::kDouble, "1e-5", "BN epsilon", "ledger"},
      {"bn_momentum", T::kDouble, "0.1", "EMA rate of source statistics collection", "ledger"},
      // loss
      {"alpha", T::kDouble, "0.85", "SSIM weight in the photometric loss", "published"},
      {"ssim_window", T::kInt, "3", "SSIM box filter size", "ledger"},
      {"ssim_c1", T::kDouble, "1e-4", "SSIM constant c1 (0.01^2)", "ledger"},
      {"ssim_c2", T::kDouble, "9e-4", "SSIM constant c2 (0.03^2)", "ledger"},
      // online adaptation
      {"method", T::kString, "omla", "adaptation method: naive, meta, ofda or omla", "ledger"},
      {"base_lr", T::kDouble, "1e-5", "constant step size of naive and ofda", "ledger"},
      {"meta_lr", T::kDouble, "1e-7", "online learning-rate step size", "published"},
      {"blend_a", T::kDouble, "0.1", "BN blending weight a", "ledger"},
      {"adam_beta1", T::kDouble, "0.9", "Adam beta1", "ledger"},
      {"adam_beta2", T::kDouble, "0.999", "Adam beta2", "ledger"},
      {"adam_eps", T::kDouble, "1e-8", "Adam epsilon", "ledger"},
      {"lr_floor", T::kDouble, "0", "lower clamp of learned step sizes", "ledger"},
      {"meta_unroll_steps", T::kInt, "1", "updates the learning-rate gradient unrolls through (>1: tiny models only)",
       "ledger"},
      // standard pre-training
      {"pretrain_epochs", T::kInt, "200", "standard pre-training epochs", "published"},
      {"pretrain_batch", T::kInt, "4", "frames per minibatch", "ledger"},
      {"pretrain_lr1", T::kDouble, "1e-4", "step size for the first half of the epochs", "published"},
      {"pretrain_lr2", T::kDouble, "5e-5", "step size for the second half", "published"},
      {"lambda_init", T::kDouble, "1e-4", "initial per-parameter step size", "published"},
      // meta pre-training
      {"meta_K", T::kInt, "8", "videos per meta-batch", "published"},
      {"meta_N_adapt", T::kInt, "4", "inner adaptation frames", "ledger"},
      {"meta_T_eval", T::kInt, "3", "evaluation frames after the inner adaptation", "published"},
      {"meta_lambda_theta", T::kDouble, "1e-5", "outer step size for theta", "published"},
      {"meta_lambda_lambda", T::kDouble, "1e-5", "outer step size for lambda", "published"},
      {"meta_inner_lr", T::kDouble, "1e-5", "learning-rate step size inside the inner adaptation", "published"},
      {"meta_epochs", T::kInt, "10", "meta pre-training epochs", "published"},
      {"meta_gradient", T::kString, "first_order", "first_order or full_unroll (tiny models only)", "ledger"},
      // evaluation and reporting
      {"depth_cap", T::kDouble, "50", "depth cap and evaluation range (m)", "published"},
      {"d_min_eps", T::kDouble, "1e-3", "disparity floor before inversion (px)", "ledger"},
      {"smooth_window", T::kInt, "10", "moving-average window of report curves", "ledger"},
  };
  return keys;
}

namespace {

const ConfigKey* find_key(const std::string& name) {
  for (const ConfigKey& k : config_keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_ll(const std::string& s, long long& out) {
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtoll(s.c_str(), &end, 10);
  return errno == 0 && end == s.c_str() + s.size();
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return errno == 0 && end == s.c_str() + s.size() && std::isfinite(out);
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0" || s == "no") {
    out = false;
    return true;
  }
  return false;
}

bool parse_int_list(const std::string& s, std::vector<int>& out) {
  out.clear();
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    long long v = 0;
    if (!parse_ll(trim(item), v) || v < 1 || v > 4096) return false;
    out.push_back(static_cast<int>(v));
  }
  return !out.empty();
}

void check_value(const ConfigKey& k, const std::string& v) {
  bool ok = true;
  long long ll = 0;
  double d = 0.0;
  bool b = false;
  std::vector<int> list;
  switch (k.type) {
    case ConfigType::kInt: ok = parse_ll(v, ll); break;
    case ConfigType::kUInt: ok = parse_ll(v, ll) && ll >= 0; break;
    case ConfigType::kDouble: ok = parse_double(v, d); break;
    case ConfigType::kBool: ok = parse_bool(v, b); break;
    case ConfigType::kString: ok = !v.empty(); break;
    case ConfigType::kIntList: ok = parse_int_list(v, list); break;
  }
  if (!ok) throw ConfigError("config key '" + std::string(k.name) + "': invalid value '" + v + "'");
}

const char* type_name(ConfigType t) {
  switch (t) {
    case ConfigType::kInt: return "int";
    case ConfigType::kUInt: return "uint";
    case ConfigType::kDouble: return "float";
    case ConfigType::kBool: return "bool";
    case ConfigType::kString: return "string";
    case ConfigType::kIntList: return "int list";
  }
  return "?";
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  for (const ConfigKey& k : config_keys()) values_[k.name] = k.default_value;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& source) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      c.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  return parse(text, path);
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const ConfigKey* k = find_key(key);
  if (!k) throw ConfigError("unknown config key '" + key + "'");
  check_value(*k, value);
  values_[key] = value;
}

const std::string& ExperimentConfig::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

long long ExperimentConfig::get_int(const std::string& key) const {
  long long v = 0;
  parse_ll(raw(key), v);
  return v;
}

std::uint64_t ExperimentConfig::get_uint(const std::string& key) const {
  return static_cast<std::uint64_t>(get_int(key));
}

double ExperimentConfig::get_double(const std::string& key) const {
  double v = 0.0;
  parse_double(raw(key), v);
  return v;
}

bool ExperimentConfig::get_bool(const std::string& key) const {
  bool v = false;
  parse_bool(raw(key), v);
  return v;
}

const std::string& ExperimentConfig::get_string(const std::string& key) const { return raw(key); }

std::vector<int> ExperimentConfig::get_int_list(const std::string& key) const {
  std::vector<int> v;
  parse_int_list(raw(key), v);
  return v;
}

std::string ExperimentConfig::dump() const {
  std::string s;
  for (const ConfigKey& k : config_keys()) s += std::string(k.name) + " = " + raw(k.name) + "\n";
  return s;
}

std::string config_help() {
  std::string s = "Configuration keys (key = value; provenance: published = value of the published method,\n"
                  "ledger = documented design decision, desk = desk-scale sizing):\n";
  for (const ConfigKey& k : config_keys()) {
    std::string name = k.name;
    name.resize(std::max<std::size_t>(name.size(), 22), ' ');
    s += "  " + name + " " + type_name(k.type) + ", default " + k.default_value + " [" + k.provenance + "]  " +
         k.help + "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------

namespace {

int positive_int(const ExperimentConfig& c, const std::string& key) {
  const long long v = c.get_int(key);
  if (v < 1 || v > (1 << 20)) throw ConfigError("config key '" + key + "' must be a positive integer");
  return static_cast<int>(v);
}

int nonneg_int(const ExperimentConfig& c, const std::string& key) {
  const long long v = c.get_int(key);
  if (v < 0 || v > (1 << 20)) throw ConfigError("config key '" + key + "' must be >= 0");
  return static_cast<int>(v);
}

double nonneg_double(const ExperimentConfig& c, const std::string& key) {
  const double v = c.get_double(key);
  if (v < 0.0) throw ConfigError("config key '" + key + "' must be >= 0");
  return v;
}

AdamConfig adam_config(const ExperimentConfig& c) {
  AdamConfig a;
  a.beta1 = c.get_double("adam_beta1");
  a.beta2 = c.get_double("adam_beta2");
  a.eps = c.get_double("adam_eps");
  if (a.beta1 < 0.0 || a.beta1 >= 1.0 || a.beta2 < 0.0 || a.beta2 >= 1.0 || !(a.eps > 0.0)) {
    throw ConfigError("Adam constants must satisfy 0 <= beta < 1 and eps > 0");
  }
  return a;
}

}  // namespace

NetConfig net_config(const ExperimentConfig& c) {
  NetConfig n;
  n.channels = c.get_int_list("channels");
  n.kernel = positive_int(c, "kernel");
  if (n.kernel % 2 == 0) throw ConfigError("config key 'kernel' must be odd");
  const double d_max = nonneg_double(c, "d_max");
  n.d_max = d_max > 0.0 ? d_max : 0.75 * positive_int(c, "width");
  n.bn_eps = c.get_double("bn_eps");
  if (!(n.bn_eps > 0.0)) throw ConfigError("config key 'bn_eps' must be > 0");
  n.bn_momentum = c.get_double("bn_momentum");
  if (n.bn_momentum < 0.0 || n.bn_momentum > 1.0) throw ConfigError("config key 'bn_momentum' must be in [0, 1]");
  const int height = positive_int(c, "height");
  const int width = positive_int(c, "width");
  const int div = 1 << n.channels.size();
  if (height % div != 0 || width % div != 0) {
    throw ConfigError("height and width must be divisible by " + std::to_string(div) + " for " +
                      std::to_string(n.channels.size()) + " encoder blocks");
  }
  return n;
}

LossConfig loss_config(const ExperimentConfig& c) {
  LossConfig l;
  l.alpha = c.get_double("alpha");
  l.ssim_window = static_cast<int>(c.get_int("ssim_window"));
  l.c1 = c.get_double("ssim_c1");
  l.c2 = c.get_double("ssim_c2");
  try {
    l.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return l;
}

EvalConfig eval_config(const ExperimentConfig& c) {
  EvalConfig e;
  e.depth_cap = c.get_double("depth_cap");
  e.d_min_eps = c.get_double("d_min_eps");
  if (!(e.depth_cap > 0.0) || !(e.d_min_eps > 0.0)) throw ConfigError("depth_cap and d_min_eps must be > 0");
  return e;
}

OnlineOptions online_options(const ExperimentConfig& c, const std::string& method) {
  OnlineOptions o;
  try {
    o.method = AdaptMethod::parse(method, nonneg_double(c, "base_lr"));
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  o.meta_lr = nonneg_double(c, "meta_lr");
  o.blend_a = c.get_double("blend_a");
  if (o.blend_a < 0.0 || o.blend_a > 1.0) throw ConfigError("config key 'blend_a' must be in [0, 1]");
  o.adam = adam_config(c);
  o.lr_floor = nonneg_double(c, "lr_floor");
  o.meta_unroll_steps = positive_int(c, "meta_unroll_steps");
  return o;
}

StandardConfig standard_config(const ExperimentConfig& c) {
  StandardConfig s;
  s.epochs = nonneg_int(c, "pretrain_epochs");
  s.batch_size = positive_int(c, "pretrain_batch");
  s.lr1 = nonneg_double(c, "pretrain_lr1");
  s.lr2 = nonneg_double(c, "pretrain_lr2");
  s.base_lr = nonneg_double(c, "lambda_init");
  s.adam = adam_config(c);
  s.seed = derive_seed_for(c.get_uint("seed"), "standard");
  return s;
}

MetaConfig meta_config(const ExperimentConfig& c) {
  MetaConfig m;
  m.K = positive_int(c, "meta_K");
  m.N_adapt = positive_int(c, "meta_N_adapt");
  m.T_eval = positive_int(c, "meta_T_eval");
  m.lambda_theta = nonneg_double(c, "meta_lambda_theta");
  m.lambda_lambda = nonneg_double(c, "meta_lambda_lambda");
  m.inner_meta_lr = nonneg_double(c, "meta_inner_lr");
  m.blend_a = c.get_double("blend_a");
  m.lr_floor = nonneg_double(c, "lr_floor");
  m.adam = adam_config(c);
  m.gradient_mode = parse_meta_gradient_mode(c.get_string("meta_gradient"));
  m.epochs = nonneg_int(c, "meta_epochs");
  m.seed = derive_seed_for(c.get_uint("seed"), "meta");
  m.threads = positive_int(c, "threads");
  return m;
}

DomainSpec domain_config(const ExperimentConfig& c, const std::string& p) {
  DomainSpec d;
  d.texture_scale = c.get_double(p + "_texture_scale");
  d.brightness = c.get_double(p + "_brightness");
  d.contrast = c.get_double(p + "_contrast");
  d.noise_sigma = nonneg_double(c, p + "_noise");
  d.palette_seed = static_cast<std::uint32_t>(c.get_uint(p + "_palette_seed"));
  d.depth_min = c.get_double(p + "_depth_min");
  d.depth_max = c.get_double(p + "_depth_max");
  d.motion = c.get_double(p + "_motion");
  d.integer_disparity = c.get_bool("integer_disparity");
  if (!(d.depth_min > 0.0) || !(d.depth_max > d.depth_min)) {
    throw ConfigError(p + " depth range must satisfy 0 < depth_min < depth_max");
  }
  return d;
}

}  // namespace omla
