#include "laug/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace laug {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
  throw FormatError("config " + origin + ":" + std::to_string(line) + ": " + msg);
}

double parse_double(const std::string& origin, int line, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) fail(origin, line, "trailing characters in number '" + v + "'");
    return d;
  } catch (const FormatError&) {
    throw;
  } catch (...) {
    fail(origin, line, "cannot parse number '" + v + "'");
  }
}

int parse_int(const std::string& origin, int line, const std::string& v) {
  const double d = parse_double(origin, line, v);
  const int i = static_cast<int>(d);
  if (static_cast<double>(i) != d) fail(origin, line, "expected an integer, got '" + v + "'");
  return i;
}

std::uint64_t parse_u64(const std::string& origin, int line, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::uint64_t u = std::stoull(v, &pos);
    if (pos != v.size()) fail(origin, line, "trailing characters in integer '" + v + "'");
    return u;
  } catch (const FormatError&) {
    throw;
  } catch (...) {
    fail(origin, line, "cannot parse integer '" + v + "'");
  }
}

bool parse_bool(const std::string& origin, int line, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(origin, line, "expected true/false, got '" + v + "'");
}

OptKind parse_opt_kind(const std::string& origin, int line, const std::string& v) {
  if (v == "adam") return OptKind::adam;
  if (v == "sgd") return OptKind::sgd;
  fail(origin, line, "optimizer must be 'adam' or 'sgd', got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& origin, int line, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_int(origin, line, item));
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  int lambda_III_line = -1;
  double lambda_III_value = 0.0;

  while (std::getline(in, raw)) {
    ++line_no;
    std::string s = raw;
    const auto hash = s.find('#');
    if (hash != std::string::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;

    if (s.front() == '[') {
      if (s.back() != ']') fail(origin, line_no, "malformed section header '" + s + "'");
      section = trim(s.substr(1, s.size() - 2));
      if (section != "network" && section != "train" && section != "stage1" &&
          section != "stage2" && section != "stage3" && section != "finetune" &&
          section != "data" && section != "paths")
        fail(origin, line_no, "unknown section [" + section + "]");
      continue;
    }

    const auto eq = s.find('=');
    if (eq == std::string::npos) fail(origin, line_no, "expected 'key = value', got '" + s + "'");
    const std::string key = trim(s.substr(0, eq));
    const std::string val = trim(s.substr(eq + 1));
    if (section.empty()) fail(origin, line_no, "key '" + key + "' outside any section");

    auto unknown = [&]() { fail(origin, line_no, "unknown key '" + key + "' in section [" + section + "]"); };

    if (section == "network") {
      if (key == "height") cfg.network.height = parse_int(origin, line_no, val);
      else if (key == "width") cfg.network.width = parse_int(origin, line_no, val);
      else if (key == "channels") cfg.network.channels = parse_int(origin, line_no, val);
      else if (key == "latent_dim") cfg.network.latent_dim = parse_int(origin, line_no, val);
      else if (key == "coder_layers") cfg.network.coder_layers = parse_int(origin, line_no, val);
      else if (key == "disc_layers") cfg.network.disc_layers = parse_int(origin, line_no, val);
      else if (key == "base_width") cfg.network.base_width = parse_int(origin, line_no, val);
      else if (key == "max_width") cfg.network.max_width = parse_int(origin, line_no, val);
      else if (key == "leaky_alpha") cfg.network.leaky_alpha = parse_double(origin, line_no, val);
      else if (key == "skip_layers") cfg.network.skip_layers = parse_int_list(origin, line_no, val);
      else unknown();
    } else if (section == "train") {
      if (key == "optimizer") cfg.optimizer.kind = parse_opt_kind(origin, line_no, val);
      else if (key == "lr") cfg.optimizer.lr = parse_double(origin, line_no, val);
      else if (key == "beta1") cfg.optimizer.beta1 = parse_double(origin, line_no, val);
      else if (key == "beta2") cfg.optimizer.beta2 = parse_double(origin, line_no, val);
      else if (key == "eps") cfg.optimizer.eps = parse_double(origin, line_no, val);
      else if (key == "batch_size") cfg.batch_size = parse_int(origin, line_no, val);
      else if (key == "seed") cfg.seed = parse_u64(origin, line_no, val);
      else unknown();
    } else if (section == "stage1") {
      if (key == "steps") cfg.stage1_steps = parse_int(origin, line_no, val);
      else if (key == "lambda_I") cfg.lambda_I = parse_double(origin, line_no, val);
      else if (key == "sigma_prior") cfg.sigma_prior = parse_double(origin, line_no, val);
      else unknown();
    } else if (section == "stage2") {
      if (key == "lambda_II") cfg.lambda_II = parse_double(origin, line_no, val);
      else if (key == "lambda_II_relative") cfg.lambda_II_relative = parse_bool(origin, line_no, val);
      else if (key == "standardize_codes") cfg.standardize_codes = parse_bool(origin, line_no, val);
      else if (key == "holdout_fraction") cfg.holdout_fraction = parse_double(origin, line_no, val);
      else unknown();
    } else if (section == "stage3") {
      if (key == "steps") cfg.stage3_steps = parse_int(origin, line_no, val);
      else if (key == "lambda_feat") cfg.lambda_feat = parse_double(origin, line_no, val);
      else if (key == "feature_source") {
        if (val != "aae" && val != "cgan")
          fail(origin, line_no, "feature_source must be 'aae' or 'cgan'");
        cfg.feature_source = val;
      } else if (key == "lambda_III") {
        // tied to lambda_I; accepted only to let configs state it explicitly
        lambda_III_line = line_no;
        lambda_III_value = parse_double(origin, line_no, val);
      } else unknown();
    } else if (section == "finetune") {
      if (key == "steps") cfg.finetune_steps = parse_int(origin, line_no, val);
      else if (key == "optimizer") cfg.finetune_optimizer.kind = parse_opt_kind(origin, line_no, val);
      else if (key == "lr") cfg.finetune_optimizer.lr = parse_double(origin, line_no, val);
      else if (key == "max_pairs") cfg.finetune_max_pairs = parse_int(origin, line_no, val);
      else unknown();
    } else if (section == "data") {
      if (key == "ssim_lo") cfg.ssim_lo = parse_double(origin, line_no, val);
      else if (key == "ssim_hi") cfg.ssim_hi = parse_double(origin, line_no, val);
      else if (key == "max_gap") cfg.max_gap = parse_int(origin, line_no, val);
      else unknown();
    } else if (section == "paths") {
      if (key == "data") cfg.data_path = val;
      else if (key == "videos") cfg.videos_path = val;
      else if (key == "images") cfg.images_path = val;
      else if (key == "out") cfg.out_path = val;
      else unknown();
    }
  }

  if (lambda_III_line >= 0 && lambda_III_value != cfg.lambda_I)
    fail(origin, lambda_III_line,
         "lambda_III is tied to lambda_I (" + fmt_double(cfg.lambda_I) + "), got " +
             fmt_double(lambda_III_value));

  if (!(cfg.ssim_lo >= 0.0 && cfg.ssim_lo < cfg.ssim_hi && cfg.ssim_hi <= 1.0))
    throw FormatError("config " + origin + ": ssim thresholds must satisfy 0 <= lo < hi <= 1");
  if (cfg.max_gap < 1) throw FormatError("config " + origin + ": max_gap must be >= 1");
  cfg.network.validate();
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "[network]\n";
  os << "height = " << cfg.network.height << "\n";
  os << "width = " << cfg.network.width << "\n";
  os << "channels = " << cfg.network.channels << "\n";
  os << "latent_dim = " << cfg.network.latent_dim << "\n";
  os << "coder_layers = " << cfg.network.coder_layers << "\n";
  os << "disc_layers = " << cfg.network.disc_layers << "\n";
  os << "base_width = " << cfg.network.base_width << "\n";
  os << "max_width = " << cfg.network.max_width << "\n";
  os << "leaky_alpha = " << fmt_double(cfg.network.leaky_alpha) << "\n";
  os << "skip_layers = ";
  for (std::size_t i = 0; i < cfg.network.skip_layers.size(); ++i)
    os << (i ? "," : "") << cfg.network.skip_layers[i];
  os << "\n\n[train]\n";
  os << "optimizer = " << (cfg.optimizer.kind == OptKind::adam ? "adam" : "sgd") << "\n";
  os << "lr = " << fmt_double(cfg.optimizer.lr) << "\n";
  os << "beta1 = " << fmt_double(cfg.optimizer.beta1) << "\n";
  os << "beta2 = " << fmt_double(cfg.optimizer.beta2) << "\n";
  os << "eps = " << fmt_double(cfg.optimizer.eps) << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "\n[stage1]\n";
  os << "steps = " << cfg.stage1_steps << "\n";
  os << "lambda_I = " << fmt_double(cfg.lambda_I) << "\n";
  os << "sigma_prior = " << fmt_double(cfg.sigma_prior) << "\n";
  os << "\n[stage2]\n";
  os << "lambda_II = " << fmt_double(cfg.lambda_II) << "\n";
  os << "lambda_II_relative = " << (cfg.lambda_II_relative ? "true" : "false") << "\n";
  os << "standardize_codes = " << (cfg.standardize_codes ? "true" : "false") << "\n";
  os << "holdout_fraction = " << fmt_double(cfg.holdout_fraction) << "\n";
  os << "\n[stage3]\n";
  os << "steps = " << cfg.stage3_steps << "\n";
  os << "lambda_III = " << fmt_double(cfg.lambda_I) << "\n";
  os << "lambda_feat = " << fmt_double(cfg.lambda_feat) << "\n";
  os << "feature_source = " << cfg.feature_source << "\n";
  os << "\n[finetune]\n";
  os << "steps = " << cfg.finetune_steps << "\n";
  os << "optimizer = " << (cfg.finetune_optimizer.kind == OptKind::adam ? "adam" : "sgd") << "\n";
  os << "lr = " << fmt_double(cfg.finetune_optimizer.lr) << "\n";
  os << "max_pairs = " << cfg.finetune_max_pairs << "\n";
  os << "\n[data]\n";
  os << "ssim_lo = " << fmt_double(cfg.ssim_lo) << "\n";
  os << "ssim_hi = " << fmt_double(cfg.ssim_hi) << "\n";
  os << "max_gap = " << cfg.max_gap << "\n";
  if (!cfg.data_path.empty() || !cfg.videos_path.empty() || !cfg.images_path.empty() ||
      !cfg.out_path.empty()) {
    os << "\n[paths]\n";
    if (!cfg.data_path.empty()) os << "data = " << cfg.data_path << "\n";
    if (!cfg.videos_path.empty()) os << "videos = " << cfg.videos_path << "\n";
    if (!cfg.images_path.empty()) os << "images = " << cfg.images_path << "\n";
    if (!cfg.out_path.empty()) os << "out = " << cfg.out_path << "\n";
  }
  return os.str();
}

}  // namespace laug
