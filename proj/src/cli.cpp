#include "tinyode/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>

#include "tinyode/accounting.hpp"
#include "tinyode/image.hpp"
#include "tinyode/model.hpp"
#include "tinyode/parallel.hpp"
#include "tinyode/verify.hpp"

namespace tinyode::cli {

namespace {

using nlohmann::json;

constexpr const char* kClassNames[] = {"airplane", "bird", "car", "cat", "deer",
                                       "dog",      "horse", "monkey", "ship", "truck"};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VerifyFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string weights;
  std::string image;
  std::string out;
  std::optional<int> iterations;
  std::optional<std::string> quant;
  std::string path = "float";
  std::uint64_t seed = 0;
  std::string format = "text";
  std::optional<int> threads;
  std::size_t count = 4;
  double tolerance = 0.1;
  std::string attention = "relu";
};

const char* class_name(std::size_t i) {
  return i < std::size(kClassNames) ? kClassNames[i] : "?";
}

WeightContainer read_weights(const std::string& path) {
  if (!std::filesystem::exists(path)) throw MissingInput("weights file not found: " + path);
  return load_file(path);
}

ModelConfig config_from_flags(const Options& o) {
  ModelConfig c;
  if (o.iterations) c.ode_iterations = *o.iterations;
  if (o.quant) c.quant = QuantConfig::from_mode(parse_quant_mode(*o.quant));
  c.attention = o.attention == "softmax" ? AttentionActivation::kSoftmax : AttentionActivation::kRelu;
  return c;
}

// An explicit --quant must describe the container; it cannot re-quantize it.
void check_quant_flag(const Options& o, const ModelConfig& stored) {
  if (!o.quant) return;
  const QuantConfig want = QuantConfig::from_mode(parse_quant_mode(*o.quant));
  if (!(want == stored.quant)) {
    throw UsageError("--quant " + *o.quant + " does not match the weights container");
  }
}

Model load_model(const Options& o, const WeightContainer& w) {
  check_quant_flag(o, ModelConfig::from_metadata(w.metadata));
  BuildOptions b;
  b.ode_iterations = o.iterations;
  return Model(w, b);
}

json logits_json(const FloatTensor& logits) {
  json a = json::array();
  for (double v : logits.data()) a.push_back(v);
  return a;
}

int cmd_infer(const Options& o, std::ostream& out) {
  if (!std::filesystem::exists(o.image)) throw MissingInput("image file not found: " + o.image);
  const WeightContainer w = read_weights(o.weights);
  const Model model = load_model(o, w);
  const FloatTensor rgb = load_image(o.image, model.config().image_size);
  const NumericPath path = parse_path(o.path);
  const FloatTensor logits = model.infer(normalize_image(rgb, model.config()), path);
  const std::size_t cls = argmax(logits);
  if (o.format == "json") {
    out << json{{"class", cls}, {"label", class_name(cls)}, {"path", path_name(path)}, {"logits", logits_json(logits)}}
               .dump(2)
        << '\n';
    return kOk;
  }
  out << "class " << cls << " (" << class_name(cls) << ")\n";
  out << "logits (" << path_name(path) << "):";
  out << std::setprecision(6);
  for (double v : logits.data()) out << ' ' << v;
  out << '\n';
  return kOk;
}

int cmd_verify(const Options& o, std::ostream& out) {
  const WeightContainer w = read_weights(o.weights);
  const std::vector<LutCheck> luts = check_luts(w);
  const bool luts_ok = std::all_of(luts.begin(), luts.end(), [](const LutCheck& c) { return c.ok; });

  std::optional<PathComparison> cmp;
  if (luts_ok) {
    const Model model = load_model(o, w);
    std::vector<FloatTensor> images;
    for (std::size_t i = 0; i < o.count; ++i) images.push_back(random_input(o.seed + i, model.config()));
    cmp = compare_paths(model, parse_path(o.path), images);
  }
  const bool within = cmp && cmp->logit_max_abs() <= o.tolerance;
  const bool pass = luts_ok && within;

  if (o.format == "json") {
    json j;
    j["luts"] = json::array();
    for (const LutCheck& c : luts) j["luts"].push_back({{"layer", c.layer}, {"ok", c.ok}, {"message", c.message}});
    if (cmp) {
      j["candidate"] = path_name(cmp->candidate);
      j["images"] = cmp->images;
      j["argmax_agree"] = cmp->argmax_agree;
      j["blocks"] = json::array();
      for (const BlockDeviation& d : cmp->blocks) {
        j["blocks"].push_back({{"block", role_name(d.role)},
                               {"chained_max_abs", d.chained_max_abs},
                               {"chained_rel", d.chained_rel},
                               {"isolated_max_abs", d.isolated_max_abs}});
      }
      j["logit_max_abs"] = cmp->logit_max_abs();
    }
    j["tolerance"] = o.tolerance;
    j["pass"] = pass;
    out << j.dump(2) << '\n';
  } else {
    for (const LutCheck& c : luts) {
      out << "lut " << std::left << std::setw(16) << c.layer << (c.ok ? "ok" : "FAIL: " + c.message) << '\n';
    }
    if (cmp) {
      out << "\nfloat vs " << path_name(cmp->candidate) << " over " << cmp->images << " images\n";
      out << std::left << std::setw(8) << "block" << std::right << std::setw(14) << "chained" << std::setw(12)
          << "relative" << std::setw(14) << "isolated" << '\n';
      out << std::scientific << std::setprecision(3);
      for (const BlockDeviation& d : cmp->blocks) {
        out << std::left << std::setw(8) << role_name(d.role) << std::right << std::setw(14) << d.chained_max_abs
            << std::setw(12) << d.chained_rel << std::setw(14) << d.isolated_max_abs << '\n';
      }
      out << std::defaultfloat << "argmax agreement " << cmp->argmax_agree << "/" << cmp->images << '\n';
      out << "logit max-abs " << cmp->logit_max_abs() << ", tolerance " << o.tolerance << '\n';
    }
    out << (pass ? "PASS" : "FAIL") << '\n';
  }
  if (!pass) throw VerifyFailed(luts_ok ? "logit deviation exceeds tolerance" : "activation LUT check failed");
  return kOk;
}

int cmd_report(const Options& o, std::ostream& out) {
  ModelConfig c = config_from_flags(o);
  if (!o.weights.empty()) {
    c = ModelConfig::from_metadata(read_weights(o.weights).metadata);
    check_quant_flag(o, c);
    if (o.iterations) c.ode_iterations = *o.iterations;
  }
  c.validate();
  const AccountingReport r = account(c);
  out << (o.format == "json" ? report_json(r) + "\n" : format_report(r));
  return kOk;
}

int cmd_gen_weights(const Options& o, std::ostream& out) {
  const ModelConfig c = config_from_flags(o);
  const WeightContainer w = gen_random_weights(o.seed, c);
  save_file(w, o.out);
  out << "wrote " << w.entries().size() << " entries to " << o.out << '\n';
  return kOk;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("-C,--iterations", o.iterations, "Euler iterations per ODE block")->check(CLI::Range(1, 10000));
  cmd->add_option("--threads", o.threads, "worker threads (default: TINYODE_THREADS or 1)")
      ->check(CLI::Range(1, 1024));
  cmd->add_option("--format", o.format, "output format")->check(CLI::IsMember({"text", "json"}));
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural-ODE / attention hybrid inference engine"};
  app.require_subcommand(1);
  Options o;
  const auto quant_check = CLI::IsMember({"none", "llt4", "llt8"});
  const auto path_check = CLI::IsMember({"float", "fixed"});

  CLI::App* infer = app.add_subcommand("infer", "classify one 96x96 PNG or PPM image");
  infer->add_option("--weights", o.weights, "weights container")->required();
  infer->add_option("--image", o.image, "input image")->required();
  infer->add_option("--quant", o.quant, "expected quantization of the container")->check(quant_check);
  infer->add_option("--path", o.path, "numeric path")->check(path_check);
  add_common(infer, o);

  CLI::App* verify = app.add_subcommand("verify", "compare a numeric path against the float path");
  verify->add_option("--weights", o.weights, "weights container")->required();
  verify->add_option("--quant", o.quant, "expected quantization of the container")->check(quant_check);
  verify->add_option("--path", o.path, "candidate path")->check(path_check)->default_str("fixed");
  verify->add_option("--seed", o.seed, "seed of the first random input");
  verify->add_option("--count", o.count, "number of random inputs")->check(CLI::Range(1, 100000));
  verify->add_option("--tolerance", o.tolerance, "max-abs logit deviation allowed")->check(CLI::NonNegativeNumber);
  add_common(verify, o);

  CLI::App* report = app.add_subcommand("report", "parameter, memory and FLOP accounting");
  report->add_option("--weights", o.weights, "take the configuration from a container");
  report->add_option("--quant", o.quant, "quantization (default llt8)")->check(quant_check);
  add_common(report, o);

  CLI::App* gen = app.add_subcommand("gen-weights", "write deterministic random weights");
  gen->add_option("--out", o.out, "output container")->required();
  gen->add_option("--seed", o.seed, "random seed");
  gen->add_option("--quant", o.quant, "quantization (default llt8)")->check(quant_check);
  gen->add_option("--attention", o.attention, "attention activation")->check(CLI::IsMember({"relu", "softmax"}));
  add_common(gen, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  if (verify->parsed() && verify->count("--path") == 0) o.path = "fixed";

  try {
    set_thread_count(o.threads ? *o.threads : thread_count_from_env(1));
    if (infer->parsed()) return cmd_infer(o, out);
    if (verify->parsed()) return cmd_verify(o, out);
    if (report->parsed()) return cmd_report(o, out);
    return cmd_gen_weights(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const MissingInput& e) {
    err << "error: " << e.what() << '\n';
    return kMissingInput;
  } catch (const VerifyFailed& e) {
    err << "verify failed: " << e.what() << '\n';
    return kVerifyFailed;
  } catch (const ContainerError& e) {
    err << "error: bad weights: " << e.what() << '\n';
    return kBadInput;
  } catch (const LutInvariantError& e) {
    err << "error: bad weights: " << e.what() << '\n';
    return kBadInput;
  } catch (const ImageError& e) {
    err << "error: bad image: " << e.what() << '\n';
    return kBadInput;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"tinyode"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace tinyode::cli
