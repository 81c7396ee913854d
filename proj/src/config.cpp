#include "apd/config.hpp"

#include <fstream>

using json = nlohmann::json;

namespace apd {
namespace {

template <class T>
void get_to_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

std::string backbone_name(Backbone b) {
  return b == Backbone::kDesk ? "desk" : "resnet18";
}
Backbone backbone_from(const std::string& s) {
  if (s == "desk") return Backbone::kDesk;
  if (s == "resnet18") return Backbone::kResNet18;
  throw std::invalid_argument("unknown backbone: " + s);
}

}  // namespace

json to_json(const RunConfig& cfg) {
  json j;
  j["model"] = {
      {"stages", cfg.model.encoder.stages},
      {"widths", cfg.model.encoder.widths},
      {"backbone", backbone_name(cfg.model.encoder.backbone)},
      {"context",
       {{"kernel_half_width", cfg.model.context.kernel_half_width},
        {"dilation", cfg.model.context.dilation},
        {"neighbor_count", cfg.model.context.neighbor_count},
        {"chunk_size", cfg.model.context.chunk_size}}},
      {"mask_ratio", cfg.model.mask_ratio},
      {"per_sample_perturb", cfg.model.per_sample_perturb},
      {"label_downsample",
       cfg.model.label_downsample == LabelDownsample::kNearest ? "nearest"
                                                               : "max"},
      {"ablation",
       {{"alignment", cfg.model.ablation.alignment},
        {"perturbation", cfg.model.ablation.perturbation},
        {"decoupling", cfg.model.ablation.decoupling}}}};
  j["loss"] = {
      {"lambda1", cfg.loss.lambda1},
      {"lambda2", cfg.loss.lambda2},
      {"gamma", cfg.loss.gamma},
      {"comparative_form",
       cfg.loss.comparative_form == ComparativeForm::kMargin ? "margin"
                                                             : "literal"},
      {"deep_supervision",
       cfg.loss.deep_supervision == DeepSupervisionForm::kBce ? "bce"
                                                              : "dice"}};
  j["train"] = {{"lr", cfg.lr},
                {"weight_decay", cfg.weight_decay},
                {"iterations", cfg.iterations},
                {"batch_size", cfg.batch_size},
                {"lr_schedule", cfg.lr_schedule},
                {"val_interval", cfg.val_interval},
                {"log_interval", cfg.log_interval},
                {"norm_eval_mode", cfg.norm_eval_mode},
                {"threads", cfg.threads},
                {"seed", cfg.seed}};
  j["data"] = {{"root", cfg.data_root}, {"out_dir", cfg.out_dir}};
  j["aug"] = {{"enabled", cfg.augment_enabled},
              {"flip_prob", cfg.aug.flip_prob},
              {"crop_size", cfg.aug.crop_size},
              {"brightness", cfg.aug.brightness},
              {"contrast", cfg.aug.contrast},
              {"saturation", cfg.aug.saturation},
              {"paired_photometric", cfg.aug.paired_photometric}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  if (j.contains("model")) {
    const json& m = j["model"];
    get_to_if(m, "stages", cfg.model.encoder.stages);
    get_to_if(m, "widths", cfg.model.encoder.widths);
    if (m.contains("backbone"))
      cfg.model.encoder.backbone = backbone_from(m["backbone"]);
    if (m.contains("context")) {
      const json& c = m["context"];
      get_to_if(c, "kernel_half_width", cfg.model.context.kernel_half_width);
      get_to_if(c, "dilation", cfg.model.context.dilation);
      get_to_if(c, "neighbor_count", cfg.model.context.neighbor_count);
      get_to_if(c, "chunk_size", cfg.model.context.chunk_size);
    }
    get_to_if(m, "mask_ratio", cfg.model.mask_ratio);
    get_to_if(m, "per_sample_perturb", cfg.model.per_sample_perturb);
    if (m.contains("label_downsample"))
      cfg.model.label_downsample = m["label_downsample"] == "nearest"
                                       ? LabelDownsample::kNearest
                                       : LabelDownsample::kMaxPool;
    if (m.contains("ablation")) {
      const json& a = m["ablation"];
      get_to_if(a, "alignment", cfg.model.ablation.alignment);
      get_to_if(a, "perturbation", cfg.model.ablation.perturbation);
      get_to_if(a, "decoupling", cfg.model.ablation.decoupling);
    }
  }
  if (j.contains("loss")) {
    const json& l = j["loss"];
    get_to_if(l, "lambda1", cfg.loss.lambda1);
    get_to_if(l, "lambda2", cfg.loss.lambda2);
    get_to_if(l, "gamma", cfg.loss.gamma);
    if (l.contains("comparative_form"))
      cfg.loss.comparative_form = l["comparative_form"] == "margin"
                                      ? ComparativeForm::kMargin
                                      : ComparativeForm::kLiteral;
    if (l.contains("deep_supervision"))
      cfg.loss.deep_supervision = l["deep_supervision"] == "bce"
                                      ? DeepSupervisionForm::kBce
                                      : DeepSupervisionForm::kDice;
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    get_to_if(t, "lr", cfg.lr);
    get_to_if(t, "weight_decay", cfg.weight_decay);
    get_to_if(t, "iterations", cfg.iterations);
    get_to_if(t, "batch_size", cfg.batch_size);
    get_to_if(t, "lr_schedule", cfg.lr_schedule);
    get_to_if(t, "val_interval", cfg.val_interval);
    get_to_if(t, "log_interval", cfg.log_interval);
    get_to_if(t, "norm_eval_mode", cfg.norm_eval_mode);
    get_to_if(t, "threads", cfg.threads);
    get_to_if(t, "seed", cfg.seed);
  }
  if (j.contains("data")) {
    get_to_if(j["data"], "root", cfg.data_root);
    get_to_if(j["data"], "out_dir", cfg.out_dir);
  }
  if (j.contains("aug")) {
    const json& a = j["aug"];
    get_to_if(a, "enabled", cfg.augment_enabled);
    get_to_if(a, "flip_prob", cfg.aug.flip_prob);
    get_to_if(a, "crop_size", cfg.aug.crop_size);
    get_to_if(a, "brightness", cfg.aug.brightness);
    get_to_if(a, "contrast", cfg.aug.contrast);
    get_to_if(a, "saturation", cfg.aug.saturation);
    get_to_if(a, "paired_photometric", cfg.aug.paired_photometric);
  }
  return cfg;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must be key=value: " + assignment);
  std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json* node = &j;
  std::size_t pos = 0;
  while (true) {
    const auto dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot - pos);
    if (dot == std::string::npos) {
      json parsed;
      try {
        parsed = json::parse(value);
      } catch (const json::parse_error&) {
        parsed = value;
      }
      (*node)[key] = parsed;
      break;
    }
    node = &(*node)[key];
    pos = dot + 1;
  }
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
  json j;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file: " + path);
    in >> j;
  }
  for (const auto& o : overrides) apply_override(j, o);
  return run_config_from_json(j);
}

}  // namespace apd
