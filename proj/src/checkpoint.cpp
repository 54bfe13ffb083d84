#include "vlur/harness/checkpoint.hpp"

namespace vlur::harness {

using nlohmann::json;

void save_checkpoint(const std::string& path, const restorer::Restorer<float>& model,
                     const clf::SceneClassifier* classifier, nn::Adam<float>* optimizer,
                     const CheckpointMeta& meta) {
  io::Archive a;
  for (const auto& [name, var] : model.params().all()) a.tensors["restorer." + name] = var.val();
  if (classifier) {
    a.tensors["scene_classifier.adapter.w"] = classifier->adapter_weight();
    a.tensors["scene_classifier.adapter.b"] = classifier->adapter_bias();
  }
  if (optimizer) {
    const auto& params = model.params().all();
    for (size_t i = 0; i < params.size(); ++i) {
      a.tensors["opt.m." + params[i].first] = optimizer->m_state()[i];
      a.tensors["opt.v." + params[i].first] = optimizer->v_state()[i];
    }
  }
  a.meta["kind"] = "vlur-checkpoint";
  a.meta["checkpoint_version"] = kCheckpointVersion;
  a.meta["epoch"] = meta.epoch;
  a.meta["step"] = meta.step;
  a.meta["adam_step"] = optimizer ? optimizer->step_count() : meta.adam_step;
  a.meta["has_optimizer"] = optimizer != nullptr;
  a.meta["sc_frozen"] = classifier ? classifier->frozen() : meta.sc_frozen;
  a.meta["config"] = meta.config;
  // counter-based RNG: position is fully described by seed + counters
  a.meta["rng"] = {{"seed", meta.seed}, {"epoch", meta.epoch}, {"step", meta.step}};
  io::save_archive(path, a);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  LoadedCheckpoint ck;
  ck.archive = io::load_archive(path);
  const json& m = ck.archive.meta;
  if (!m.is_object() || m.value("kind", "") != "vlur-checkpoint")
    throw MigrationError(path + " is not a vlur checkpoint");
  const int version = m.value("checkpoint_version", -1);
  if (version != kCheckpointVersion)
    throw MigrationError("checkpoint version " + std::to_string(version) +
                         " is not supported (expected " + std::to_string(kCheckpointVersion) +
                         "); refusing to reinterpret");
  ck.meta.epoch = m.value("epoch", int64_t{0});
  ck.meta.step = m.value("step", int64_t{0});
  ck.meta.adam_step = m.value("adam_step", int64_t{0});
  ck.meta.sc_frozen = m.value("sc_frozen", false);
  ck.meta.has_optimizer = m.value("has_optimizer", false);
  ck.meta.config = m.value("config", json::object());
  if (m.contains("rng")) ck.meta.seed = m["rng"].value("seed", uint64_t{0});
  ck.content_hash = ck.archive.content_hash;
  return ck;
}

void apply_restorer(const LoadedCheckpoint& ck, restorer::Restorer<float>& model) {
  std::map<std::string, Tensorf> section;
  for (const auto& [name, t] : ck.archive.tensors)
    if (name.rfind("restorer.", 0) == 0) section.emplace(name.substr(9), t);
  std::map<std::string, Tensorf> full;
  for (auto& [n, t] : section) full.emplace(n, std::move(t));
  model.params().load(full);
}

void apply_adapter(const LoadedCheckpoint& ck, clf::SceneClassifier& classifier) {
  auto wi = ck.archive.tensors.find("scene_classifier.adapter.w");
  auto bi = ck.archive.tensors.find("scene_classifier.adapter.b");
  if (wi == ck.archive.tensors.end() || bi == ck.archive.tensors.end())
    throw MigrationError("checkpoint has no scene_classifier.adapter section");
  classifier.set_adapter(wi->second, bi->second);
  classifier.set_frozen(ck.meta.sc_frozen);
}

void apply_optimizer(const LoadedCheckpoint& ck, const restorer::Restorer<float>& model,
                     nn::Adam<float>& optimizer) {
  if (!ck.meta.has_optimizer) throw MigrationError("checkpoint carries no optimizer state");
  const auto& params = model.params().all();
  for (size_t i = 0; i < params.size(); ++i) {
    auto mi = ck.archive.tensors.find("opt.m." + params[i].first);
    auto vi = ck.archive.tensors.find("opt.v." + params[i].first);
    if (mi == ck.archive.tensors.end() || vi == ck.archive.tensors.end())
      throw MigrationError("checkpoint optimizer state is missing " + params[i].first);
    if (mi->second.shape != params[i].second.shape())
      throw MigrationError("optimizer state shape mismatch for " + params[i].first);
    optimizer.m_state()[i] = mi->second;
    optimizer.v_state()[i] = vi->second;
  }
  optimizer.set_step_count(ck.meta.adam_step);
}

uint64_t checkpoint_file_hash(const std::string& path) {
  return io::load_archive(path).content_hash;
}

}  // namespace vlur::harness
