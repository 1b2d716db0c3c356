#include "promptclinic/checkpoint.hpp"

#include "promptclinic/errors.hpp"

#include "json.hpp"

#include <cstring>
#include <fstream>

namespace promptclinic {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'P', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

struct NamedTensor {
    std::string name;
    const Matrix* m;
};

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

void write_archive(const std::filesystem::path& path, const json& meta,
                   const std::vector<NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open for writing: " + path.string());
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    const std::string meta_str = meta.dump();
    write_u64(os, meta_str.size());
    os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    write_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        write_u32(os, static_cast<uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_u32(os, static_cast<uint32_t>(t.m->rows));
        write_u32(os, static_cast<uint32_t>(t.m->cols));
        os.write(reinterpret_cast<const char*>(t.m->data.data()),
                 static_cast<std::streamsize>(t.m->data.size() * sizeof(double)));
    }
    if (!os) throw CheckpointError("write failure: " + path.string());
}

struct Archive {
    json meta;
    std::map<std::string, Matrix> tensors;
};

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("bad magic in " + path.string());
    const uint32_t version = read_u32(is);
    if (version != kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const uint64_t meta_len = read_u64(is);
    std::string meta_str(meta_len, '\0');
    is.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    Archive a;
    try {
        a.meta = json::parse(meta_str);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("corrupt metadata: ") + e.what());
    }
    const uint32_t count = read_u32(is);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const uint32_t rows = read_u32(is);
        const uint32_t cols = read_u32(is);
        Matrix m(static_cast<int>(rows), static_cast<int>(cols));
        is.read(reinterpret_cast<char*>(m.data.data()),
                static_cast<std::streamsize>(m.data.size() * sizeof(double)));
        if (!is) throw CheckpointError("truncated tensor data in " + path.string());
        a.tensors.emplace(std::move(name), std::move(m));
    }
    return a;
}

json adapters_meta(const AdapterSet& adapters) {
    json j = json::object();
    for (const auto& [target, ad] : adapters.by_target)
        j[target] = {{"rank", ad.rank}, {"alpha", ad.alpha}};
    return j;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const StrategyModel& sm,
                     TrainPolicy policy) {
    json meta;
    meta["kind"] = "strategy_model";
    meta["model"] = {{"d_model", sm.cfg.d_model},   {"n_layers", sm.cfg.n_layers},
                     {"n_heads", sm.cfg.n_heads},   {"d_ff", sm.cfg.d_ff},
                     {"max_len", sm.cfg.max_len},   {"mode", mode_name(sm.cfg.mode)},
                     {"vocab_size", sm.cfg.vocab_size}, {"tied_head", sm.cfg.tied_head}};
    meta["strategy"] = strategy_name(sm.strategy);
    meta["policy"] = policy_name(policy);
    meta["template"] = {{"mode", template_mode_name(sm.tmpl.mode)},
                        {"pattern", sm.tmpl.pattern},
                        {"instruction", sm.tmpl.instruction}};
    meta["verbalizer"] = {{"AD", sm.verbalizer.ad_text}, {"HC", sm.verbalizer.hc_text}};
    std::vector<std::string> vocab_tokens(sm.vocab.tokens().begin() + kNumReserved,
                                          sm.vocab.tokens().end());
    meta["vocab"] = vocab_tokens;
    meta["lora"] = adapters_meta(sm.adapters);
    meta["soft_prompt_length"] = sm.soft_prompt ? sm.soft_prompt->length() : 0;

    std::vector<NamedTensor> tensors;
    for (const auto& t : named_tensors(const_cast<ModelParams&>(sm.params)))
        tensors.push_back({t.name, t.m});
    for (const auto& [target, ad] : sm.adapters.by_target) {
        tensors.push_back({"lora." + target + ".A", &ad.a});
        tensors.push_back({"lora." + target + ".B", &ad.b});
    }
    if (sm.soft_prompt) tensors.push_back({"soft_prompt", &sm.soft_prompt->vectors});
    write_archive(path, meta, tensors);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    Archive a = read_archive(path);
    if (a.meta.value("kind", "") != "strategy_model")
        throw CheckpointError("not a strategy-model checkpoint: " + path.string());

    LoadedCheckpoint out;
    StrategyModel& sm = out.model;
    const json& jm = a.meta.at("model");
    sm.cfg.d_model = jm.at("d_model").get<int>();
    sm.cfg.n_layers = jm.at("n_layers").get<int>();
    sm.cfg.n_heads = jm.at("n_heads").get<int>();
    sm.cfg.d_ff = jm.at("d_ff").get<int>();
    sm.cfg.max_len = jm.at("max_len").get<int>();
    sm.cfg.mode = mode_from_name(jm.at("mode").get<std::string>());
    sm.cfg.vocab_size = jm.at("vocab_size").get<int>();
    sm.cfg.tied_head = jm.at("tied_head").get<bool>();
    sm.strategy = strategy_from_name(a.meta.at("strategy").get<std::string>());
    out.policy = policy_from_name(a.meta.at("policy").get<std::string>());
    sm.tmpl.mode = template_mode_from_name(a.meta.at("template").at("mode").get<std::string>());
    sm.tmpl.pattern = a.meta.at("template").at("pattern").get<std::string>();
    sm.tmpl.instruction = a.meta.at("template").at("instruction").get<std::string>();
    sm.verbalizer.ad_text = a.meta.at("verbalizer").at("AD").get<std::string>();
    sm.verbalizer.hc_text = a.meta.at("verbalizer").at("HC").get<std::string>();
    sm.vocab = Vocabulary::from_tokens(a.meta.at("vocab").get<std::vector<std::string>>());
    if (sm.vocab.size() != sm.cfg.vocab_size)
        throw CheckpointError("vocabulary size does not match the stored config");

    sm.params = init_params(sm.cfg, 0);
    for (auto& t : named_tensors(sm.params)) {
        auto it = a.tensors.find(t.name);
        if (it == a.tensors.end())
            throw CheckpointError("checkpoint is missing tensor '" + t.name + "'");
        if (it->second.rows != t.m->rows || it->second.cols != t.m->cols)
            throw CheckpointError("tensor '" + t.name + "' has the wrong shape");
        *t.m = it->second;
    }

    for (const auto& [target, spec] : a.meta.at("lora").items()) {
        LoraAdapter ad;
        ad.target = target;
        ad.rank = spec.at("rank").get<int>();
        ad.alpha = spec.at("alpha").get<double>();
        auto ait = a.tensors.find("lora." + target + ".A");
        auto bit = a.tensors.find("lora." + target + ".B");
        if (ait == a.tensors.end() || bit == a.tensors.end())
            throw CheckpointError("checkpoint is missing adapter tensors for '" + target + "'");
        ad.a = ait->second;
        ad.b = bit->second;
        sm.adapters.by_target.emplace(target, std::move(ad));
    }

    const int sp_len = a.meta.at("soft_prompt_length").get<int>();
    if (sp_len > 0) {
        auto it = a.tensors.find("soft_prompt");
        if (it == a.tensors.end()) throw CheckpointError("checkpoint is missing the soft prompt");
        SoftPrompt sp;
        sp.vectors = it->second;
        sm.soft_prompt = std::move(sp);
    }
    return out;
}

void save_adapters(const std::filesystem::path& path, const AdapterSet& adapters) {
    json meta;
    meta["kind"] = "adapters";
    meta["lora"] = adapters_meta(adapters);
    std::vector<NamedTensor> tensors;
    for (const auto& [target, ad] : adapters.by_target) {
        tensors.push_back({"lora." + target + ".A", &ad.a});
        tensors.push_back({"lora." + target + ".B", &ad.b});
    }
    write_archive(path, meta, tensors);
}

AdapterSet load_adapters(const std::filesystem::path& path) {
    Archive a = read_archive(path);
    if (a.meta.value("kind", "") != "adapters")
        throw CheckpointError("not an adapter checkpoint: " + path.string());
    AdapterSet set;
    for (const auto& [target, spec] : a.meta.at("lora").items()) {
        LoraAdapter ad;
        ad.target = target;
        ad.rank = spec.at("rank").get<int>();
        ad.alpha = spec.at("alpha").get<double>();
        ad.a = a.tensors.at("lora." + target + ".A");
        ad.b = a.tensors.at("lora." + target + ".B");
        set.by_target.emplace(target, std::move(ad));
    }
    return set;
}

} // namespace promptclinic
