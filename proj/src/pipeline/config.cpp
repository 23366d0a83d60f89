#include "microforge/pipeline/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace mf::pipeline {

namespace {

using json = nlohmann::ordered_json;

void require_object(const json& j, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
}

[[noreturn]] void unknown(const std::string& where, const std::string& key) {
    throw std::invalid_argument(where + ": unknown key '" + key + "'");
}

json to_json(const DatasetSpec& d) {
    return {{"kind", microgen::to_string(d.kind)}, {"n", d.n},
            {"resolution", d.resolution},          {"max_attempts", d.max_attempts},
            {"circle_radius", d.circle_radius}};
}

DatasetSpec dataset_from_json(const json& j, DatasetSpec d, const std::string& where) {
    require_object(j, where);
    for (const auto& [k, v] : j.items()) {
        if (k == "kind") d.kind = microgen::parse_kind(v.get<std::string>());
        else if (k == "n") d.n = v.get<std::size_t>();
        else if (k == "resolution") d.resolution = v.get<int>();
        else if (k == "max_attempts") d.max_attempts = v.get<std::size_t>();
        else if (k == "circle_radius") d.circle_radius = v.get<double>();
        else unknown(where, k);
    }
    return d;
}

json to_json(const homog::LabelOptions& o) {
    return {{"resolution", o.resolution},
            {"scheme", homog::to_string(o.solver.scheme)},
            {"tolerance", o.solver.tolerance},
            {"max_iterations", o.solver.max_iterations},
            {"plane_strain", o.solver.plane_strain},
            {"matrix", {{"young_modulus", o.matrix.young_modulus}, {"poisson_ratio", o.matrix.poisson_ratio}}},
            {"inclusion", {{"young_modulus", o.inclusion.young_modulus}, {"poisson_ratio", o.inclusion.poisson_ratio}}}};
}

homog::Material material_from_json(const json& j, homog::Material m, const std::string& where) {
    require_object(j, where);
    for (const auto& [k, v] : j.items()) {
        if (k == "young_modulus") m.young_modulus = v.get<double>();
        else if (k == "poisson_ratio") m.poisson_ratio = v.get<double>();
        else unknown(where, k);
    }
    return m;
}

homog::LabelOptions labeling_from_json(const json& j, homog::LabelOptions o) {
    require_object(j, "labeling");
    for (const auto& [k, v] : j.items()) {
        if (k == "resolution") o.resolution = v.get<int>();
        else if (k == "scheme") o.solver.scheme = homog::parse_scheme(v.get<std::string>());
        else if (k == "tolerance") o.solver.tolerance = v.get<double>();
        else if (k == "max_iterations") o.solver.max_iterations = v.get<int>();
        else if (k == "plane_strain") o.solver.plane_strain = v.get<bool>();
        else if (k == "matrix") o.matrix = material_from_json(v, o.matrix, "labeling.matrix");
        else if (k == "inclusion") o.inclusion = material_from_json(v, o.inclusion, "labeling.inclusion");
        else unknown("labeling", k);
    }
    return o;
}

json to_json(const TransferSpec& t) {
    return {{"probe", transfer::to_json(t.probe)}, {"finetune", transfer::to_json(t.finetune)},
            {"blocks", t.blocks},                  {"data_sizes", t.data_sizes},
            {"data_mode", t.data_mode},            {"cross_composite", t.cross_composite}};
}

TransferSpec transfer_from_json(const json& j, TransferSpec t) {
    require_object(j, "transfer");
    for (const auto& [k, v] : j.items()) {
        if (k == "probe") t.probe = transfer::probe_config_from_json(v, t.probe);
        else if (k == "finetune") t.finetune = transfer::probe_config_from_json(v, t.finetune);
        else if (k == "blocks") t.blocks = v.get<std::vector<int>>();
        else if (k == "data_sizes") t.data_sizes = v.get<std::vector<std::size_t>>();
        else if (k == "data_mode") t.data_mode = v.get<std::string>();
        else if (k == "cross_composite") t.cross_composite = v.get<bool>();
        else unknown("transfer", k);
    }
    return t;
}

json to_json(const SaliencySpec& s) {
    return {{"n_images", s.n_images}, {"components", s.components}, {"mode", s.mode}, {"standardized", s.standardized}};
}

SaliencySpec saliency_from_json(const json& j, SaliencySpec s) {
    require_object(j, "saliency");
    for (const auto& [k, v] : j.items()) {
        if (k == "n_images") s.n_images = v.get<std::size_t>();
        else if (k == "components") s.components = v.get<std::vector<std::string>>();
        else if (k == "mode") s.mode = v.get<std::string>();
        else if (k == "standardized") s.standardized = v.get<bool>();
        else unknown("saliency", k);
    }
    return s;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
    require_object(j, "config");
    RunConfig c;
    for (const auto& [k, v] : j.items()) {
        if (k == "seed") c.seed = v.get<std::uint64_t>();
        else if (k == "output_root") c.output_root = v.get<std::string>();
        else if (k == "threads") c.threads = v.get<unsigned>();
        else if (k == "pretrain_data") c.pretrain_data = dataset_from_json(v, c.pretrain_data, k);
        else if (k == "labeled_data") c.labeled_data = dataset_from_json(v, c.labeled_data, k);
        else if (k == "circle_data") c.circle_data = dataset_from_json(v, c.circle_data, k);
        else if (k == "labeling") c.labeling = labeling_from_json(v, c.labeling);
        else if (k == "model") c.model = mmae::config_from_json(v);
        else if (k == "training") c.training = mmae::train_config_from_json(v);
        else if (k == "mask_ratios") c.mask_ratios = v.get<std::vector<double>>();
        else if (k == "primary_mask_ratio") c.primary_mask_ratio = v.get<double>();
        else if (k == "transfer") c.transfer = transfer_from_json(v, c.transfer);
        else if (k == "saliency") c.saliency = saliency_from_json(v, c.saliency);
        else if (k == "reconstructions") c.reconstructions = v.get<std::size_t>();
        else unknown("config", k);
    }
    validate(c);
    return c;
}

RunConfig read_run_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read " + file.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(file.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

json to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["output_root"] = c.output_root.string();
    j["threads"] = c.threads;
    j["pretrain_data"] = to_json(c.pretrain_data);
    j["labeled_data"] = to_json(c.labeled_data);
    j["circle_data"] = to_json(c.circle_data);
    j["labeling"] = to_json(c.labeling);
    j["model"] = mmae::to_json(c.model);
    j["training"] = mmae::to_json(c.training);
    j["mask_ratios"] = c.mask_ratios;
    j["primary_mask_ratio"] = c.primary_mask_ratio;
    j["transfer"] = to_json(c.transfer);
    j["saliency"] = to_json(c.saliency);
    j["reconstructions"] = c.reconstructions;
    return j;
}

std::string config_hash(const RunConfig& c) {
    json j = to_json(c);
    j.erase("output_root");
    j.erase("threads");
    const std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void validate(const RunConfig& c) {
    c.model.validate();
    for (const auto* d : {&c.pretrain_data, &c.labeled_data, &c.circle_data}) {
        if (d->n > 0 && d->resolution != c.model.image_size) {
            throw std::invalid_argument("config: dataset resolution " + std::to_string(d->resolution) +
                                        " differs from model image_size " + std::to_string(c.model.image_size));
        }
    }
    if (c.pretrain_data.n == 0) throw std::invalid_argument("config: pretrain_data.n must be positive");
    if (c.mask_ratios.empty()) throw std::invalid_argument("config: mask_ratios is empty");
    std::set<double> seen;
    for (double r : c.mask_ratios) {
        mmae::sample_mask(c.model.n_patches(), r, 0);
        if (!seen.insert(r).second) throw std::invalid_argument("config: duplicate mask ratio");
    }
    if (!seen.contains(c.primary_mask_ratio)) {
        throw std::invalid_argument("config: primary_mask_ratio must be one of mask_ratios");
    }
    for (int k : c.transfer.blocks)
        if (k < 0 || k > c.model.encoder_depth) throw std::invalid_argument("config: block count out of range");
    transfer::parse_mode(c.transfer.data_mode);
    transfer::parse_mode(c.saliency.mode);
    for (const auto& comp : c.saliency.components) transfer::parse_component(comp);
    if (c.labeling.resolution < 0) throw std::invalid_argument("config: labeling.resolution must be >= 0");
}

}  // namespace mf::pipeline
