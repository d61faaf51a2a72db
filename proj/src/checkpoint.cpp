// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "mm3d/error.hpp"
#include "mm3d/trainer.hpp"

namespace mm3d {

namespace {

constexpr const char* kFormat = "mm3d-checkpoint";

struct Entry {
    std::string name;
    const diff::Tensor* tensor;
};

struct MutableEntry {
    std::string name;
    diff::Tensor* tensor;
};

// One list, in blob order, so save and load cannot disagree.
template <class Ckpt, class Out>
void collect(Ckpt& ckpt, std::vector<Out>& out) {
    auto add = [&](const std::string& prefix, auto refs) {
        for (auto& r : refs) {
            out.push_back({prefix + r.name, r.tensor});
        }
    };
    add("online.", ckpt.online.refs());
    add("teacher.", ckpt.teacher.refs());
    add("", ckpt.decoder.refs());
    auto names = ckpt.online.refs();
    const auto dec = ckpt.decoder.refs();
    std::vector<std::string> trainable;
    for (auto& r : names) {
        trainable.push_back(r.name);
    }
    for (auto& r : dec) {
        trainable.push_back(r.name);
    }
    if (ckpt.adam.m.size() != trainable.size() || ckpt.adam.v.size() != trainable.size()) {
        throw CheckpointError("optimizer state does not match the model");
    }
    for (std::size_t i = 0; i < trainable.size(); ++i) {
        out.push_back({"adam.m." + trainable[i], &ckpt.adam.m[i]});
    }
    for (std::size_t i = 0; i < trainable.size(); ++i) {
        out.push_back({"adam.v." + trainable[i], &ckpt.adam.v[i]});
    }
}

void put_u32(std::string& out, std::uint32_t x) {
    for (int b = 0; b < 4; ++b) {
        out.push_back(static_cast<char>((x >> (8 * b)) & 0xffu));
    }
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::vector<Entry> entries;
    collect(ckpt, entries);
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t floats = 0;
    for (const auto& e : entries) {
        tensors.push_back({{"name", e.name}, {"shape", e.tensor->shape()}});
        floats += e.tensor->size();
    }
    const nlohmann::json header = {
        {"format", kFormat},
        {"version", kCheckpointVersion},
        {"config", to_json(ckpt.config)},
        {"config_hash", config_hash(ckpt.config)},
        {"epoch", ckpt.epoch},
        {"adam_step", ckpt.adam.step},
        {"rng", ckpt.rng_state},
        {"tensors", tensors},
        {"blob_bytes", floats * 4},
    };
    std::string out = header.dump();
    out.push_back('\n');
    out.reserve(out.size() + floats * 4);
    for (const auto& e : entries) {
        for (double x : e.tensor->values()) {
            put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
        }
    }
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    const std::size_t eol = bytes.find('\n');
    if (eol == std::string::npos) {
        throw CheckpointError("checkpoint is truncated: no complete header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(0, eol));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(fmt::format("checkpoint header is not valid JSON: {}", e.what()));
    }
    if (!header.is_object() || header.value("format", "") != kFormat) {
        throw CheckpointError("not an mm3d checkpoint");
    }
    try {
        const int version = header.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw CheckpointError(fmt::format("checkpoint version {} is not supported (expected {})", version,
                                              kCheckpointVersion));
        }
        Checkpoint ckpt;
        try {
            ckpt.config = train_config_from_json(header.at("config"));
        } catch (const ConfigError& e) {
            throw CheckpointError(fmt::format("checkpoint configuration: {}", e.what()));
        }
        if (header.at("config_hash").get<std::string>() != config_hash(ckpt.config)) {
            throw CheckpointError("checkpoint configuration hash does not match its configuration");
        }
        ckpt.epoch = header.at("epoch").get<std::size_t>();
        ckpt.rng_state = header.at("rng").get<std::string>();
        ckpt.online = zero_encoder(ckpt.config.encoder);
        ckpt.teacher = zero_encoder(ckpt.config.encoder);
        ckpt.decoder = zero_decoder(ckpt.config.decoder, ckpt.config.encoder);
        std::vector<ConstParamRef> trainable = std::as_const(ckpt.online).refs();
        for (auto& r : std::as_const(ckpt.decoder).refs()) {
            trainable.push_back(r);
        }
        ckpt.adam = zero_moments(trainable);
        ckpt.adam.step = header.at("adam_step").get<std::uint64_t>();

        std::vector<MutableEntry> entries;
        collect(ckpt, entries);
        const auto& listed = header.at("tensors");
        if (!listed.is_array() || listed.size() != entries.size()) {
            throw CheckpointError("checkpoint tensor list does not match its configuration");
        }
        std::size_t floats = 0;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (listed[i].at("name").get<std::string>() != entries[i].name ||
                listed[i].at("shape").get<diff::Shape>() != entries[i].tensor->shape()) {
                throw CheckpointError(fmt::format("checkpoint tensor {} does not match {}", i, entries[i].name));
            }
            floats += entries[i].tensor->size();
        }
        const std::size_t blob = bytes.size() - eol - 1;
        if (header.at("blob_bytes").get<std::size_t>() != floats * 4) {
            throw CheckpointError("checkpoint blob size disagrees with its tensor list");
        }
        if (blob != floats * 4) {
            throw CheckpointError(fmt::format("checkpoint is truncated: {} of {} data bytes", blob, floats * 4));
        }
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + eol + 1;
        for (auto& e : entries) {
            for (double& x : e.tensor->values()) {
                x = std::bit_cast<float>(get_u32(p));
                p += 4;
            }
        }
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(fmt::format("checkpoint header: {}", e.what()));
    }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError(fmt::format("cannot write {}", path.string()));
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError(fmt::format("write failed: {}", path.string()));
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(fmt::format("cannot open {}", path.string()));
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

} // namespace mm3d
