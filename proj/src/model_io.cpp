#include "dbvae/model_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>

#include "dbvae/io.hpp"

namespace dbvae {

namespace {

constexpr char kMagic[4] = {'D', 'B', 'V', '1'};

void append_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64_le(std::string& out, double v) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double read_f64_le(const std::string& data, std::size_t offset) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[offset + i]))
                << (8 * i);
    }
    return std::bit_cast<double>(bits);
}

void append_layer(std::string& out, const DenseLayer& layer) {
    for (double v : layer.weight.values()) append_f64_le(out, v);
    for (double v : layer.bias) append_f64_le(out, v);
}

}  // namespace

void save_model(const std::string& path, const ModelParams& params,
                const nlohmann::json& metadata) {
    nlohmann::json header;
    header["input_dim"] = params.arch.input_dim;
    header["latent_dim"] = params.arch.latent_dim;
    header["encoder_widths"] = params.arch.encoder_widths;
    header["decoder_widths"] = params.arch.decoder_widths;
    {
        std::vector<std::string> acts;
        for (std::size_t i = 0; i < params.encoder.size(); ++i) {
            acts.emplace_back(activation_name(params.arch.encoder_activation(i)));
        }
        header["encoder_activations"] = acts;
        acts.clear();
        for (std::size_t i = 0; i < params.decoder.size(); ++i) {
            acts.emplace_back(activation_name(params.arch.decoder_activation(i)));
        }
        header["decoder_activations"] = acts;
    }
    for (auto it = metadata.begin(); it != metadata.end(); ++it) {
        header[it.key()] = it.value();
    }

    const std::string header_str = header.dump();
    std::string out;
    out.append(kMagic, 4);
    append_u32_le(out, static_cast<std::uint32_t>(header_str.size()));
    out += header_str;
    for (const DenseLayer& l : params.encoder) append_layer(out, l);
    for (const DenseLayer& l : params.decoder) append_layer(out, l);
    atomic_write_file(path, out);
}

LoadedModel load_model(const std::string& path) {
    const std::string data = read_file(path);
    if (data.size() < 8 || std::memcmp(data.data(), kMagic, 4) != 0) {
        throw IoError("not a DBV1 model file: " + path);
    }
    std::uint32_t header_len = 0;
    for (int i = 0; i < 4; ++i) {
        header_len |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[4 + i]))
                      << (8 * i);
    }
    if (data.size() < 8 + header_len) throw IoError("truncated model header: " + path);

    LoadedModel loaded;
    loaded.header = nlohmann::json::parse(data.substr(8, header_len));

    VaeArchitecture arch;
    arch.input_dim = loaded.header.at("input_dim").get<std::size_t>();
    arch.latent_dim = loaded.header.at("latent_dim").get<std::size_t>();
    arch.encoder_widths = loaded.header.at("encoder_widths").get<std::vector<std::size_t>>();
    arch.decoder_widths = loaded.header.at("decoder_widths").get<std::vector<std::size_t>>();
    arch.validate();

    ModelParams params;
    params.arch = arch;
    std::size_t offset = 8 + header_len;
    auto read_layer = [&](std::size_t in, std::size_t out_w, Activation act) {
        DenseLayer layer;
        layer.activation = act;
        layer.weight = Matrix(out_w, in);
        const std::size_t bytes = (layer.weight.size() + out_w) * 8;
        if (data.size() < offset + bytes) throw IoError("truncated model payload: " + path);
        for (double& v : layer.weight.values()) {
            v = read_f64_le(data, offset);
            offset += 8;
        }
        layer.bias.resize(out_w);
        for (double& v : layer.bias) {
            v = read_f64_le(data, offset);
            offset += 8;
        }
        return layer;
    };
    std::size_t in = arch.input_dim;
    for (std::size_t i = 0; i < arch.encoder_widths.size(); ++i) {
        params.encoder.push_back(
            read_layer(in, arch.encoder_widths[i], arch.encoder_activation(i)));
        in = arch.encoder_widths[i];
    }
    in = arch.latent_dim;
    for (std::size_t i = 0; i < arch.decoder_widths.size(); ++i) {
        params.decoder.push_back(
            read_layer(in, arch.decoder_widths[i], arch.decoder_activation(i)));
        in = arch.decoder_widths[i];
    }
    if (offset != data.size()) {
        throw IoError("model payload size mismatch: " + path);
    }
    loaded.params = std::move(params);
    return loaded;
}

}  // namespace dbvae
