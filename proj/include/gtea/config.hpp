#pragma once

#include <map>
#include <string>

#include "gtea/synthetic.hpp"
#include "gtea/training.hpp"

namespace gtea::cli {

using KvMap = std::map<std::string, std::string>;

/// Parse a flat `key = value` config file ('#' starts a comment). Keys may
/// appear once; later consumers reject anything they do not recognize.
KvMap parse_config_file(const std::string& path);

std::string seq_model_name(encoders::SeqModelKind kind);
encoders::SeqModelKind seq_model_from(const std::string& name);
std::string attention_name(gnn::AttentionKind kind);
gnn::AttentionKind attention_from(const std::string& name);

/// Consume recognized training keys from `kv`, leaving unknown ones behind.
void apply_train_keys(training::TrainConfig& cfg, KvMap& kv);

/// Consume recognized generator keys from `kv`.
void apply_gen_keys(graph::GenSpec& spec, KvMap& kv);

/// Raise ConfigError if any keys were left unconsumed.
void reject_unknown(const KvMap& leftover, const std::string& context);

/// The effective key=value form of a config, echoed for reproducibility.
std::string render_train_config(const training::TrainConfig& cfg);
std::string render_gen_spec(const graph::GenSpec& spec);

}  // namespace gtea::cli
