// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ilm/ilm_objective.hpp"
#include "ilm/model.hpp"
#include "ilm/optimizer.hpp"

#include <optional>
#include <string>

namespace ilm {

struct Checkpoint {
    ModelParams<float> params;
    IlmVariantSpec spec;
    long long step = 0;
    std::optional<AdamState> adam;
};

/// Binary checkpoint: magic "ILMCKPT1", u32le header length, JSON header
/// (config + variant spec + step), then named tensors as
/// u16le name length, name, u8 rank, u32le dims, f32le payload.
void save_checkpoint(const std::string& path, ModelParams<float>& params,
                     const IlmVariantSpec& spec, long long step,
                     const AdamState* adam = nullptr);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace ilm
