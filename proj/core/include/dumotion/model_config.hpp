#pragma once

#include <algorithm>
#include <vector>

#include "dumotion/common.hpp"

namespace dumotion {

struct DUTransConfig {
    Index d = 512;             // hidden width
    Index layers = 7;          // encoder layers per branch
    Index decoder_layers = 1;  // united decoder layers
    Index n_heads = 8;
    std::vector<Index> biflow_layers = {3};  // 1-based encoder layer indices
    Index d_f = 100, d_b = 165;
    Index d_c = 1024, d_s = 1536;
    Index max_frames = 600;
    Index d_z = 32;        // condition embedding width
    double dropout = 0.1;  // training-time only

    Index d_h() const { return d_f + d_b; }

    void validate() const {
        require(d >= 2 && n_heads >= 1 && d % n_heads == 0, "d must divide by n_heads");
        require(layers >= 0 && decoder_layers >= 0 && layers + decoder_layers >= 1,
                "need at least one layer");
        require(d_f >= 1 && d_b >= 1 && d_c >= 1 && d_s >= 1, "dims must be >= 1");
        require(max_frames >= 2 && d_z >= 1, "max_frames >= 2, d_z >= 1");
        require(dropout >= 0 && dropout < 1, "dropout in [0,1)");
        require(d % 2 == 0, "d must be even (two-column sinusoid table)");
        for (Index b : biflow_layers)
            require(b >= 1 && b <= layers, "biflow layer index outside 1..layers");
    }

    bool has_biflow(Index layer_1based) const {
        return std::find(biflow_layers.begin(), biflow_layers.end(), layer_1based) !=
               biflow_layers.end();
    }
};

}  // namespace dumotion
