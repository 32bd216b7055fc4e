#pragma once

// Everything except the CLI driver (pcrec/cli.hpp, which needs CLI11).

#include "pcrec/binary_io.hpp"
#include "pcrec/checkpoint.hpp"
#include "pcrec/config.hpp"
#include "pcrec/encoder.hpp"
#include "pcrec/error.hpp"
#include "pcrec/eval.hpp"
#include "pcrec/features.hpp"
#include "pcrec/finetune.hpp"
#include "pcrec/graph.hpp"
#include "pcrec/io.hpp"
#include "pcrec/numerics.hpp"
#include "pcrec/pipeline.hpp"
#include "pcrec/pretrain.hpp"
#include "pcrec/rng.hpp"
#include "pcrec/synth.hpp"
