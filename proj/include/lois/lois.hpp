#pragma once

#include "lois/config.hpp"
#include "lois/evaluation.hpp"
#include "lois/formats.hpp"
#include "lois/io.hpp"
#include "lois/mask_decoder.hpp"
#include "lois/matrix_nms.hpp"
#include "lois/question_encoder.hpp"
#include "lois/relation_attention.hpp"
#include "lois/rng.hpp"
#include "lois/synth.hpp"
#include "lois/training.hpp"
#include "lois/view_separation.hpp"
