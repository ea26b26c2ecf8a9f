#pragma once

#include "wordconf/asr.hpp"
#include "wordconf/checkpoint.hpp"
#include "wordconf/confidence.hpp"
#include "wordconf/datagen.hpp"
#include "wordconf/error.hpp"
#include "wordconf/io.hpp"
#include "wordconf/labeling.hpp"
#include "wordconf/metrics.hpp"
#include "wordconf/model.hpp"
#include "wordconf/optim.hpp"
#include "wordconf/pipeline.hpp"
#include "wordconf/records.hpp"
#include "wordconf/rng.hpp"
#include "wordconf/tensor.hpp"
#include "wordconf/tokenizer.hpp"
