#pragma once

#include "proclip/checkpoint.hpp"
#include "proclip/config.hpp"
#include "proclip/core.hpp"
#include "proclip/curriculum.hpp"
#include "proclip/data.hpp"
#include "proclip/embedding.hpp"
#include "proclip/eval.hpp"
#include "proclip/experiment.hpp"
#include "proclip/losses.hpp"
#include "proclip/models.hpp"
#include "proclip/optim.hpp"
#include "proclip/pretrain.hpp"
