#pragma once

#include "vem/checkpoint.hpp"
#include "vem/config.hpp"
#include "vem/dataset.hpp"
#include "vem/eval.hpp"
#include "vem/linalg.hpp"
#include "vem/losses.hpp"
#include "vem/model.hpp"
#include "vem/objective.hpp"
#include "vem/optim.hpp"
#include "vem/trainer.hpp"
