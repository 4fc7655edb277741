#pragma once

// Umbrella header for the D2I toy reinforcement-learning engine.

#include "d2i/env.hpp"
#include "d2i/errors.hpp"
#include "d2i/eval.hpp"
#include "d2i/grammar.hpp"
#include "d2i/grpo.hpp"
#include "d2i/policy.hpp"
#include "d2i/reward.hpp"
#include "d2i/trainer.hpp"
#include "d2i/vocab.hpp"
