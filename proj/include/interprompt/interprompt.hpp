#pragma once

#include "interprompt/text.hpp"
#include "interprompt/hashing.hpp"
#include "interprompt/config.hpp"
#include "interprompt/corpus.hpp"
#include "interprompt/prompt_builder.hpp"
#include "interprompt/completion_parser.hpp"
#include "interprompt/metrics.hpp"
#include "interprompt/significance.hpp"
#include "interprompt/loss_lab.hpp"
#include "interprompt/llm_backend.hpp"
#include "interprompt/manifest.hpp"
#include "interprompt/report.hpp"
#include "interprompt/commands.hpp"
