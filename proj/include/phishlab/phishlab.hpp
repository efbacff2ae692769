#pragma once

#include "phishlab/corpus.hpp"
#include "phishlab/error.hpp"
#include "phishlab/eval.hpp"
#include "phishlab/model/classify.hpp"
#include "phishlab/model/config.hpp"
#include "phishlab/model/lora.hpp"
#include "phishlab/model/model.hpp"
#include "phishlab/model/serialize.hpp"
#include "phishlab/model/transformer.hpp"
#include "phishlab/nn/adamw.hpp"
#include "phishlab/nn/grad_check.hpp"
#include "phishlab/nn/kernels.hpp"
#include "phishlab/nn/loss.hpp"
#include "phishlab/nn/tensor.hpp"
#include "phishlab/synthgen.hpp"
#include "phishlab/tokenizer.hpp"
#include "phishlab/train.hpp"
