#pragma once

#include "sprnet/checkpoint.hpp"
#include "sprnet/coco_eval.hpp"
#include "sprnet/config.hpp"
#include "sprnet/dataset.hpp"
#include "sprnet/gradcheck.hpp"
#include "sprnet/gradcheck_suite.hpp"
#include "sprnet/infer.hpp"
#include "sprnet/model.hpp"
#include "sprnet/parallel.hpp"
#include "sprnet/pipeline.hpp"
#include "sprnet/train.hpp"
