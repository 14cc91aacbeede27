#pragma once

#include "infdit/checkpoint.hpp"
#include "infdit/common.hpp"
#include "infdit/config.hpp"
#include "infdit/diffusion.hpp"
#include "infdit/engine.hpp"
#include "infdit/geometry.hpp"
#include "infdit/image.hpp"
#include "infdit/image_io.hpp"
#include "infdit/model.hpp"
#include "infdit/model_backward.hpp"
#include "infdit/model_forward.hpp"
#include "infdit/rope.hpp"
#include "infdit/semantic.hpp"
#include "infdit/tensor.hpp"
#include "infdit/textures.hpp"
#include "infdit/train.hpp"
