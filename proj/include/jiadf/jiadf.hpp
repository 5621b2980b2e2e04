#pragma once

#include "jiadf/autodiff.hpp"
#include "jiadf/checkpoint.hpp"
#include "jiadf/config.hpp"
#include "jiadf/data.hpp"
#include "jiadf/gradcheck.hpp"
#include "jiadf/heads.hpp"
#include "jiadf/metrics.hpp"
#include "jiadf/mmfa.hpp"
#include "jiadf/model.hpp"
#include "jiadf/optim.hpp"
#include "jiadf/serialize.hpp"
#include "jiadf/tensor.hpp"
#include "jiadf/train.hpp"
