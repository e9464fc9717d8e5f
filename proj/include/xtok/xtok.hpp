#pragma once

#include "xtok/error.hpp"
#include "xtok/log_math.hpp"
#include "xtok/vocab.hpp"
#include "xtok/codec.hpp"
#include "xtok/lm.hpp"
#include "xtok/cover.hpp"
#include "xtok/convert_down.hpp"
#include "xtok/convert_up.hpp"
#include "xtok/losses.hpp"
#include "xtok/oracle.hpp"
#include "xtok/fixtures.hpp"
#include "xtok/verify.hpp"
