#pragma once

#include "sgml/bench.hpp"
#include "sgml/distribution.hpp"
#include "sgml/error.hpp"
#include "sgml/eval.hpp"
#include "sgml/exact_w2.hpp"
#include "sgml/graph_data.hpp"
#include "sgml/ot.hpp"
#include "sgml/proptest.hpp"
#include "sgml/random.hpp"
#include "sgml/sgcn.hpp"
#include "sgml/train.hpp"
