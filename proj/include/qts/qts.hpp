#ifndef QTS_QTS_HPP
#define QTS_QTS_HPP

#include "qts/corpus.hpp"
#include "qts/error.hpp"
#include "qts/eval.hpp"
#include "qts/metafeat.hpp"
#include "qts/model_io.hpp"
#include "qts/retrieval.hpp"
#include "qts/sampling.hpp"
#include "qts/similarity.hpp"
#include "qts/svr.hpp"
#include "qts/synth.hpp"

#endif  // QTS_QTS_HPP
