#ifndef CXR_CXR_HPP
#define CXR_CXR_HPP

#include "cxr/common.hpp"
#include "cxr/data.hpp"
#include "cxr/diff.hpp"
#include "cxr/eval.hpp"
#include "cxr/explain.hpp"
#include "cxr/io.hpp"
#include "cxr/models.hpp"
#include "cxr/training.hpp"

#endif  // CXR_CXR_HPP
