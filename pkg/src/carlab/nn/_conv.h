#ifndef CARLAB_CONV_H
#define CARLAB_CONV_H

#include <stddef.h>
#include <string.h>

#define REAL float
#define SFX _f32
#include "_conv_impl.h"
#undef REAL
#undef SFX

#define REAL double
#define SFX _f64
#include "_conv_impl.h"
#undef REAL
#undef SFX

#endif
