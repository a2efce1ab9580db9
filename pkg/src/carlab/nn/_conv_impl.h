/*
 * Direct convolution / pooling kernels, instantiated once per element type.
 *
 * Included twice from _conv.h with REAL and SFX defined. All arrays are
 * C-contiguous. Output rows are accumulated in register-sized blocks along
 * the time axis, which is the contiguous one.
 */

#define CAT_(a, b) a##b
#define CAT(a, b) CAT_(a, b)

#ifndef WG_ROWS
#define WG_ROWS 8
#define WG_MAXKW 16
#endif

typedef REAL CAT(vec, SFX) __attribute__((vector_size(64)));
typedef REAL CAT(hvec, SFX) __attribute__((vector_size(32)));
#define VEC CAT(vec, SFX)
#define HVEC CAT(hvec, SFX)
#define VLEN ((ptrdiff_t)(64 / sizeof(REAL)))
#define HLEN ((ptrdiff_t)(32 / sizeof(REAL)))

static inline VEC CAT(vload, SFX)(const REAL *p)
{
    VEC v;
    memcpy(&v, p, sizeof v);
    return v;
}

static inline HVEC CAT(hload, SFX)(const REAL *p)
{
    HVEC v;
    memcpy(&v, p, sizeof v);
    return v;
}

/*
 * One output tile: FB filters starting at f0, XV full vectors along the time
 * axis starting at x0, for output row y of sample n. FB * XV accumulators
 * stay in registers; each input load feeds FB multiply-adds.
 */
static inline __attribute__((always_inline)) void
CAT(valid_tile, SFX)(const REAL *xp, const REAL *w, const REAL *b, REAL *out,
                     ptrdiff_t n, ptrdiff_t f0, ptrdiff_t y, ptrdiff_t x0,
                     ptrdiff_t C, ptrdiff_t F, ptrdiff_t H, ptrdiff_t W,
                     ptrdiff_t KH, ptrdiff_t KW, const int FB, const int XV)
{
    const ptrdiff_t Hp = H + KH - 1, Wp = W + KW - 1;
    VEC acc[4][2];
    for (int k = 0; k < FB; ++k) {
        const REAL bias = b ? b[f0 + k] : (REAL)0;
        for (int v = 0; v < XV; ++v) acc[k][v] = (VEC){0} + bias;
    }
    for (ptrdiff_t c = 0; c < C; ++c)
    for (ptrdiff_t dy = 0; dy < KH; ++dy) {
        const REAL *irow = xp + ((n * C + c) * Hp + y + dy) * Wp + x0;
        const REAL *wr = w + ((f0 * C + c) * KH + dy) * KW;
        const ptrdiff_t fstride = C * KH * KW;
        for (ptrdiff_t dx = 0; dx < KW; ++dx) {
            VEC iv[2];
            for (int v = 0; v < XV; ++v) iv[v] = CAT(vload, SFX)(irow + dx + v * VLEN);
            for (int k = 0; k < FB; ++k) {
                const REAL wv = wr[k * fstride + dx];
                for (int v = 0; v < XV; ++v) acc[k][v] += iv[v] * wv;
            }
        }
    }
    for (int k = 0; k < FB; ++k) {
        REAL *orow = out + ((n * F + f0 + k) * H + y) * W + x0;
        for (int v = 0; v < XV; ++v) memcpy(orow + v * VLEN, &acc[k][v], sizeof(VEC));
    }
}

/* Narrow tail of a row (fewer than VLEN outputs left) for FB filters. */
static inline __attribute__((always_inline)) void
CAT(valid_tail, SFX)(const REAL *xp, const REAL *w, const REAL *b, REAL *out,
                     ptrdiff_t n, ptrdiff_t f0, ptrdiff_t y, ptrdiff_t x0,
                     ptrdiff_t C, ptrdiff_t F, ptrdiff_t H, ptrdiff_t W,
                     ptrdiff_t KH, ptrdiff_t KW, const int FB)
{
    const ptrdiff_t Hp = H + KH - 1, Wp = W + KW - 1;
    const ptrdiff_t fstride = C * KH * KW;
    ptrdiff_t x = x0;
    if (x + HLEN <= W) {
        HVEC acc[4];
        for (int k = 0; k < FB; ++k) acc[k] = (HVEC){0} + (b ? b[f0 + k] : (REAL)0);
        for (ptrdiff_t c = 0; c < C; ++c)
        for (ptrdiff_t dy = 0; dy < KH; ++dy) {
            const REAL *irow = xp + ((n * C + c) * Hp + y + dy) * Wp + x;
            const REAL *wr = w + ((f0 * C + c) * KH + dy) * KW;
            for (ptrdiff_t dx = 0; dx < KW; ++dx) {
                const HVEC iv = CAT(hload, SFX)(irow + dx);
                for (int k = 0; k < FB; ++k) acc[k] += iv * wr[k * fstride + dx];
            }
        }
        for (int k = 0; k < FB; ++k)
            memcpy(out + ((n * F + f0 + k) * H + y) * W + x, &acc[k], sizeof(HVEC));
        x += HLEN;
    }
    for (; x < W; ++x) {
        REAL acc[4];
        for (int k = 0; k < FB; ++k) acc[k] = b ? b[f0 + k] : (REAL)0;
        for (ptrdiff_t c = 0; c < C; ++c)
        for (ptrdiff_t dy = 0; dy < KH; ++dy) {
            const REAL *irow = xp + ((n * C + c) * Hp + y + dy) * Wp + x;
            const REAL *wr = w + ((f0 * C + c) * KH + dy) * KW;
            for (ptrdiff_t dx = 0; dx < KW; ++dx)
                for (int k = 0; k < FB; ++k) acc[k] += wr[k * fstride + dx] * irow[dx];
        }
        for (int k = 0; k < FB; ++k) out[((n * F + f0 + k) * H + y) * W + x] = acc[k];
    }
}

static inline __attribute__((always_inline)) void
CAT(valid_fblock, SFX)(const REAL *xp, const REAL *w, const REAL *b, REAL *out,
                       ptrdiff_t n, ptrdiff_t f0, ptrdiff_t C, ptrdiff_t F,
                       ptrdiff_t H, ptrdiff_t W, ptrdiff_t KH, ptrdiff_t KW,
                       const int FB)
{
    for (ptrdiff_t y = 0; y < H; ++y) {
        ptrdiff_t x0 = 0;
        for (; x0 + 2 * VLEN <= W; x0 += 2 * VLEN)
            CAT(valid_tile, SFX)(xp, w, b, out, n, f0, y, x0, C, F, H, W, KH, KW, FB, 2);
        for (; x0 + VLEN <= W; x0 += VLEN)
            CAT(valid_tile, SFX)(xp, w, b, out, n, f0, y, x0, C, F, H, W, KH, KW, FB, 1);
        if (x0 < W)
            CAT(valid_tail, SFX)(xp, w, b, out, n, f0, y, x0, C, F, H, W, KH, KW, FB);
    }
}

/* out(N,F,H,W) = b + sum_{c,dy,dx} w(F,C,KH,KW) * xp(N,C,H+KH-1,W+KW-1) */
static void CAT(conv_valid, SFX)(const REAL *xp, const REAL *w, const REAL *b,
                                 REAL *out, ptrdiff_t N, ptrdiff_t C,
                                 ptrdiff_t F, ptrdiff_t H, ptrdiff_t W,
                                 ptrdiff_t KH, ptrdiff_t KW)
{
    for (ptrdiff_t n = 0; n < N; ++n) {
        ptrdiff_t f0 = 0;
        for (; f0 + 4 <= F; f0 += 4)
            CAT(valid_fblock, SFX)(xp, w, b, out, n, f0, C, F, H, W, KH, KW, 4);
        switch (F - f0) {
        case 3: CAT(valid_fblock, SFX)(xp, w, b, out, n, f0, C, F, H, W, KH, KW, 3); break;
        case 2: CAT(valid_fblock, SFX)(xp, w, b, out, n, f0, C, F, H, W, KH, KW, 2); break;
        case 1: CAT(valid_fblock, SFX)(xp, w, b, out, n, f0, C, F, H, W, KH, KW, 1); break;
        default: break;
        }
    }
}

/*
 * Weight-gradient block for one (n, c, dy) and FB filters starting at f0:
 * rows y0..y1 of the output gradient against the matching input rows. Each
 * input vector load feeds FB products. Products are summed in REAL lanes and
 * flushed into the double totals once per block. Always inlined so that
 * constant FB and KW values unroll into registers.
 */
static inline __attribute__((always_inline)) void
CAT(wgrad_block, SFX)(const REAL *g, ptrdiff_t gstride, const REAL *xp,
                      double *dwr, ptrdiff_t dwstride, ptrdiff_t y0,
                      ptrdiff_t y1, ptrdiff_t W, ptrdiff_t Wp, const int FB,
                      const int KW)
{
    VEC lane[4][WG_MAXKW];
    double tail[4][WG_MAXKW];
    const ptrdiff_t Wv = W - W % VLEN;
    for (int k = 0; k < FB; ++k)
        for (int dx = 0; dx < KW; ++dx) {
            tail[k][dx] = 0.0;
            lane[k][dx] = (VEC){0};
        }
    for (ptrdiff_t y = y0; y < y1; ++y) {
        const REAL *irow = xp + y * Wp;
        for (ptrdiff_t x = 0; x < Wv; x += VLEN) {
            VEC xv[WG_MAXKW];
            for (int dx = 0; dx < KW; ++dx) xv[dx] = CAT(vload, SFX)(irow + x + dx);
            for (int k = 0; k < FB; ++k) {
                const VEC gv = CAT(vload, SFX)(g + k * gstride + y * W + x);
                for (int dx = 0; dx < KW; ++dx) lane[k][dx] += gv * xv[dx];
            }
        }
        for (ptrdiff_t x = Wv; x < W; ++x)
            for (int k = 0; k < FB; ++k) {
                const double gs = (double)g[k * gstride + y * W + x];
                for (int dx = 0; dx < KW; ++dx) tail[k][dx] += gs * (double)irow[x + dx];
            }
    }
    for (int k = 0; k < FB; ++k)
        for (int dx = 0; dx < KW; ++dx) {
            double s = tail[k][dx];
            for (ptrdiff_t j = 0; j < VLEN; ++j) s += (double)lane[k][dx][j];
            dwr[k * dwstride + dx] += s;
        }
}

#define WG_CASE(FB_, KW_) \
    CAT(wgrad_block, SFX)(gi, gstride, xi, dwr, dwstride, y0, y1, W, Wp, FB_, KW_)

static void CAT(wgrad_rows, SFX)(const REAL *gi, ptrdiff_t gstride,
                                 const REAL *xi, double *dwr,
                                 ptrdiff_t dwstride, ptrdiff_t H, ptrdiff_t W,
                                 ptrdiff_t Wp, int FB, ptrdiff_t KW)
{
    for (ptrdiff_t y0 = 0; y0 < H; y0 += WG_ROWS) {
        const ptrdiff_t y1 = (y0 + WG_ROWS < H) ? y0 + WG_ROWS : H;
        if (FB == 4) {
            switch (KW) {
            case 1: WG_CASE(4, 1); break;
            case 3: WG_CASE(4, 3); break;
            case 5: WG_CASE(4, 5); break;
            default: WG_CASE(4, (int)KW); break;
            }
        } else if (FB == 2) {
            switch (KW) {
            case 7: WG_CASE(2, 7); break;
            case 9: WG_CASE(2, 9); break;
            default: WG_CASE(2, (int)KW); break;
            }
        } else {
            switch (KW) {
            case 1: WG_CASE(1, 1); break;
            case 3: WG_CASE(1, 3); break;
            case 5: WG_CASE(1, 5); break;
            case 7: WG_CASE(1, 7); break;
            case 9: WG_CASE(1, 9); break;
            case 11: WG_CASE(1, 11); break;
            default: WG_CASE(1, (int)KW); break;
            }
        }
    }
}

#undef WG_CASE

/* dw(F,C,KH,KW) += sum_{n,y,x} g(N,F,H,W) * xp(N,C,y+dy,x+dx) */
static void CAT(conv_wgrad, SFX)(const REAL *xp, const REAL *g, double *dw,
                                 ptrdiff_t N, ptrdiff_t C, ptrdiff_t F,
                                 ptrdiff_t H, ptrdiff_t W, ptrdiff_t KH,
                                 ptrdiff_t KW)
{
    const ptrdiff_t Hp = H + KH - 1, Wp = W + KW - 1;
    const ptrdiff_t gstride = H * W, dwstride = C * KH * KW;
    const int fb_max = KW <= 5 ? 4 : (KW <= 9 ? 2 : 1);
    for (ptrdiff_t n = 0; n < N; ++n)
    for (ptrdiff_t c = 0; c < C; ++c)
    for (ptrdiff_t dy = 0; dy < KH; ++dy) {
        const REAL *xi = xp + ((n * C + c) * Hp + dy) * Wp;
        if (KW > WG_MAXKW) {
            for (ptrdiff_t f = 0; f < F; ++f) {
                const REAL *gi = g + (n * F + f) * gstride;
                double *dwr = dw + ((f * C + c) * KH + dy) * KW;
                for (ptrdiff_t dx = 0; dx < KW; ++dx) {
                    double t = 0.0;
                    for (ptrdiff_t y = 0; y < H; ++y)
                        for (ptrdiff_t x = 0; x < W; ++x)
                            t += (double)gi[y * W + x] * (double)xi[y * Wp + x + dx];
                    dwr[dx] += t;
                }
            }
            continue;
        }
        ptrdiff_t f = 0;
        for (int fb = fb_max; fb >= 1; fb /= 2)
            for (; f + fb <= F; f += fb)
                CAT(wgrad_rows, SFX)(g + (n * F + f) * gstride, gstride, xi,
                                     dw + ((f * C + c) * KH + dy) * KW, dwstride,
                                     H, W, Wp, fb, KW);
    }
}

/* out(P,H/ph,W/pw) = block means of x(P,H,W) */
static void CAT(pool_mean, SFX)(const REAL *x, REAL *out, ptrdiff_t P,
                                ptrdiff_t H, ptrdiff_t W, ptrdiff_t ph,
                                ptrdiff_t pw)
{
    const ptrdiff_t Ho = H / ph, Wo = W / pw;
    const REAL scale = (REAL)1 / (REAL)(ph * pw);
    for (ptrdiff_t p = 0; p < P; ++p)
    for (ptrdiff_t yo = 0; yo < Ho; ++yo) {
        REAL *orow = out + (p * Ho + yo) * Wo;
        for (ptrdiff_t xo = 0; xo < Wo; ++xo) {
            REAL s = 0;
            for (ptrdiff_t i = 0; i < ph; ++i) {
                const REAL *irow = x + (p * H + yo * ph + i) * W + xo * pw;
                for (ptrdiff_t j = 0; j < pw; ++j) s += irow[j];
            }
            orow[xo] = s * scale;
        }
    }
}

/* out(P,H*ph,W*pw) = nearest-neighbour replication of x(P,H,W) */
static void CAT(upsample, SFX)(const REAL *x, REAL *out, ptrdiff_t P,
                               ptrdiff_t H, ptrdiff_t W, ptrdiff_t ph,
                               ptrdiff_t pw)
{
    const ptrdiff_t Ho = H * ph, Wo = W * pw;
    for (ptrdiff_t p = 0; p < P; ++p)
    for (ptrdiff_t y = 0; y < H; ++y) {
        const REAL *irow = x + (p * H + y) * W;
        REAL *first = out + (p * Ho + y * ph) * Wo;
        for (ptrdiff_t xi = 0; xi < W; ++xi)
            for (ptrdiff_t j = 0; j < pw; ++j) first[xi * pw + j] = irow[xi];
        for (ptrdiff_t i = 1; i < ph; ++i) {
            REAL *orow = first + i * Wo;
            for (ptrdiff_t xo = 0; xo < Wo; ++xo) orow[xo] = first[xo];
        }
    }
}

#undef VEC
#undef HVEC
#undef VLEN
#undef HLEN
#undef CAT
#undef CAT_
