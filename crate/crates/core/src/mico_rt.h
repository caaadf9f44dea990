/* Mixed-precision kernel runtime interface.
 *
 * Portable 32-bit integer kernels. All arithmetic must match the reference
 * implementation bit for bit; float operations are single precision in the
 * order written below.
 *
 * Packing: element i of a row sits at bit (i % lanes) * bits of word
 * i / lanes, lanes = 32 / max(weight bits, activation bits). Fields are two's
 * complement; 1-bit fields encode +1 as 0 and -1 as 1. Unused fields are 0.
 */
#ifndef MICO_RT_H
#define MICO_RT_H

#include <stddef.h>
#include <stdint.h>

#define RT_OK 0
#define RT_ERR_MAGIC 1
#define RT_ERR_VERSION 2
#define RT_ERR_TRUNCATED 3
#define RT_ERR_ROLE 4
#define RT_ERR_CAPACITY 5
#define RT_ERR_MISSING 6
#define RT_ERR_OVERFLOW 7
#define RT_ERR_SHAPE 8

#define RT_ROLE_WEIGHT 0
#define RT_ROLE_BIAS 1
#define RT_ROLE_PACKED_WEIGHT 2
#define RT_ROLE_INT_BIAS 3
#define RT_ROLE_DATASET 4
#define RT_ROLE_INPUT 5

#define RT_CONTAINER_VERSION 1
#define RT_MAX_RANK 8
#ifndef RT_MAX_TENSORS
#define RT_MAX_TENSORS 64
#endif

/* A view of one container tensor. `data` points into the loaded blob and
 * may be unaligned; read it with memcpy (little-endian). */
typedef struct {
    uint32_t layer;
    uint8_t role;
    uint8_t rank;
    uint32_t dims[RT_MAX_RANK];
    uint8_t bits;   /* role 2: field width; role 3: 32 */
    uint8_t lanes;  /* role 2 only */
    float scale;    /* roles 2 and 3 */
    uint32_t count; /* payload elements (words for role 2) */
    const uint8_t *data;
} rt_tensor;

typedef struct {
    uint32_t count;
    rt_tensor tensors[RT_MAX_TENSORS];
} rt_weights;

typedef struct {
    uint32_t c, h, w;
    uint32_t kh, kw;
    uint32_t stride, pad;
    uint32_t oh, ow;
} rt_conv_geom;

/* Parses a "MICO" container: magic, u32 version, u32 count, then per tensor
 * u32 layer, u8 role, u8 rank, u32 dims[rank] and the payload
 *   roles 0,1,4,5: f32[prod(dims)]
 *   role 2: u8 bits, u8 lanes, f32 scale, u32[rows * ceil(dims[rank-1] / lanes)]
 *   role 3: u8 bits (32), f32 scale, i32[prod(dims)]
 * Returns RT_ERR_MAGIC, RT_ERR_VERSION, RT_ERR_TRUNCATED, RT_ERR_ROLE or
 * RT_ERR_CAPACITY on malformed input. */
int rt_load_weights(const uint8_t *blob, size_t len, rt_weights *out);

/* First tensor with this layer and role, or NULL. */
const rt_tensor *rt_find(const rt_weights *w, uint32_t layer, uint8_t role);

/* Copies n floats starting at element `offset` of an f32 tensor. */
void rt_tensor_f32(const rt_tensor *t, uint32_t offset, uint32_t n, float *out);

/* One DotP instruction: rs1 holds the wider operand (rs1_bits >= rs2_bits),
 * 32 / rs1_bits lanes, lane i of rs2 at bit i * rs2_bits. For 1x1 the
 * result is 32 - 2 * popcount(rs1 ^ rs2). */
int32_t rt_dotp(uint8_t rs1_bits, uint8_t rs2_bits, uint32_t rs1, uint32_t rs2);

/* Dynamic symmetric quantization of n floats.
 *   bits == 1: scale = (sum of |x| in index order) / n; q = x >= 0 ? 1 : -1
 *   else:      scale = max |x| / (2^(bits-1) - 1);
 *              q = clamp(roundf(x / scale), -qmax, qmax)  (half away from zero)
 * A zero, negative or non-finite scale is replaced by 1. bits may be 1..8. */
void rt_quantize(const float *x, uint32_t n, uint8_t bits, int8_t *q, float *scale);

/* out[i] = (float)acc[i] * scale, optional ReLU (y < 0 -> 0). With
 * transpose the rows x n input is written n x rows. */
void rt_dequantize(const int32_t *acc, uint32_t rows, uint32_t n, float scale, uint8_t relu, uint8_t transpose,
                   float *out);

/* Packs a rows x k int8 matrix, each row padded to ceil(k / lanes) words. */
void rt_pack(const int8_t *q, uint32_t rows, uint32_t k, uint8_t bits, uint8_t lanes, uint32_t *words);

void rt_unpack(const uint32_t *words, uint32_t rows, uint32_t k, uint8_t bits, uint8_t lanes, int8_t *q);

/* [C, H, W] int8 input to an (oh*ow) x (c*kh*kw) patch matrix, columns in
 * (c, ky, kx) order; out-of-bounds taps read pad_value. */
void rt_im2col(const int8_t *x, const rt_conv_geom *g, int8_t pad_value, int8_t *cols);

/* out[m][n] = sum over word j of DotP(activation row m word j, weight row n
 * word j), weight in rs1 when weight bits >= activation bits. For 1-bit x
 * 1-bit the count of pad fields (words * lanes - k) is subtracted. The
 * weight tensor is role 2 with dims [N, K]. Returns RT_ERR_OVERFLOW if an
 * accumulator leaves int32, RT_ERR_SHAPE on mismatched K or lanes. */
int rt_matmul(const uint32_t *a, uint32_t rows, uint32_t k, uint8_t abits, const rt_tensor *w, int32_t *out);

/* Conv2D: rt_im2col into `cols`, rt_pack into `packed`, rt_matmul into
 * `out` (position-major, (oh*ow) x N). */
int rt_conv2d(const int8_t *x, const rt_conv_geom *g, uint8_t abits, const rt_tensor *w, int8_t *cols,
              uint32_t *packed, int32_t *out);

/* Folds the role-3 bias into the accumulator domain and adds it to every
 * row with int32 saturation:
 *   prod = w_scale * a_scale
 *   folded = clamp(roundf(((float)q_b * b_scale) / prod), -2^30, 2^30) */
void rt_bias_add(int32_t *acc, uint32_t rows, uint32_t n, const rt_tensor *bias, float w_scale, float a_scale);

/* Copies final accumulators, transposing rows x n to n x rows if asked. */
void rt_output(const int32_t *acc, uint32_t rows, uint32_t n, uint8_t transpose, int32_t *out);

#endif
