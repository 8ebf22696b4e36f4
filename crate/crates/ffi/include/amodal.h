#ifndef AMODAL_H
#define AMODAL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum AmodalStatus {
  AMODAL_STATUS_OK = 0,
  AMODAL_STATUS_NULL_POINTER = 1,
  AMODAL_STATUS_INVALID_ARGUMENT = 2,
  AMODAL_STATUS_INVALID_SCHEME = 3,
  AMODAL_STATUS_SHAPE_MISMATCH = 4,
  AMODAL_STATUS_PANIC = 5,
} AmodalStatus;

/*
 Running TP/FP/FN counters for visible, invisible and total mIoU.
 */
typedef struct AmodalAccumulator AmodalAccumulator;

/*
 A grouping of the 19 classes into K groups.
 */
typedef struct AmodalScheme AmodalScheme;

/*
 Message of the last failed call on this thread. Valid until the next
 failing call on the same thread; empty when nothing failed.
 */
const char *amodal_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *amodal_version(void);

/*
 One of the shipped schemes: `k` = 3 or 4. Returns NULL for any other `k`.
 */
struct AmodalScheme *amodal_scheme_preset(uint32_t k);

/*
 Parses a scheme from JSON (`{"name": .., "groups": [{"name": .., "classes": [..]}, ..]}`).

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AmodalStatus amodal_scheme_from_json(const char *json, struct AmodalScheme **out);

/*
 # Safety
 `scheme` must come from this library and not be used afterwards.
 */
void amodal_scheme_free(struct AmodalScheme *scheme);

/*
 Per-pixel vector length L, or 0 for NULL.

 # Safety
 `scheme` must be NULL or a live scheme handle.
 */
size_t amodal_scheme_vector_len(const struct AmodalScheme *scheme);

/*
 Number of groups K, or 0 for NULL.

 # Safety
 `scheme` must be NULL or a live scheme handle.
 */
size_t amodal_scheme_num_groups(const struct AmodalScheme *scheme);

/*
 Encodes `height*width` label pairs into `out` (`height*width*L` floats, row-major).

 Returns the number of void visible pixels and of dropped same-group
 occlusions through the optional `invalid` and `dropped` pointers.

 # Safety
 `visible` and `occluded` must hold `height*width` bytes; `out` must hold
 `out_len` floats. `invalid` and `dropped` may be NULL.
 */
enum AmodalStatus amodal_encode(const struct AmodalScheme *scheme,
                                const uint8_t *visible,
                                const uint8_t *occluded,
                                size_t height,
                                size_t width,
                                float *out,
                                size_t out_len,
                                uint64_t *invalid,
                                uint64_t *dropped);

/*
 Visible trainIds of a `height*width*L` tensor into `out` (`height*width` bytes).

 # Safety
 Buffers must have the stated lengths.
 */
enum AmodalStatus amodal_decode_visible(const struct AmodalScheme *scheme,
                                        const float *tensor,
                                        size_t tensor_len,
                                        size_t height,
                                        size_t width,
                                        uint8_t *out);

/*
 Occluded trainIds (255 where no occluded class is present).

 # Safety
 Buffers must have the stated lengths.
 */
enum AmodalStatus amodal_decode_occluded(const struct AmodalScheme *scheme,
                                         const float *tensor,
                                         size_t tensor_len,
                                         size_t height,
                                         size_t width,
                                         uint8_t *out);

/*
 Class of group `group` per pixel (255 where the group is absent).

 # Safety
 Buffers must have the stated lengths.
 */
enum AmodalStatus amodal_decode_group(const struct AmodalScheme *scheme,
                                      const float *tensor,
                                      size_t tensor_len,
                                      size_t height,
                                      size_t width,
                                      size_t group,
                                      uint8_t *out);

struct AmodalAccumulator *amodal_accumulator_new(void);

/*
 # Safety
 `acc` must come from this library and not be used afterwards.
 */
void amodal_accumulator_free(struct AmodalAccumulator *acc);

/*
 Adds one frame. All label buffers hold `height*width` trainIds (255 =
 void). `region` marks pasted occluder pixels (nonzero = inside); NULL
 means the whole frame.

 # Safety
 Non-NULL buffers must hold `height*width` bytes.
 */
enum AmodalStatus amodal_accumulate(struct AmodalAccumulator *acc,
                                    const uint8_t *gt_visible,
                                    const uint8_t *gt_occluded,
                                    const uint8_t *pred_visible,
                                    const uint8_t *pred_occluded,
                                    const uint8_t *region,
                                    size_t height,
                                    size_t width);

/*
 Adds the counters of `src` into `dst`.

 # Safety
 Both must be live accumulator handles.
 */
enum AmodalStatus amodal_accumulator_merge(struct AmodalAccumulator *dst,
                                           const struct AmodalAccumulator *src);

/*
 Visible, invisible and total mIoU. A variant with no evaluated pixel is
 reported as NaN. `strict` averages over all 19 classes.

 # Safety
 `acc` must be a live handle; output pointers may be NULL.
 */
enum AmodalStatus amodal_accumulator_miou(const struct AmodalAccumulator *acc,
                                          bool strict,
                                          double *visible,
                                          double *invisible,
                                          double *total);

/*
 Seed of one frame's random stream for a run seed. Returns 0 and sets the
 last error for a NULL or non-UTF-8 frame id.

 # Safety
 `frame_id` must be NULL or NUL-terminated.
 */
uint64_t amodal_frame_seed(uint64_t master_seed, const char *frame_id);

#endif  /* AMODAL_H */
