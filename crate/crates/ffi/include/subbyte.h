/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SUBBYTE_H
#define SUBBYTE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SbStatus {
  SB_STATUS_OK = 0,
  SB_STATUS_NULL_POINTER = 1,
  SB_STATUS_INVALID_ARGUMENT = 2,
  SB_STATUS_CONFIG = 3,
  SB_STATUS_EXECUTION = 4,
  SB_STATUS_PARSE = 5,
  SB_STATUS_BUFFER_TOO_SMALL = 6,
  SB_STATUS_PANIC = 7,
} SbStatus;

/**
 * Kernel implementation used by [`sb_matmul`] and [`sb_conv2d`].
 */
typedef enum SbKernel {
  /**
   * Bit-serial with operands packed by `vbitpack`.
   */
  SB_KERNEL_BITSERIAL_VBITPACK = 0,
  /**
   * Bit-serial with operands packed by shifts, masks and multiplies.
   */
  SB_KERNEL_BITSERIAL_BASE_OPS = 1,
  /**
   * Byte-wide multiply-accumulate baseline.
   */
  SB_KERNEL_INT8 = 2,
} SbKernel;

/**
 * Opaque simulator instance.
 */
typedef struct SbMachine SbMachine;

/**
 * Machine parameters. All element widths 8 to 64 are supported.
 */
typedef struct SbMachineConfig {
  uint32_t lanes;
  uint32_t vlen_bits;
  uint32_t issue_overhead_cycles;
  uint32_t lane_datapath_bits;
  uint32_t scalar_cycles_per_rescale_element;
  double memory_bandwidth_factor;
  uint64_t memory_bytes;
} SbMachineConfig;

/**
 * Cycle and traffic totals since the machine was created or last cleared.
 */
typedef struct SbCycleReport {
  uint64_t total_cycles;
  uint64_t instructions;
  uint64_t ops_executed;
  uint64_t bytes_moved;
  uint64_t alu_cycles;
  uint64_t popcnt_cycles;
  uint64_t shacc_cycles;
  uint64_t bitpack_cycles;
  uint64_t memory_cycles;
  uint64_t scalar_cycles;
} SbCycleReport;

/**
 * Operand precision and signedness.
 */
typedef struct SbOperand {
  uint32_t bits;
  bool is_signed;
} SbOperand;

typedef struct SbConvShape {
  uint32_t in_channels;
  uint32_t out_channels;
  uint32_t kernel_h;
  uint32_t kernel_w;
  uint32_t stride;
  uint32_t padding;
  uint32_t input_h;
  uint32_t input_w;
} SbConvShape;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sb_version(void);

/**
 * Description of the last failure on the calling thread, or an empty string.
 * Valid until the next failing call on the same thread.
 */
const char *sb_last_error_message(void);

/**
 * The 4-lane, 4096-bit default machine.
 */
struct SbMachineConfig sb_config_default(void);

/**
 * The 8-lane, 8192-bit machine.
 */
struct SbMachineConfig sb_config_eight_lane(void);

/**
 * Create a machine. On success `*out` owns a handle to release with
 * [`sb_machine_free`].
 *
 * # Safety
 * `config` must point to a valid config and `out` to writable storage.
 */
enum SbStatus sb_machine_new(const struct SbMachineConfig *config, struct SbMachine **out);

/**
 * Release a machine. Null is ignored.
 *
 * # Safety
 * `m` must be null or a handle from [`sb_machine_new`] not yet freed.
 */
void sb_machine_free(struct SbMachine *m);

/**
 * Parse and execute a textual program, including its `.mem` directives.
 * Instructions before a failing one stay executed and counted.
 *
 * # Safety
 * `m` must be a live handle and `program` a NUL-terminated string.
 */
enum SbStatus sb_machine_run_text(struct SbMachine *m, const char *program);

/**
 * Totals over everything the machine executed since creation or the last
 * [`sb_machine_clear_report`].
 *
 * # Safety
 * `m` must be a live handle and `out` writable.
 */
enum SbStatus sb_machine_report(const struct SbMachine *m, struct SbCycleReport *out);

/**
 * Reset the cycle totals. Registers and memory are kept.
 *
 * # Safety
 * `m` must be a live handle.
 */
enum SbStatus sb_machine_clear_report(struct SbMachine *m);

/**
 * Current vector length and element width in bits.
 *
 * # Safety
 * `m` must be a live handle; `vl` and `sew_bits` writable.
 */
enum SbStatus sb_machine_vector_state(const struct SbMachine *m, uint64_t *vl, uint32_t *sew_bits);

/**
 * Bytes per vector register.
 *
 * # Safety
 * `m` must be a live handle.
 */
size_t sb_machine_register_bytes(const struct SbMachine *m);

/**
 * Copy the first `len` bytes of register `reg` into `buf`, element 0 first.
 *
 * # Safety
 * `m` must be a live handle and `buf` hold `len` writable bytes.
 */
enum SbStatus sb_machine_read_register(const struct SbMachine *m,
                                       uint32_t reg,
                                       uint8_t *buf,
                                       size_t len);

/**
 * Overwrite the first `len` bytes of register `reg`; the rest is kept.
 *
 * # Safety
 * `m` must be a live handle and `buf` hold `len` readable bytes.
 */
enum SbStatus sb_machine_write_register(struct SbMachine *m,
                                        uint32_t reg,
                                        const uint8_t *buf,
                                        size_t len);

/**
 * # Safety
 * `m` must be a live handle and `buf` hold `len` writable bytes.
 */
enum SbStatus sb_machine_read_memory(const struct SbMachine *m,
                                     uint64_t addr,
                                     uint8_t *buf,
                                     size_t len);

/**
 * # Safety
 * `m` must be a live handle and `buf` hold `len` readable bytes.
 */
enum SbStatus sb_machine_write_memory(struct SbMachine *m,
                                      uint64_t addr,
                                      const uint8_t *buf,
                                      size_t len);

/**
 * Pack both vectors into bit planes on the machine and return their
 * bit-serial dot product in `*out`. Mixed signedness is accepted.
 *
 * # Safety
 * `m` must be a live handle, `w` and `a` hold `len` values each, `out`
 * writable.
 */
enum SbStatus sb_dot_bitserial(struct SbMachine *m,
                               const int32_t *w,
                               struct SbOperand w_op,
                               const int32_t *a,
                               struct SbOperand a_op,
                               size_t len,
                               int64_t *out);

/**
 * `out[rows][cols] = a[rows][inner] * b[inner][cols]`. `b` is the weight
 * operand.
 *
 * # Safety
 * `m` must be a live handle; `a`, `b` and `out` must hold `rows*inner`,
 * `inner*cols` and `rows*cols` values.
 */
enum SbStatus sb_matmul(struct SbMachine *m,
                        enum SbKernel kernel,
                        const int32_t *a,
                        struct SbOperand a_op,
                        const int32_t *b,
                        struct SbOperand b_op,
                        size_t rows,
                        size_t inner,
                        size_t cols,
                        int64_t *out);

/**
 * Convolution of a CHW `input` with OIHW `weights`; writes the CHW
 * accumulators into `out`, which must hold exactly `out_len` values.
 *
 * # Safety
 * `m` must be a live handle, `shape` valid, `input` and `weights` sized by
 * `shape`, and `out` hold `out_len` writable values.
 */
enum SbStatus sb_conv2d(struct SbMachine *m,
                        enum SbKernel kernel,
                        const struct SbConvShape *shape,
                        const int32_t *input,
                        struct SbOperand input_op,
                        const int32_t *weights,
                        struct SbOperand weight_op,
                        int64_t *out,
                        size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUBBYTE_H */
