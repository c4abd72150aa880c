//! C interface to the subbyte simulator.
//!
//! Every function returns an [`SbStatus`]. On failure a description is kept
//! per thread and can be read with [`sb_last_error_message`]. Machines are
//! opaque handles created by [`sb_machine_new`] and released with
//! [`sb_machine_free`]. Tensor values cross the boundary as `int32_t`, one per
//! element, row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use subbyte_core::isa::parse_program;
use subbyte_core::kernels::{
    conv2d_bitserial, conv2d_int8_baseline, dot_bitserial, matmul_bitserial, matmul_int8_baseline, pack_bitplanes,
    KernelOutput, MixedSign, PackMethod,
};
use subbyte_core::perf::CycleReport;
use subbyte_core::tensor::{ConvParams, QuantTensor, Signedness};
use subbyte_core::{Error, Machine, MachineConfig, Sew};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Execution = 4,
    Parse = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Kernel implementation used by [`sb_matmul`] and [`sb_conv2d`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbKernel {
    /// Bit-serial with operands packed by `vbitpack`.
    BitserialVbitpack = 0,
    /// Bit-serial with operands packed by shifts, masks and multiplies.
    BitserialBaseOps = 1,
    /// Byte-wide multiply-accumulate baseline.
    Int8 = 2,
}

/// Machine parameters. All element widths 8 to 64 are supported.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbMachineConfig {
    pub lanes: u32,
    pub vlen_bits: u32,
    pub issue_overhead_cycles: u32,
    pub lane_datapath_bits: u32,
    pub scalar_cycles_per_rescale_element: u32,
    pub memory_bandwidth_factor: f64,
    pub memory_bytes: u64,
}

/// Cycle and traffic totals since the machine was created or last cleared.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SbCycleReport {
    pub total_cycles: u64,
    pub instructions: u64,
    pub ops_executed: u64,
    pub bytes_moved: u64,
    pub alu_cycles: u64,
    pub popcnt_cycles: u64,
    pub shacc_cycles: u64,
    pub bitpack_cycles: u64,
    pub memory_cycles: u64,
    pub scalar_cycles: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SbConvShape {
    pub in_channels: u32,
    pub out_channels: u32,
    pub kernel_h: u32,
    pub kernel_w: u32,
    pub stride: u32,
    pub padding: u32,
    pub input_h: u32,
    pub input_w: u32,
}

/// Operand precision and signedness.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SbOperand {
    pub bits: u32,
    pub is_signed: bool,
}

/// Opaque simulator instance.
pub struct SbMachine {
    inner: Machine,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SbStatus {
    match e {
        Error::Config(_) | Error::UnsupportedSew(_) => SbStatus::Config,
        Error::Parse { .. } | Error::Format(_) => SbStatus::Parse,
        Error::Shape(_)
        | Error::Signedness(_)
        | Error::ValueRange { .. }
        | Error::Precision(_)
        | Error::Quant(_)
        | Error::Accumulator(_) => SbStatus::InvalidArgument,
        _ => SbStatus::Execution,
    }
}

struct Fail(SbStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SbStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SbStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SbStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to a live value of `T`.
unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// # Safety
/// `p` must be null or point to a live value of `T` not aliased elsewhere.
unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// # Safety
/// Unless `len` is zero, `p` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// Unless `len` is zero, `p` must be null or point to `len` writable values.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn to_core(c: &SbMachineConfig) -> MachineConfig {
    MachineConfig {
        lanes: c.lanes,
        vlen_bits: c.vlen_bits,
        supported_sews: Sew::ALL.to_vec(),
        issue_overhead_cycles: c.issue_overhead_cycles,
        lane_datapath_bits: c.lane_datapath_bits,
        scalar_cycles_per_rescale_element: c.scalar_cycles_per_rescale_element,
        memory_bandwidth_factor: c.memory_bandwidth_factor,
        memory_bytes: c.memory_bytes,
    }
}

fn from_core(c: &MachineConfig) -> SbMachineConfig {
    SbMachineConfig {
        lanes: c.lanes,
        vlen_bits: c.vlen_bits,
        issue_overhead_cycles: c.issue_overhead_cycles,
        lane_datapath_bits: c.lane_datapath_bits,
        scalar_cycles_per_rescale_element: c.scalar_cycles_per_rescale_element,
        memory_bandwidth_factor: c.memory_bandwidth_factor,
        memory_bytes: c.memory_bytes,
    }
}

fn report_of(r: &CycleReport) -> SbCycleReport {
    SbCycleReport {
        total_cycles: r.total_cycles,
        instructions: r.instructions,
        ops_executed: r.ops_executed,
        bytes_moved: r.bytes_moved,
        alu_cycles: r.breakdown.alu,
        popcnt_cycles: r.breakdown.popcnt,
        shacc_cycles: r.breakdown.shacc,
        bitpack_cycles: r.breakdown.bitpack,
        memory_cycles: r.breakdown.memory,
        scalar_cycles: r.breakdown.scalar,
    }
}

fn signedness(signed: bool) -> Signedness {
    if signed {
        Signedness::Signed
    } else {
        Signedness::Unsigned
    }
}

fn tensor(shape: &[usize], op: SbOperand, values: &[i32]) -> Result<QuantTensor, Fail> {
    Ok(QuantTensor::new(shape, op.bits, signedness(op.is_signed), values)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sb_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Description of the last failure on the calling thread, or an empty string.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// The 4-lane, 4096-bit default machine.
#[no_mangle]
pub extern "C" fn sb_config_default() -> SbMachineConfig {
    from_core(&MachineConfig::default())
}

/// The 8-lane, 8192-bit machine.
#[no_mangle]
pub extern "C" fn sb_config_eight_lane() -> SbMachineConfig {
    from_core(&MachineConfig::eight_lane())
}

/// Create a machine. On success `*out` owns a handle to release with
/// [`sb_machine_free`].
///
/// # Safety
/// `config` must point to a valid config and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn sb_machine_new(config: *const SbMachineConfig, out: *mut *mut SbMachine) -> SbStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = std::ptr::null_mut();
        let cfg = to_core(deref(config, "config")?);
        let m = Machine::new(cfg)?;
        *out = Box::into_raw(Box::new(SbMachine { inner: m }));
        Ok(())
    })
}

/// Release a machine. Null is ignored.
///
/// # Safety
/// `m` must be null or a handle from [`sb_machine_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sb_machine_free(m: *mut SbMachine) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Parse and execute a textual program, including its `.mem` directives.
/// Instructions before a failing one stay executed and counted.
///
/// # Safety
/// `m` must be a live handle and `program` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sb_machine_run_text(m: *mut SbMachine, program: *const c_char) -> SbStatus {
    guard(|| {
        let m = &mut deref_mut(m, "machine")?.inner;
        if program.is_null() {
            return Err(null("program"));
        }
        let text =
            CStr::from_ptr(program).to_str().map_err(|_| Fail(SbStatus::Parse, "program is not UTF-8".into()))?;
        let p = parse_program(text)?;
        for (addr, bytes) in &p.memory {
            m.mem_mut().write(*addr, bytes)?;
        }
        m.run_program(&p.instructions)
            .map_err(|e| Fail(status_of(&e.error), format!("line {}: {}", p.lines[e.index], e.error)))?;
        Ok(())
    })
}

/// Totals over everything the machine executed since creation or the last
/// [`sb_machine_clear_report`].
///
/// # Safety
/// `m` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sb_machine_report(m: *const SbMachine, out: *mut SbCycleReport) -> SbStatus {
    guard(|| {
        let r = deref(m, "machine")?.inner.report();
        *deref_mut(out, "out")? = report_of(&r);
        Ok(())
    })
}

/// Reset the cycle totals. Registers and memory are kept.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sb_machine_clear_report(m: *mut SbMachine) -> SbStatus {
    guard(|| {
        deref_mut(m, "machine")?.inner.take_trace();
        Ok(())
    })
}

/// Current vector length and element width in bits.
///
/// # Safety
/// `m` must be a live handle; `vl` and `sew_bits` writable.
#[no_mangle]
pub unsafe extern "C" fn sb_machine_vector_state(m: *const SbMachine, vl: *mut u64, sew_bits: *mut u32) -> SbStatus {
    guard(|| {
        let st = deref(m, "machine")?.inner.state();
        *deref_mut(vl, "vl")? = st.vl as u64;
        *deref_mut(sew_bits, "sew_bits")? = st.sew.bits();
        Ok(())
    })
}

/// Bytes per vector register.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sb_machine_register_bytes(m: *const SbMachine) -> usize {
    m.as_ref().map_or(0, |m| m.inner.config().vlen_bits as usize / 8)
}

fn check_reg(reg: u32) -> Result<usize, Fail> {
    if (reg as usize) < subbyte_core::config::NUM_VREGS {
        Ok(reg as usize)
    } else {
        Err(Error::InvalidRegister(reg).into())
    }
}

/// Copy the first `len` bytes of register `reg` into `buf`, element 0 first.
///
/// # Safety
/// `m` must be a live handle and `buf` hold `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sb_machine_read_register(m: *const SbMachine, reg: u32, buf: *mut u8, len: usize) -> SbStatus {
    guard(|| {
        let m = &deref(m, "machine")?.inner;
        let bytes = m.vrf().to_bytes(check_reg(reg)?);
        if len > bytes.len() {
            return Err(Fail(SbStatus::InvalidArgument, format!("register holds {} bytes", bytes.len())));
        }
        slice_mut(buf, len, "buf")?.copy_from_slice(&bytes[..len]);
        Ok(())
    })
}

/// Overwrite the first `len` bytes of register `reg`; the rest is kept.
///
/// # Safety
/// `m` must be a live handle and `buf` hold `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn sb_machine_write_register(
    m: *mut SbMachine,
    reg: u32,
    buf: *const u8,
    len: usize,
) -> SbStatus {
    guard(|| {
        let m = &mut deref_mut(m, "machine")?.inner;
        let reg = check_reg(reg)?;
        let mut bytes = m.vrf().to_bytes(reg);
        if len > bytes.len() {
            return Err(Fail(SbStatus::InvalidArgument, format!("register holds {} bytes", bytes.len())));
        }
        bytes[..len].copy_from_slice(slice(buf, len, "buf")?);
        m.vrf_mut().load_bytes(reg, &bytes);
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle and `buf` hold `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sb_machine_read_memory(m: *const SbMachine, addr: u64, buf: *mut u8, len: usize) -> SbStatus {
    guard(|| {
        let src = deref(m, "machine")?.inner.mem().read(addr, len as u64)?;
        slice_mut(buf, len, "buf")?.copy_from_slice(src);
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle and `buf` hold `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn sb_machine_write_memory(m: *mut SbMachine, addr: u64, buf: *const u8, len: usize) -> SbStatus {
    guard(|| {
        let data = slice(buf, len, "buf")?;
        deref_mut(m, "machine")?.inner.mem_mut().write(addr, data)?;
        Ok(())
    })
}

/// Pack both vectors into bit planes on the machine and return their
/// bit-serial dot product in `*out`. Mixed signedness is accepted.
///
/// # Safety
/// `m` must be a live handle, `w` and `a` hold `len` values each, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sb_dot_bitserial(
    m: *mut SbMachine,
    w: *const i32,
    w_op: SbOperand,
    a: *const i32,
    a_op: SbOperand,
    len: usize,
    out: *mut i64,
) -> SbStatus {
    guard(|| {
        let m = &mut deref_mut(m, "machine")?.inner;
        let out = deref_mut(out, "out")?;
        let wt = tensor(&[len], w_op, slice(w, len, "w")?)?;
        let at = tensor(&[len], a_op, slice(a, len, "a")?)?;
        let pw = pack_bitplanes(m, &wt)?;
        let pa = pack_bitplanes(m, &at)?;
        *out = dot_bitserial(m, &pw, &pa, MixedSign::Allow)?;
        Ok(())
    })
}

fn write_output(o: KernelOutput, out: &mut [i64]) -> Result<(), Fail> {
    if o.values.len() != out.len() {
        return Err(Fail(
            SbStatus::BufferTooSmall,
            format!("output needs {} values, buffer holds {}", o.values.len(), out.len()),
        ));
    }
    out.copy_from_slice(&o.values);
    Ok(())
}

/// `out[rows][cols] = a[rows][inner] * b[inner][cols]`. `b` is the weight
/// operand.
///
/// # Safety
/// `m` must be a live handle; `a`, `b` and `out` must hold `rows*inner`,
/// `inner*cols` and `rows*cols` values.
#[no_mangle]
pub unsafe extern "C" fn sb_matmul(
    m: *mut SbMachine,
    kernel: SbKernel,
    a: *const i32,
    a_op: SbOperand,
    b: *const i32,
    b_op: SbOperand,
    rows: usize,
    inner: usize,
    cols: usize,
    out: *mut i64,
) -> SbStatus {
    guard(|| {
        let m = &mut deref_mut(m, "machine")?.inner;
        let n = |x: usize, y: usize| {
            x.checked_mul(y).ok_or_else(|| Fail(SbStatus::InvalidArgument, "shape overflows".into()))
        };
        let at = tensor(&[rows, inner], a_op, slice(a, n(rows, inner)?, "a")?)?;
        let bt = tensor(&[inner, cols], b_op, slice(b, n(inner, cols)?, "b")?)?;
        let o = match kernel {
            SbKernel::BitserialVbitpack => matmul_bitserial(m, &at, &bt, PackMethod::Vbitpack)?,
            SbKernel::BitserialBaseOps => matmul_bitserial(m, &at, &bt, PackMethod::BaseOps)?,
            SbKernel::Int8 => matmul_int8_baseline(m, &at, &bt)?,
        };
        write_output(o, slice_mut(out, n(rows, cols)?, "out")?)
    })
}

/// Convolution of a CHW `input` with OIHW `weights`; writes the CHW
/// accumulators into `out`, which must hold exactly `out_len` values.
///
/// # Safety
/// `m` must be a live handle, `shape` valid, `input` and `weights` sized by
/// `shape`, and `out` hold `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn sb_conv2d(
    m: *mut SbMachine,
    kernel: SbKernel,
    shape: *const SbConvShape,
    input: *const i32,
    input_op: SbOperand,
    weights: *const i32,
    weight_op: SbOperand,
    out: *mut i64,
    out_len: usize,
) -> SbStatus {
    guard(|| {
        let m = &mut deref_mut(m, "machine")?.inner;
        let s = deref(shape, "shape")?;
        let p = ConvParams {
            in_channels: s.in_channels as usize,
            out_channels: s.out_channels as usize,
            kernel_h: s.kernel_h as usize,
            kernel_w: s.kernel_w as usize,
            stride: s.stride as usize,
            padding: s.padding as usize,
            input_h: s.input_h as usize,
            input_w: s.input_w as usize,
        };
        p.validate()?;
        let is = p.input_shape();
        let ws = p.weight_shape();
        let x = tensor(&is, input_op, slice(input, is.iter().product(), "input")?)?;
        let w = tensor(&ws, weight_op, slice(weights, ws.iter().product(), "weights")?)?;
        let o = match kernel {
            SbKernel::BitserialVbitpack => conv2d_bitserial(m, &x, &w, &p, PackMethod::Vbitpack)?,
            SbKernel::BitserialBaseOps => conv2d_bitserial(m, &x, &w, &p, PackMethod::BaseOps)?,
            SbKernel::Int8 => conv2d_int8_baseline(m, &x, &w, &p)?,
        };
        write_output(o, slice_mut(out, out_len, "out")?)
    })
}
