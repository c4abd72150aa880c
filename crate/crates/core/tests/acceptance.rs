//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every check prints exactly one PASS or FAIL line.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rayon::prelude::*;

use subbyte_core::bench::bench_layers;
use subbyte_core::isa::{parse_program, AluOp, Instruction, MaccSigns, Operand};
use subbyte_core::kernels::{
    conv2d_bitserial, conv2d_int8_baseline, dot_bitserial, matmul_bitserial, matmul_int8_baseline, pack_bitplanes,
    pack_dense, unpack_dense, MixedSign, PackMethod,
};
use subbyte_core::oracle::{conv2d_ref, dot_ref, matmul_ref, pack_dense_ref};
use subbyte_core::qnn::{resnet18_layer_set, Mode};
use subbyte_core::rng::SplitMix64;
use subbyte_core::roofline::{roofline_sweep, SweepConfig, DEFAULT_CHANNELS, DEFAULT_SIZES};
use subbyte_core::tensor::{ConvParams, QuantTensor, Signedness};
use subbyte_core::{Machine, MachineConfig, Sew, VReg};

const SIGNS: [Signedness; 2] = [Signedness::Unsigned, Signedness::Signed];

fn small_machine() -> Machine {
    Machine::new(MachineConfig { memory_bytes: 1 << 20, ..MachineConfig::default() }).unwrap()
}

/// Every vector of `len` values representable at `bits` with `s`.
fn all_vectors(len: usize, bits: u32, s: Signedness) -> Vec<Vec<i32>> {
    let (lo, hi) = s.range(bits);
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|v| {
                (lo..=hi).map(move |x| {
                    let mut v = v.clone();
                    v.push(x as i32);
                    v
                })
            })
            .collect();
    }
    out
}

fn exhaustive_dot() -> String {
    let mut cases = 0u64;
    for len in 1..=4 {
        for wbits in 1..=2 {
            for abits in 1..=2 {
                for ws in SIGNS {
                    for xs in SIGNS {
                        let mut m = small_machine();
                        let pack = |m: &mut Machine, bits, s| {
                            all_vectors(len, bits, s)
                                .into_iter()
                                .map(|v| {
                                    let t = QuantTensor::new(&[len], bits, s, &v).unwrap();
                                    let p = pack_bitplanes(m, &t).unwrap();
                                    (t, p)
                                })
                                .collect::<Vec<_>>()
                        };
                        let w = pack(&mut m, wbits, ws);
                        let x = pack(&mut m, abits, xs);
                        for (wt, wp) in &w {
                            for (xt, xp) in &x {
                                let got = dot_bitserial(&mut m, wp, xp, MixedSign::Allow).unwrap();
                                assert_eq!(got, dot_ref(wt, xt).unwrap(), "{:?} . {:?}", wt.values(), xt.values());
                                cases += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    format!("{cases} products")
}

/// Lengths at and around multiples of the vector lengths the kernels
/// stripmine by: 64 (e64 words), 128 (e32 accumulators), 512 (e8 bytes).
const BOUNDARIES: [usize; 12] = [63, 64, 65, 127, 128, 129, 255, 256, 257, 511, 512, 513];

#[derive(Debug)]
enum Case {
    Conv {
        p: ConvParams,
        wbits: u32,
        abits: u32,
        ws: Signedness,
        xs: Signedness,
        int8: bool,
        method: PackMethod,
    },
    Matmul {
        rows: usize,
        inner: usize,
        cols: usize,
        wbits: u32,
        abits: u32,
        ws: Signedness,
        xs: Signedness,
        int8: bool,
        method: PackMethod,
    },
}

fn gen_case(i: u64) -> Case {
    let mut r = SplitMix64::derive(2024, i);
    let mut pick = |lo: u64, hi: u64| lo + r.below(hi - lo + 1);
    let wbits = pick(1, 4) as u32;
    let abits = pick(1, 4) as u32;
    let ws = SIGNS[pick(0, 1) as usize];
    let xs = SIGNS[pick(0, 1) as usize];
    let int8 = pick(0, 3) == 0;
    let method = if pick(0, 2) == 0 { PackMethod::BaseOps } else { PackMethod::Vbitpack };
    let boundary = pick(0, 3) == 0;
    if i.is_multiple_of(2) {
        let k = [1, 3, 5][pick(0, 2) as usize] as usize;
        let pad = pick(0, (k / 2) as u64) as usize;
        let h = pick(k.saturating_sub(2 * pad).max(1) as u64, 32) as usize;
        let w = pick(k.saturating_sub(2 * pad).max(1) as u64, 32) as usize;
        let p = ConvParams {
            in_channels: pick(1, 16) as usize,
            out_channels: pick(1, 16) as usize,
            kernel_h: k,
            kernel_w: k,
            stride: pick(1, 2) as usize,
            padding: pad,
            input_h: h,
            input_w: w,
        };
        Case::Conv { p, wbits, abits, ws, xs, int8, method }
    } else {
        let (rows, inner, cols) = if boundary {
            (pick(1, 8) as usize, BOUNDARIES[pick(0, 11) as usize], BOUNDARIES[pick(0, 5) as usize])
        } else {
            (pick(1, 32) as usize, pick(1, 32 * 16) as usize, pick(1, 32) as usize)
        };
        Case::Matmul { rows, inner, cols, wbits, abits, ws, xs, int8, method }
    }
}

fn run_case(i: u64) -> std::result::Result<(), String> {
    let case = gen_case(i);
    let mut rng = SplitMix64::derive(77, i);
    let mut m = small_machine();
    let (got, want) = match &case {
        Case::Conv { p, wbits, abits, ws, xs, int8, method } => {
            let x = QuantTensor::random(&p.input_shape(), *abits, *xs, &mut rng).unwrap();
            let w = QuantTensor::random(&p.weight_shape(), *wbits, *ws, &mut rng).unwrap();
            let got = if *int8 {
                conv2d_int8_baseline(&mut m, &x, &w, p)
            } else {
                conv2d_bitserial(&mut m, &x, &w, p, *method)
            };
            (got.map(|o| o.values), conv2d_ref(&x, &w, p).unwrap())
        }
        Case::Matmul { rows, inner, cols, wbits, abits, ws, xs, int8, method } => {
            let a = QuantTensor::random(&[*rows, *inner], *abits, *xs, &mut rng).unwrap();
            let b = QuantTensor::random(&[*inner, *cols], *wbits, *ws, &mut rng).unwrap();
            let got =
                if *int8 { matmul_int8_baseline(&mut m, &a, &b) } else { matmul_bitserial(&mut m, &a, &b, *method) };
            (got.map(|o| o.values), matmul_ref(&a, &b).unwrap())
        }
    };
    match got {
        Ok(v) if v == want => Ok(()),
        Ok(_) => Err(format!("case {i} {case:?}: output differs from reference")),
        Err(e) => Err(format!("case {i} {case:?}: {e}")),
    }
}

fn kernel_equivalence() -> String {
    const CASES: u64 = 10_000;
    let failures: Vec<String> = (0..CASES).into_par_iter().filter_map(|i| run_case(i).err()).collect();
    assert!(failures.is_empty(), "{} of {CASES} cases failed, first: {}", failures.len(), failures[0]);
    format!("{CASES} conv2d/matmul cases")
}

fn vbitpack_semantics() -> String {
    const CASES: u64 = 10_000;
    let failures: Vec<String> = (0..CASES)
        .into_par_iter()
        .filter_map(|i| {
            let mut r = SplitMix64::derive(31, i);
            let bits = [1, 2, 4, 8][r.below(4) as usize];
            let s = SIGNS[r.below(2) as usize];
            let n = 1 + r.below(if i % 10 == 0 { 3000 } else { 300 }) as usize;
            let t = QuantTensor::random(&[n], bits, s, &mut r).unwrap();
            let mut m = small_machine();
            let packed = pack_dense(&mut m, &t).unwrap();
            let planes = pack_bitplanes(&mut m, &t).unwrap();
            let ok = packed.dense_bytes() == pack_dense_ref(&t).as_slice()
                && unpack_dense(&packed).unwrap() == t
                && planes.unpack() == t;
            (!ok).then(|| format!("tensor {i} ({n} x {bits} bits {s:?}) does not round-trip"))
        })
        .collect();
    assert!(failures.is_empty(), "{}", failures[0]);

    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/");
    let trace = std::fs::read_to_string(format!("{dir}vbitpack_four_calls.trace")).unwrap();
    let expected = std::fs::read_to_string(format!("{dir}vbitpack_four_calls.expected")).unwrap();
    let want = expected.lines().find_map(|l| l.strip_prefix("v2 ")).expect("expected file names v2").trim();
    let program = parse_program(&trace).unwrap();
    let mut m = small_machine();
    for (addr, bytes) in &program.memory {
        m.mem_mut().write(*addr, bytes).unwrap();
    }
    m.run_program(&program.instructions).unwrap();
    let got: String = m.vrf().to_bytes(2)[..8].iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(got, want, "golden four-call pack");
    assert!(m.vrf().to_bytes(2)[8..].iter().all(|&b| b == 0), "pack wrote past the active region");
    format!("{CASES} round trips, golden trace v2={got}")
}

fn ablation_ordering() -> String {
    let layers = resnet18_layer_set();
    let r = bench_layers(&MachineConfig::default(), &layers, 1, false).unwrap();
    let mut checked = 0;
    for l in layers.iter().filter(|l| !l.excluded) {
        let c = |mode| {
            let row = r.row(&l.name, mode).unwrap();
            (row.vector_cycles, row.total_cycles())
        };
        let (i1, i2, nv, i8) = (c(Mode::Int1), c(Mode::Int2), c(Mode::Int2NoVbitpack), c(Mode::Int8Baseline));
        assert!(i1.0 < i2.0 && i2.0 < nv.0 && i2.0 < i8.0, "{}: vector cycles {i1:?} {i2:?} {nv:?} {i8:?}", l.name);
        assert!(i1.1 < i2.1 && i2.1 < nv.1 && i2.1 < i8.1, "{}: total cycles {i1:?} {i2:?} {nv:?} {i8:?}", l.name);
        checked += 1;
    }
    format!("{checked} quantized layers strictly ordered")
}

fn magnitude() -> String {
    let r = bench_layers(&MachineConfig::default(), &resnet18_layer_set(), 1, false).unwrap();
    let int2 = r.summary_for(Mode::Int2).unwrap().mean_speedup;
    let int1 = r.summary_for(Mode::Int1).unwrap().mean_speedup;
    assert!((2.0..=10.0).contains(&int2), "int2 mean speedup {int2:.4} outside [2, 10]");
    assert!(int1 > int2, "int1 mean speedup {int1:.4} not above int2 {int2:.4}");
    format!("int2 mean speedup {int2:.4}, int1 {int1:.4}")
}

fn roofline_dominance() -> String {
    let configs = [SweepConfig::packed_eight_lane(), SweepConfig::baseline_four_lane()];
    let pts = roofline_sweep(&configs, &DEFAULT_SIZES, DEFAULT_CHANNELS, 1).unwrap();
    for p in &pts {
        let c = configs.iter().find(|c| c.label == p.config).unwrap();
        assert!(p.under_roof(&c.roof()), "{} {}x{} above the roof", p.config, p.size, p.size);
    }
    let mut worst = f64::INFINITY;
    for &s in &DEFAULT_SIZES {
        let perf = |label: &str| pts.iter().find(|p| p.config == label && p.size == s).unwrap().performance;
        let (a, b) = (perf("packed-8-lane"), perf("baseline-4-lane"));
        assert!(a >= b, "size {s}: packed-8-lane {a} < baseline-4-lane {b}");
        worst = worst.min(a / b);
    }
    format!("{} points under their roofs, smallest packed/baseline ratio {worst:.2}", pts.len())
}

fn ext(m: &Machine, r: usize, w: u32, i: usize) -> u64 {
    m.vrf().read(r, w, i)
}

fn isa_micro_properties() -> String {
    const CASES: u64 = 100_000;
    let sews = [Sew::E8, Sew::E16, Sew::E32, Sew::E64];
    let mut m = small_machine();
    let mut r = SplitMix64::new(5);
    for _ in 0..CASES {
        let sew = sews[r.below(4) as usize];
        let w = sew.bits();
        let vl = m.vsetvl(1 + r.below(16), sew).unwrap();
        for i in 0..vl {
            m.vrf_mut().write(1, w, i, r.next_u64() & sew.mask());
            m.vrf_mut().write(2, w, i, r.next_u64() & sew.mask());
        }
        let shamt = r.below(w as u64) as u32;
        let acc: Vec<u64> = (0..vl).map(|i| ext(&m, 1, w, i)).collect();
        let src: Vec<u64> = (0..vl).map(|i| ext(&m, 2, w, i)).collect();
        m.execute(&Instruction::Vshacc { vd: VReg(1), vs2: VReg(2), shamt }).unwrap();
        let fused: Vec<u64> = (0..vl).map(|i| ext(&m, 1, w, i)).collect();
        for (i, (&a, &s)) in acc.iter().zip(&src).enumerate() {
            m.vrf_mut().write(3, w, i, a);
            m.vrf_mut().write(4, w, i, s);
        }
        m.execute(&Instruction::vx(AluOp::Sll, VReg(4), VReg(4), shamt as u64)).unwrap();
        m.execute(&Instruction::vv(AluOp::Add, VReg(3), VReg(3), VReg(4))).unwrap();
        let split: Vec<u64> = (0..vl).map(|i| ext(&m, 3, w, i)).collect();
        assert_eq!(fused, split, "vshacc at {sew} shift {shamt}");

        m.execute(&Instruction::Vpopcnt { vd: VReg(5), vs2: VReg(2) }).unwrap();
        for (i, &s) in src.iter().enumerate() {
            let mut n = 0;
            for b in 0..w {
                n += (s >> b) & 1;
            }
            assert_eq!(ext(&m, 5, w, i), n, "vpopcnt of {s:#x} at {sew}");
        }
        m.take_trace();
    }

    let mut runner = TestRunner::new(Config { cases: 2_000, failure_persistence: None, ..Config::default() });
    let instr = prop_oneof![
        (0usize..8, 0u64..64).prop_map(|(op, x)| {
            let ops = [AluOp::And, AluOp::Or, AluOp::Xor, AluOp::Add, AluOp::Sub, AluOp::Sll, AluOp::Srl, AluOp::Mul];
            Instruction::vx(ops[op], VReg(8), VReg(9), x % 8)
        }),
        Just(Instruction::vv(AluOp::Add, VReg(8), VReg(9), VReg(10))),
        Just(Instruction::Vpopcnt { vd: VReg(8), vs2: VReg(9) }),
        (0u32..8).prop_map(|s| Instruction::Vshacc { vd: VReg(8), vs2: VReg(9), shamt: s }),
        Just(Instruction::Vmv { vd: VReg(8), src: Operand::Scalar(0) }),
        Just(Instruction::Vbitpack { vd: VReg(8), vs2: VReg(9), precision: 1 }),
        Just(Instruction::Vle { vd: VReg(8), addr: 0 }),
        Just(Instruction::Vmacc {
            vd: VReg(8),
            vs1: VReg(9),
            src: Operand::Vector(VReg(10)),
            signs: MaccSigns::from_flags(true, false)
        }),
    ];
    runner
        .run(&(instr, 0usize..3, 0u64..600, any::<u64>()), |(instr, sew_i, avl, seed)| {
            let mut m = small_machine();
            let sew = if matches!(instr, Instruction::Vmacc { .. }) {
                [Sew::E8, Sew::E16][sew_i % 2]
            } else {
                [Sew::E8, Sew::E16, Sew::E64][sew_i]
            };
            let mut r = SplitMix64::new(seed);
            for reg in 8..=10 {
                for word in m.vrf_mut().words_mut(reg) {
                    *word = r.next_u64();
                }
            }
            let before = m.vrf().clone();
            // The widening accumulator holds at most vlen / (4 * sew) elements.
            let avl =
                if matches!(instr, Instruction::Vmacc { .. }) { avl.min(4096 / (4 * sew.bits() as u64)) } else { avl };
            let vl = m.vsetvl(avl, sew).unwrap();
            m.execute(&instr).unwrap();
            let width = if matches!(instr, Instruction::Vmacc { .. }) { 4 * sew.bytes() } else { sew.bytes() } as usize;
            let active = vl * width;
            let (old, new) = (before.to_bytes(8), m.vrf().to_bytes(8));
            prop_assert_eq!(&old[active..], &new[active..], "{:?} at vl {} touched the tail", instr, vl);
            for reg in (0..32).filter(|&r| r != 8) {
                prop_assert_eq!(before.words(reg), m.vrf().words(reg));
            }
            Ok(())
        })
        .unwrap();
    format!("{CASES} vshacc and vpopcnt cases, 2000 tail cases")
}

fn determinism() -> String {
    let bench = || {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = subbyte_core::cli::run(["subbyte", "bench-resnet18", "--seed", "11"], &mut out, &mut err);
        assert_eq!(code, 0, "{}", String::from_utf8_lossy(&err));
        out
    };
    let (a, b) = (bench(), bench());
    assert!(!a.is_empty());
    assert!(a == b, "two runs with the same seed differ");
    format!("{} identical bytes", a.len())
}

fn main() {
    type Check = fn() -> String;
    let checks: [(&str, Check, Duration); 8] = [
        ("1 bit-serial dot product, exhaustive", exhaustive_dot, Duration::from_secs(60)),
        ("2 kernel oracle equivalence, randomized", kernel_equivalence, Duration::from_secs(600)),
        ("3 vbitpack round trip and golden trace", vbitpack_semantics, Duration::from_secs(600)),
        ("4 ablation ordering per layer", ablation_ordering, Duration::from_secs(300)),
        ("5 mean speedup magnitude", magnitude, Duration::from_secs(300)),
        ("6 roofline dominance and roof inequality", roofline_dominance, Duration::from_secs(600)),
        ("7 vshacc, vpopcnt and tail properties", isa_micro_properties, Duration::from_secs(600)),
        ("8 benchmark determinism", determinism, Duration::from_secs(600)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check, budget) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check));
        let took = start.elapsed();
        match outcome {
            Ok(detail) if took <= budget => println!("PASS criterion {name}: {detail} ({:.1}s)", took.as_secs_f64()),
            Ok(detail) => {
                failed += 1;
                println!(
                    "FAIL criterion {name}: {detail}, but took {:.1}s of {}s",
                    took.as_secs_f64(),
                    budget.as_secs()
                );
            }
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL criterion {name}: {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
