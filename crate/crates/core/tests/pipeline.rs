use subbyte_core::oracle::quantized_layer_ref;
use subbyte_core::qnn::{forward_layer, resnet18_layer_set, LayerConfig, Mode};
use subbyte_core::rng::SplitMix64;
use subbyte_core::tensor::{ConvParams, QuantTensor};
use subbyte_core::{Machine, MachineConfig};

fn shrink(l: &LayerConfig, size: usize) -> LayerConfig {
    let c = &l.conv;
    LayerConfig {
        conv: ConvParams {
            in_channels: c.in_channels.min(24),
            out_channels: c.out_channels.min(20),
            input_h: size,
            input_w: size,
            ..*c
        },
        ..l.clone()
    }
}

#[test]
fn every_mode_matches_the_float_reference_on_scaled_down_layers() {
    let mut rng = SplitMix64::new(17);
    for (i, full) in resnet18_layer_set().iter().enumerate().filter(|(_, l)| !l.excluded).step_by(3) {
        for mode in Mode::ALL {
            let l = shrink(full, 6 + i % 5).at_precision(mode.precision());
            let w = QuantTensor::random(&l.conv.weight_shape(), l.weight.precision_bits, l.weight.signedness, &mut rng)
                .unwrap();
            let n: usize = l.conv.input_shape().iter().product();
            let x: Vec<f64> = (0..n).map(|_| rng.next_f64() * 1.2 - 0.1).collect();
            let want = quantized_layer_ref(&l, &x, &w).unwrap();
            let mut m = Machine::new(MachineConfig { memory_bytes: 4 << 20, ..MachineConfig::default() }).unwrap();
            let got = forward_layer(&mut m, &l, &w, &x, mode).unwrap();
            assert_eq!(got.accumulators, want.accumulators, "{} {mode}", l.name);
            let out: Vec<i64> = got.output.values().iter().map(|&v| v as i64).collect();
            assert_eq!(out, want.requantized, "{} {mode}", l.name);
            assert!(got.scalar_rescale_cycles > 0);
            if mode == Mode::Int8Baseline {
                assert_eq!(got.packing_cycles, 0);
            } else {
                assert!(got.packing_cycles > 0 && got.packing_cycles < got.vector_cycles);
            }
        }
    }
}
