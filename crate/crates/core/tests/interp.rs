use cutpoint_core::alloc::assign_buffers_forcing;
use cutpoint_core::codegen::{emit_instructions, pack_image, parse_image};
use cutpoint_core::funcref::{run_image, run_reference, synthetic_weights, Tensor};
use cutpoint_core::graph::{Activation, LayerKind};
use cutpoint_core::zoo::{self, NetBuilder};
use cutpoint_core::{HwConfig, NetworkGraph, Schedule, Scheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn with_shifts(mut g: NetworkGraph) -> NetworkGraph {
    for l in g.layers.iter_mut() {
        l.quant_shift = match l.kind {
            LayerKind::Conv | LayerKind::Fc => 6,
            LayerKind::Dwconv => 4,
            LayerKind::Scale => 7,
            _ => 0,
        };
    }
    g
}

/// Packs the net under `schemes`, runs the image and compares every group
/// output against the graph-order reference.
fn check(g: &NetworkGraph, schemes: &[Scheme], seed: u64) {
    let hw = HwConfig::default();
    let s = Schedule::new(g.clone()).unwrap();
    let (a, _, _) = assign_buffers_forcing(&s, schemes, &hw).unwrap();
    let prog = emit_instructions(&s, &a, &hw).unwrap();
    let w = synthetic_weights(&s.graph, seed);
    let x = Tensor::random(g.input_h as usize, g.input_w as usize, g.input_c as usize, seed);
    let img = pack_image(&s, &prog, &w, &x.to_bytes(), &hw).unwrap();
    assert_eq!(parse_image(&img).unwrap().instructions, prog.instructions);
    let got = run_image(&img).unwrap();
    let want = run_reference(&s, &w, &x).unwrap();
    assert_eq!(got.len(), want.len());
    for (i, (a, b)) in got.iter().zip(&want).enumerate() {
        assert_eq!(a, b, "{}: group {i} differs under {schemes:?}", g.name);
    }
}

fn scheme_sets(n: usize, seed: u64) -> Vec<Vec<Scheme>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = vec![vec![Scheme::Row; n], vec![Scheme::Frame; n]];
    for _ in 0..3 {
        v.push((0..n).map(|_| if rng.gen_bool(0.5) { Scheme::Frame } else { Scheme::Row }).collect());
    }
    v
}

fn run_all(g: NetworkGraph) {
    let g = with_shifts(g);
    let n = Schedule::new(g.clone()).unwrap().blocks.len();
    for (i, sch) in scheme_sets(n, 7).iter().enumerate() {
        check(&g, sch, i as u64);
    }
}

#[test]
fn plain_chain_matches_reference() {
    run_all(zoo::synthetic_chain("chain", (16, 16, 3), &[(8, 3, 1), (16, 3, 2), (16, 1, 1), (32, 3, 2)]).build().unwrap());
}

#[test]
fn residual_net_matches_reference() {
    run_all(zoo::resnet(50, 32).build().unwrap());
}

#[test]
fn se_net_matches_reference() {
    run_all(zoo::efficientnet_b1(32).build().unwrap());
}

#[test]
fn route_and_upsample_match_reference() {
    let mut b = NetBuilder::new("route", 16, 16, 3);
    b.conv(8, 3, 1, Activation::Leaky);
    b.maxpool(2, 2);
    let r = b.conv(16, 3, 1, Activation::Leaky);
    b.maxpool(2, 2);
    b.conv(16, 3, 1, Activation::Leaky);
    let up = b.upsample_from(None, 2);
    b.concat(&[up, r]);
    b.conv(8, 1, 1, Activation::Sigmoid);
    run_all(b.build().unwrap());
}

#[test]
fn darknet_style_nets_match_reference() {
    for (name, b) in zoo::shipped() {
        if name.starts_with("yolo") {
            let mut f = b.file.clone();
            f.input.w = 64;
            f.input.h = 64;
            let g = cutpoint_core::graph::build_network(&f).unwrap();
            let g = with_shifts(g);
            let n = Schedule::new(g.clone()).unwrap().blocks.len();
            check(&g, &vec![Scheme::Row; n], 1);
            check(&g, &vec![Scheme::Frame; n], 2);
        }
    }
}

#[test]
fn corrupted_address_is_detected() {
    let g = with_shifts(zoo::resnet(50, 32).build().unwrap());
    let hw = HwConfig::default();
    let s = Schedule::new(g.clone()).unwrap();
    let (a, _, _) = assign_buffers_forcing(&s, &vec![Scheme::Frame; s.blocks.len()], &hw).unwrap();
    let mut prog = emit_instructions(&s, &a, &hw).unwrap();
    // point a residual read at the wrong buffer offset
    let i = prog.instructions.iter().position(|i| i.flags.fused_eltwise && i.alloc_shortcut.is_some()).unwrap();
    prog.instructions[i].shortcut_addr += 64;
    let w = synthetic_weights(&s.graph, 3);
    let x = Tensor::random(32, 32, 3, 3);
    let img = pack_image(&s, &prog, &w, &x.to_bytes(), &hw).unwrap();
    let want = run_reference(&s, &w, &x).unwrap();
    match run_image(&img) {
        Ok(got) => assert_ne!(got[i], want[i]),
        Err(_) => {}
    }
}
