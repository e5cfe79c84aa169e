use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cutpoint_core::codegen::emit_instructions;
use cutpoint_core::alloc::assign_buffers_forcing;
use cutpoint_core::search::{minimum_buffer_search, search_cut_points};
use cutpoint_core::{zoo, HwConfig, Schedule};

fn schedules() -> Vec<(&'static str, Schedule)> {
    zoo::shipped()
        .into_iter()
        .filter(|(n, _)| ["resnet50", "yolov3", "efficientnet_b1"].contains(n))
        .map(|(n, b)| (n, Schedule::new(b.build().unwrap()).unwrap()))
        .collect()
}

fn search(c: &mut Criterion) {
    let hw = HwConfig::default();
    let mut g = c.benchmark_group("search_cut_points");
    for (name, s) in schedules() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &s, |b, s| b.iter(|| search_cut_points(s, &hw).unwrap()));
    }
    g.finish();

    let mut g = c.benchmark_group("minimum_buffer_search");
    for (name, s) in schedules() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &s, |b, s| b.iter(|| minimum_buffer_search(s, &hw).unwrap()));
    }
    g.finish();
}

fn lowering(c: &mut Criterion) {
    let hw = HwConfig::default();
    let mut g = c.benchmark_group("emit_instructions");
    for (name, s) in schedules() {
        let e = search_cut_points(&s, &hw).unwrap();
        let (a, _, _) = assign_buffers_forcing(&s, &e.schemes, &hw).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(name), &(s, a), |b, (s, a)| b.iter(|| emit_instructions(s, a, &hw).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, search, lowering);
criterion_main!(benches);
