use std::collections::HashMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use wordart_core::glyph::Font;
use wordart_core::pipeline::reference_image;
use wordart_core::ranker::{
    degrade, evaluate_topx, heuristic_score, random_baseline, synthetic_dataset, CandidateVariant, ScoreWeights,
};

const FONT: &[u8] = include_bytes!("../../core/testdata/WordartTestSans.ttf");

fn topx(c: &mut Criterion) {
    let ds = synthetic_dataset(20, 22, 4, 1);
    let scores: HashMap<String, f64> = ds
        .characters
        .iter()
        .flat_map(|c| &c.candidates)
        .enumerate()
        .map(|(i, c)| (c.id.clone(), (i * 7919 % 101) as f64))
        .collect();
    let xs = [1, 2, 5, 10];
    c.bench_function("evaluate_topx/20x22", |b| {
        b.iter(|| evaluate_topx(black_box(&ds), &scores, &xs).unwrap())
    });
    c.bench_function("random_baseline/20x22/1000", |b| {
        b.iter(|| random_baseline(black_box(&ds), &xs, 1000, 3))
    });
}

fn scoring(c: &mut Criterion) {
    let font = Font::parse(FONT).unwrap();
    let reference = reference_image(&font, 'S', 128, 60).unwrap();
    let cand = degrade(&reference, CandidateVariant::Speckle, 4);
    let w = ScoreWeights::default();
    c.bench_function("heuristic_score/128", |b| {
        b.iter(|| heuristic_score(black_box(&cand), &reference, &w).unwrap())
    });
}

criterion_group!(benches, topx, scoring);
criterion_main!(benches);
