//! Fixture builders shared by the criterion benches.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specqa::chunking::fixed_chunk_corpus;
use specqa::synthetic::random_document;
use specqa::{Chunk, Document, LoraAdapter};

pub fn corpus(seed: u64, docs: usize, sentences: usize) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..docs)
        .map(|i| random_document(&mut rng, &format!("doc{i:04}"), sentences))
        .collect()
}

pub fn fixed_chunks(seed: u64, docs: usize) -> Vec<Chunk> {
    fixed_chunk_corpus(&corpus(seed, docs, 40), 128, 16).expect("fixed chunking")
}

pub fn matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn adapter(seed: u64, d: usize, k: usize, r: usize) -> (LoraAdapter, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = matrix(&mut rng, d, k);
    let b = matrix(&mut rng, d, r);
    let a = matrix(&mut rng, r, k);
    let x = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
    (LoraAdapter::new(base, b, a, 2.0 * r as f64).expect("adapter"), x)
}
