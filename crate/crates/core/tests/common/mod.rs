#![allow(dead_code)]

use histda::data::{FeatureMatrix, SplitBundle};
use histda::matrix::Matrix;
use histda::nn::{init_model, Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Initialised network with nonzero biases, so every parameter matters.
pub fn random_model(rng: &mut ChaCha8Rng, sizes: &[usize]) -> Model {
    let mut model = init_model(sizes, rng.random()).unwrap();
    for layer in model.layers_mut() {
        for b in layer.bias_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    model
}

pub fn random_probs(rng: &mut ChaCha8Rng, rows: usize, k: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, k);
    for r in 0..rows {
        let row = m.row_mut(r);
        for v in row.iter_mut() {
            *v = rng.random_range(0.05..1.0);
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    m
}

fn part(rng: &mut ChaCha8Rng, n: usize, d: usize, labeled: bool, t0: i64, w: &[f64]) -> FeatureMatrix {
    let x = random_matrix(rng, n, d, 2.0);
    let y = labeled.then(|| {
        x.row_iter()
            .map(|r| {
                let z: f64 = r.iter().zip(w).map(|(a, b)| a * b).sum();
                (50.0 + 20.0 * z + rng.random_range(-1.0..1.0)).clamp(0.0, 100.0)
            })
            .collect()
    });
    let names = (1..=d).map(|i| format!("f{i}")).collect();
    let ts = (0..n as i64).map(|i| t0 + 3600 * i).collect();
    FeatureMatrix::new(names, ts, x, y).unwrap()
}

/// Small bundle with a linear ground truth on `[0, 100]`.
pub fn fixture_bundle(seed: u64, d: usize, sizes: [usize; 4]) -> SplitBundle {
    let mut rng = rng(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let [src, tl, tu, tv] = sizes;
    SplitBundle {
        source_train: part(&mut rng, src, d, true, 0, &w),
        source_val: part(&mut rng, 4, d, true, 0, &w),
        source_test: part(&mut rng, 4, d, true, 0, &w),
        target_labeled: part(&mut rng, tl, d, true, 0, &w),
        target_unlabeled: part(&mut rng, tu, d, false, 0, &w),
        target_val: part(&mut rng, tv, d, true, 0, &w),
        target_test: part(&mut rng, tv, d, true, 0, &w),
    }
}
pub mod fd;
