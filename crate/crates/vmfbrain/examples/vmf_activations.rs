//! vMF activations: the compositional representation itself.
//!
//! Feature vectors are normalized onto the unit sphere and scored
//! against each kernel; a per-position softmax over the scaled cosine
//! similarities yields one activation map per kernel. This example
//! verifies the core invariants on random data: activations sum to one
//! at every position, the clustering loss lies in [-1, 1], and scaling
//! the concentration never changes which kernel wins a position.
//!
//! Run with: `cargo run --example vmf_activations`

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vmfbrain::vmf::{clustering_loss, normalize_features, vmf_activations, KernelBank};

fn random_bank(j: usize, d: usize, concentration: f64, rng: &mut ChaCha8Rng) -> KernelBank {
    let mut kernels = Array2::from_shape_fn((j, d), |_| rng.random_range(-1.0..1.0f64));
    for mut row in kernels.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    KernelBank {
        kernels,
        concentration,
    }
}

fn main() -> vmfbrain::Result<()> {
    let (h, w, d, j) = (6, 6, 16, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let raw = Array3::from_shape_fn((h, w, d), |_| rng.random_range(-2.0..2.0));
    let features = normalize_features(&raw)?;
    let bank = random_bank(j, d, 30.0, &mut rng);

    let activations = vmf_activations(&features, &bank)?;
    println!("activations: {}x{} positions x {j} kernels", h, w);

    // per-position sums are exactly normalized
    let mut worst = 0.0f64;
    for i in 0..h {
        for jj in 0..w {
            let sum: f64 = (0..j).map(|k| activations.values[[i, jj, k]]).sum();
            worst = worst.max((sum - 1.0).abs());
        }
    }
    println!("max |sum - 1| over positions: {worst:.2e}");
    assert!(worst < 1e-6);

    let loss = clustering_loss(&features, &bank)?;
    println!("clustering loss (negative mean best cosine): {loss:.4}");
    assert!((-1.0..=1.0).contains(&loss));

    // concentration rescaling sharpens but never reorders the winners
    let winners = |concentration: f64| -> Vec<usize> {
        let bank = KernelBank {
            kernels: bank.kernels.clone(),
            concentration,
        };
        let acts = vmf_activations(&features, &bank).unwrap();
        (0..h * w)
            .map(|p| {
                let (i, jj) = (p / w, p % w);
                (0..j)
                    .max_by(|&a, &b| {
                        acts.values[[i, jj, a]]
                            .partial_cmp(&acts.values[[i, jj, b]])
                            .unwrap()
                    })
                    .unwrap()
            })
            .collect()
    };
    assert_eq!(winners(30.0), winners(90.0));
    println!("argmax kernel per position is invariant to concentration scaling");
    Ok(())
}
