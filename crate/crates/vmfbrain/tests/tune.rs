//! Scratch harness for sizing the comparative-study recipe; not part of
//! the suite (run explicitly with `--ignored`).

use std::sync::OnceLock;
use vmfbrain::data::{
    generate_synthetic_dataset, make_split_samples, sample_labeled_subset, Split, SyntheticSpec,
    VolumeRecord,
};
use vmfbrain::metrics::evaluate_model;
use vmfbrain::supervision::{
    train, train_unet_baseline, SlicePredictor, TaskMode, TrainingConfig,
};

fn desk_volumes() -> &'static Vec<VolumeRecord> {
    static DATA: OnceLock<Vec<VolumeRecord>> = OnceLock::new();
    DATA.get_or_init(|| {
        let mut spec = SyntheticSpec::desk(17);
        if std::env::var("STUDYSPEC").is_ok() {
            spec.tumour_probability = 1.0;
            spec.geometry.ed_radius = (0.2, 0.3);
            spec.geometry.slice_half_span = (0.28, 0.38);
        }
        generate_synthetic_dataset(&spec).expect("synthetic dataset")
    })
}

fn env_f64(key: &str, default: f64) -> f64 {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn test_dice<P: SlicePredictor>(p: &P, test: &[VolumeRecord], mode: TaskMode) -> f64 {
    evaluate_model(p, test, mode, 16).expect("eval").mean_dice()
}

#[test]
#[ignore]
fn sweep() {
    let mode = TaskMode::WholeTumour;
    let volumes = desk_volumes();
    let train_volumes: Vec<_> = volumes.iter().filter(|v| v.split == Split::Train).cloned().collect();
    let val_volumes: Vec<_> = volumes.iter().filter(|v| v.split == Split::Val).cloned().collect();
    let test_volumes: Vec<_> = volumes.iter().filter(|v| v.split == Split::Test).cloned().collect();
    let base = make_split_samples(&train_volumes, Split::Train, mode).unwrap();
    let val = make_split_samples(&val_volumes, Split::Val, mode).unwrap();

    let epochs = env_usize("EPOCHS", 12);
    let batch = env_usize("BATCH", 16);
    let lr = env_f64("LR", 1e-3);
    let lambda = env_f64("LAMBDA", 0.5);
    let fraction = env_f64("FRACTION", 0.01);
    let seeds = env_usize("SEEDS", 1) as u64;
    let seed0 = env_usize("SEED0", 0) as u64;
    let arms = std::env::var("ARMS").unwrap_or_else(|_| "vmf,noweak,unet,unetfull".into());

    let mut config0 = TrainingConfig::reduced(mode);
    config0.epochs = epochs;
    config0.batch_size = batch;
    config0.learning_rate = lr;
    config0.pretrain_epochs = env_usize("PRETRAIN", 2);
    config0.pretrain_learning_rate = 1e-3;
    config0.kmeans_iters = env_usize("KMITERS", 40);
    config0.kmeans_vectors_per_image = env_usize("KMVEC", 32);
    config0.label_fraction = fraction;

    println!("epochs {epochs} batch {batch} lr {lr} lambda {lambda} fraction {fraction}");
    for seed in seed0..seed0 + seeds {
        let low = sample_labeled_subset(base.clone(), fraction, seed).unwrap();
        let t0 = std::time::Instant::now();
        let mut line = format!("seed {seed}:");
        if arms.contains("vmf") {
            let mut c = config0.clone();
            c.seed = seed;
            c.lambda_weak = lambda;
            let o = train(&low, &val, &c).unwrap();
            if std::env::var("DIAG").is_ok() {
                let labeled: Vec<_> = low.iter().filter(|s| s.has_pixel_label).collect();
                for s in &labeled {
                    let fg = s.mask.iter().filter(|&&v| v != 0).count();
                    println!("  labeled {}#{} fg {}", s.volume_id, s.slice_index, fg);
                }
                for r in &o.log {
                    println!(
                        "  ep {:2} train {:.4} clu {:.4} dice {:.4} weak {:.4} val {:.1}",
                        r.epoch, r.mean_total, r.mean_clustering, r.mean_dice, r.mean_weak, r.val_dice
                    );
                }
            }
            line += &format!(
                " vmf {:.2} (val {:.1}@{})",
                test_dice(&o.bundle, &test_volumes, mode),
                o.best_val_dice,
                o.best_epoch
            );
        }
        if arms.contains("noweak") {
            let mut c = config0.clone();
            c.seed = seed;
            c.lambda_weak = 0.0;
            let o = train(&low, &val, &c).unwrap();
            line += &format!(" noweak {:.2}", test_dice(&o.bundle, &test_volumes, mode));
        }
        if arms.contains("unet,") || arms.ends_with("unet") {
            let mut c = config0.clone();
            c.seed = seed;
            let o = train_unet_baseline(&low, &val, &c).unwrap();
            line += &format!(" unet1 {:.2}", test_dice(&o.model, &test_volumes, mode));
        }
        if arms.contains("unetfull") {
            let full = sample_labeled_subset(base.clone(), 1.0, seed).unwrap();
            let mut c = config0.clone();
            c.seed = seed;
            c.label_fraction = 1.0;
            let o = train_unet_baseline(&full, &val, &c).unwrap();
            line += &format!(" unet100 {:.2}", test_dice(&o.model, &test_volumes, mode));
        }
        println!("{line} [{:.0}s]", t0.elapsed().as_secs_f64());
    }
}
