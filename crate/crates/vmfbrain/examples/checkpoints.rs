//! Checkpoint round trips and compatibility checking.
//!
//! Kernel banks and whole models persist as small versioned binary
//! files. Model files embed a content hash of the architecture, so
//! loading a checkpoint against an incompatible configuration fails
//! before any tensor is read.
//!
//! Run with: `cargo run --example checkpoints`

use vmfbrain::checkpoint::{
    arch_hash, load_kernel_bank, load_model, save_kernel_bank, save_model,
};
use vmfbrain::model::{ArchConfig, ModelBundle};

fn main() -> vmfbrain::Result<()> {
    let dir = std::env::temp_dir().join("vmfbrain_example_ckpt");
    std::fs::create_dir_all(&dir)?;

    let arch = ArchConfig::reduced(2);
    let bundle = ModelBundle::new(&arch, 55)?;
    println!(
        "architecture hash: {:#018x} ({} parameters)",
        arch_hash(&arch)?,
        bundle.param_count()
    );

    // kernel bank: J, D, concentration, row-major matrix
    let bank_path = dir.join("bank.vmfk");
    save_kernel_bank(&bank_path, &bundle.bank())?;
    let bank = load_kernel_bank(&bank_path)?;
    assert_eq!(bank.kernels, bundle.bank().kernels);
    println!(
        "bank round trip: {} kernels x {} dims, concentration {}",
        bank.kernel_count(),
        bank.feature_dim(),
        bank.concentration
    );

    // full model: architecture + named parameters + bank
    let model_path = dir.join("model.vmfc");
    save_model(&model_path, &bundle)?;
    let loaded = load_model(&model_path)?;
    let images = ndarray::Array4::from_elem((1, 4, arch.input_size, arch.input_size), 0.3);
    assert_eq!(
        bundle.forward(&images)?.probs,
        loaded.forward(&images)?.probs
    );
    println!(
        "model round trip reproduces the forward pass bit-for-bit ({} bytes)",
        std::fs::metadata(&model_path)?.len()
    );

    // incompatible architectures are caught by the hash
    let other = arch_hash(&ArchConfig::reduced(4))?;
    println!(
        "a 4-class architecture hashes differently: {:#018x}",
        other
    );
    assert_ne!(other, arch_hash(&arch)?);
    Ok(())
}
