//! Round-trips a mask and a checkpoint through disk, then shows how corrupted
//! files are rejected.

use abp::baselines::random_mask;
use abp::harness::format::{decode_mask, encode_mask, load_checkpoint, load_mask, mask_file_len, save_checkpoint, save_mask};
use abp::harness::task::{generate_task, TaskSpec};
use abp::Rng;

fn main() -> abp::Result<()> {
    let task = generate_task(&TaskSpec { n_train: 200, n_eval: 100, pretrain_steps: 200, ..TaskSpec::blobs(0) })?;
    let mask = random_mask(&task.network.mask_layout(), 0.9, &mut Rng::seed_from(1))?;
    let dir = std::env::temp_dir().join("abp_mask_file_example");
    save_mask(&mask, &dir.join("mask.abpm"))?;
    save_checkpoint(&task.network, &dir.join("base.abpc"))?;
    println!("mask file {} bytes (predicted {})", std::fs::metadata(dir.join("mask.abpm")).map(|m| m.len()).unwrap_or(0), mask_file_len(&mask));
    println!("mask round trip exact: {}", load_mask(&dir.join("mask.abpm"))? == mask);
    println!("checkpoint round trip exact: {}", load_checkpoint(&dir.join("base.abpc"))? == task.network);

    let bytes = encode_mask(&mask);
    let mut flipped = bytes.clone();
    flipped[bytes.len() - 5] ^= 0x04;
    println!("bit flip: {}", decode_mask(&flipped).unwrap_err());
    println!("truncated: {}", decode_mask(&bytes[..bytes.len() - 9]).unwrap_err());
    let mut wrong = bytes.clone();
    wrong[..4].copy_from_slice(b"XXXX");
    println!("wrong magic: {}", decode_mask(&wrong).unwrap_err());
    Ok(())
}
