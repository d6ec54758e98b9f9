//! Shared helpers for integration tests: a synthetic corpus whose
//! "families" are distinct byte-pattern generators, rendered through
//! the real conversion pipeline.

use std::path::Path;

use malvis::corpus::{self, CorpusManifest};
use malvis::rng::Rng;
use malvis::visualize::{bytes_to_image, write_image_png, RawBinary};

/// Deterministic byte pattern for one sample of one synthetic family.
/// Patterns differ in spatial structure, not just brightness, so they
/// exercise the conv stack rather than a mean-luminance shortcut.
pub fn family_bytes(family: usize, rng: &mut Rng) -> Vec<u8> {
    let len = 2048 + rng.next_below(2048) as usize;
    let phase = rng.next_below(251) as usize;
    (0..len)
        .map(|i| {
            let i = i + phase;
            let v = match family {
                // slow sawtooth
                0 => (i % 97) * 2,
                // fast diagonal ramp
                1 => (i * 7) % 256,
                // horizontal bands two rows tall (width 32 rasters)
                2 => {
                    if (i / 64).is_multiple_of(2) {
                        235
                    } else {
                        20
                    }
                }
                // vertical split
                3 => {
                    if i % 32 < 16 {
                        240
                    } else {
                        15
                    }
                }
                // per-row gradient
                _ => (i % 32) * 8,
            };
            // light per-byte jitter
            (v as u8).wrapping_add((rng.next_below(9) as u8).wrapping_sub(4))
        })
        .collect()
}

/// Write `per_family` synthetic binaries per family under
/// `root/bin/<family>/`, render them to PNGs under
/// `root/img/<family>/`, and return the ingested manifest.
pub fn synth_corpus(
    root: &Path,
    families: usize,
    per_family: usize,
    seed: u64,
) -> CorpusManifest {
    let img_root = root.join("img");
    for fam in 0..families {
        let mut rng = Rng::new(seed ^ (fam as u64) << 8);
        let dir = img_root.join(format!("fam{fam}"));
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..per_family {
            let bytes = family_bytes(fam, &mut rng);
            let bin = RawBinary::new(bytes, format!("fam{fam}/{i}"));
            let img = bytes_to_image(&bin, None).unwrap();
            write_image_png(&img, &dir.join(format!("{i:04}.png"))).unwrap();
        }
    }
    corpus::ingest(&img_root).unwrap()
}
