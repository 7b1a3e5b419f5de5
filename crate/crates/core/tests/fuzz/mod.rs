//! Seeded byte-level corruption of valid tile payloads and tileset documents.
#![allow(dead_code)]

use fieldwork_core::tileset::{decode_with_transform, parse_tileset, MemoryResolver};
use nalgebra::Matrix4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Applies one to four random edits: bit flips, byte stores, extreme u32
/// writes (lengths and offsets), truncation, extension, or chunk swaps.
pub fn mutate(input: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut out = input.to_vec();
    for _ in 0..rng.random_range(1..=4) {
        if out.is_empty() {
            out.push(rng.random());
            continue;
        }
        let len = out.len();
        match rng.random_range(0..7) {
            0 => {
                let i = rng.random_range(0..len);
                out[i] ^= 1 << rng.random_range(0..8);
            }
            1 => {
                let i = rng.random_range(0..len);
                out[i] = rng.random();
            }
            2 => {
                // header-ish region where lengths and offsets live
                let i = rng.random_range(0..len.min(64)) & !3;
                let v: u32 = match rng.random_range(0..4) {
                    0 => 0,
                    1 => u32::MAX,
                    2 => len as u32 + rng.random_range(1..64),
                    _ => rng.random(),
                };
                for (k, b) in v.to_le_bytes().iter().enumerate() {
                    if i + k < len {
                        out[i + k] = *b;
                    }
                }
            }
            3 => out.truncate(rng.random_range(0..len)),
            4 => {
                let extra = rng.random_range(1..32);
                out.extend((0..extra).map(|_| rng.random::<u8>()));
            }
            5 => {
                let a = rng.random_range(0..len);
                let b = rng.random_range(0..len);
                let n = rng.random_range(0..=16).min(len - a.max(b));
                for k in 0..n {
                    out.swap(a + k, b + k);
                }
            }
            _ => {
                // rewrite a digit inside JSON to stress numeric fields
                if let Some(i) = (0..len).map(|_| rng.random_range(0..len)).find(|&i| out[i].is_ascii_digit()) {
                    out[i] = b"0123456789-e.9"[rng.random_range(0..14)];
                }
            }
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct FuzzReport {
    pub cases: usize,
    pub errors: usize,
    pub accepted: usize,
}

/// Feeds `cases` corrupted variants of `corpus` to the content decoder (for
/// binary payloads) or the tileset parser (for `.json`). Panics propagate.
pub fn run(corpus: &[(String, Vec<u8>)], cases: usize, seed: u64) -> FuzzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FuzzReport::default();
    let empty = MemoryResolver::default();
    for k in 0..cases {
        let (name, bytes) = &corpus[k % corpus.len()];
        let bad = mutate(bytes, &mut rng);
        let ok = if name.ends_with(".json") {
            parse_tileset(&bad, name, &empty).is_ok()
        } else {
            decode_with_transform(&bad, &Matrix4::identity()).is_ok()
        };
        report.cases += 1;
        if ok {
            report.accepted += 1;
        } else {
            report.errors += 1;
        }
    }
    report
}
