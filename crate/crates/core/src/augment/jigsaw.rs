//! 3×3 jigsaw permutations used as pretext classes.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::lanczos::lanczos_resize;
use crate::error::{ensure, Result};
use crate::image::Image;
use crate::rng::{stream_rng, Stream};

pub const TILES: usize = 9;
pub const DEFAULT_CLASSES: usize = 35;
/// Random candidates screened by the greedy selection.
pub const CANDIDATES: usize = 100_000;

pub type Permutation = [u8; TILES];

pub const IDENTITY: Permutation = [0, 1, 2, 3, 4, 5, 6, 7, 8];

pub fn hamming(a: &Permutation, b: &Permutation) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

pub fn inverse(p: &Permutation) -> Permutation {
    let mut inv = [0u8; TILES];
    for (i, &v) in p.iter().enumerate() {
        inv[v as usize] = i as u8;
    }
    inv
}

/// Fixed list of permutations; class `i` is `perms[i]`, class 0 is the identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JigsawTable {
    perms: Vec<Permutation>,
}

impl JigsawTable {
    /// Greedy max-min-Hamming selection over random candidates, seeded.
    pub fn build(count: usize, seed: u64) -> Result<Self> {
        ensure!(count >= 1, "jigsaw table needs at least one permutation");
        ensure!(count <= 362_880, "only 9! = 362880 permutations exist");
        let mut rng = stream_rng(seed, Stream::Jigsaw, &[count as u64]);
        let pool = CANDIDATES.max(count * 4);
        let mut candidates: Vec<Permutation> = Vec::with_capacity(pool);
        for _ in 0..pool {
            let mut p = IDENTITY;
            p.shuffle(&mut rng);
            candidates.push(p);
        }
        let mut perms = vec![IDENTITY];
        let mut nearest: Vec<usize> = candidates.iter().map(|c| hamming(c, &IDENTITY)).collect();
        while perms.len() < count {
            let (best, &dist) = nearest
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("non-empty candidate pool");
            ensure!(dist > 0, "ran out of distinct permutations after {}", perms.len());
            let chosen = candidates[best];
            perms.push(chosen);
            for (n, c) in nearest.iter_mut().zip(&candidates) {
                *n = (*n).min(hamming(c, &chosen));
            }
        }
        Ok(Self { perms })
    }

    pub fn from_perms(perms: Vec<Permutation>) -> Result<Self> {
        ensure!(!perms.is_empty(), "empty jigsaw table");
        for p in &perms {
            let mut seen = [false; TILES];
            for &v in p {
                ensure!((v as usize) < TILES && !seen[v as usize], "{p:?} is not a permutation");
                seen[v as usize] = true;
            }
        }
        Ok(Self { perms })
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Permutation> {
        self.perms.get(index)
    }

    pub fn perms(&self) -> &[Permutation] {
        &self.perms
    }

    pub fn min_pairwise_hamming(&self) -> usize {
        let mut best = TILES;
        for i in 0..self.perms.len() {
            for j in (i + 1)..self.perms.len() {
                best = best.min(hamming(&self.perms[i], &self.perms[j]));
            }
        }
        best
    }
}

/// Rearranges the 3×3 tiles of a square image: output tile `i` is input tile
/// `perm[i]`, resized to `tile_side`. The result is `3·tile_side` on a side.
pub fn permute_tiles(x: &Image, perm: &Permutation, tile_side: usize) -> Result<Image> {
    ensure!(x.is_square(), "jigsaw needs a square image, got {}x{}", x.height(), x.width());
    ensure!(
        x.height() % 3 == 0 && x.height() > 0,
        "jigsaw side {} is not divisible by 3",
        x.height()
    );
    ensure!(tile_side > 0, "zero tile size");
    let p = x.height() / 3;
    let mut out = Image::zeros(x.channels(), 3 * tile_side, 3 * tile_side);
    for (dst, &src) in perm.iter().enumerate() {
        let (sr, sc) = (src as usize / 3, src as usize % 3);
        let tile = x.crop(sr * p, sc * p, p, p)?;
        let tile = if p == tile_side {
            tile
        } else {
            lanczos_resize(&tile, tile_side, tile_side)?
        };
        out.paste(&tile, (dst / 3) * tile_side, (dst % 3) * tile_side)?;
    }
    Ok(out)
}

/// Applies table entry `index`; the label of the result is `index`.
pub fn jigsaw(x: &Image, index: usize, table: &JigsawTable, tile_side: usize) -> Result<Image> {
    let perm = table.get(index).ok_or_else(|| {
        crate::Error::Contract(format!(
            "jigsaw index {index} outside table of {}",
            table.len()
        ))
    })?;
    permute_tiles(x, perm, tile_side)
}
