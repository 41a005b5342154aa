//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use radassist_core::imaging::LabelMask;

pub fn occupied(mask: &LabelMask, label: u32) -> HashSet<(i64, i64, i64)> {
    let [nx, ny, nz] = mask.dims();
    let mut set = HashSet::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(x, y, z) == label {
                    set.insert((x as i64, y as i64, z as i64));
                }
            }
        }
    }
    set
}

/// Faces per axis, found by probing all six neighbours of every voxel.
pub fn faces(mask: &LabelMask, label: u32) -> [u64; 3] {
    let set = occupied(mask, label);
    let mut out = [0u64; 3];
    for &(x, y, z) in &set {
        for (axis, d) in [(0, (1, 0, 0)), (1, (0, 1, 0)), (2, (0, 0, 1))] {
            for sign in [-1i64, 1] {
                let n = (x + sign * d.0, y + sign * d.1, z + sign * d.2);
                if !set.contains(&n) {
                    out[axis] += 1;
                }
            }
        }
    }
    out
}

/// Surface area accumulated one exposed face at a time.
pub fn area_mm2(mask: &LabelMask, label: u32) -> f64 {
    let [sx, sy, sz] = mask.spacing();
    let face = [sy * sz, sx * sz, sx * sy];
    let set = occupied(mask, label);
    let mut total = 0.0;
    let mut cells: Vec<_> = set.iter().copied().collect();
    cells.sort();
    for (x, y, z) in cells {
        for (axis, d) in [(0usize, (1i64, 0i64, 0i64)), (1, (0, 1, 0)), (2, (0, 0, 1))] {
            for sign in [-1i64, 1] {
                if !set.contains(&(x + sign * d.0, y + sign * d.1, z + sign * d.2)) {
                    total += face[axis];
                }
            }
        }
    }
    total
}

pub fn volume_cm3(mask: &LabelMask, label: u32) -> f64 {
    let [sx, sy, sz] = mask.spacing();
    let n = mask.labels().iter().filter(|&&l| l == label).count();
    n as f64 * sx * sy * sz / 1000.0
}

/// LCS length by enumerating every subsequence of the shorter list.
pub fn lcs_brute<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let is_subseq = |pick: &[&T]| {
        let mut it = long.iter();
        pick.iter().all(|p| it.any(|t| t == *p))
    };
    let mut best = 0;
    for bits in 0u32..(1 << short.len()) {
        let len = bits.count_ones() as usize;
        if len <= best {
            continue;
        }
        let pick: Vec<&T> = (0..short.len())
            .filter(|i| bits & (1 << i) != 0)
            .map(|i| &short[i])
            .collect();
        if is_subseq(&pick) {
            best = len;
        }
    }
    best
}

pub fn kidney_table() -> BTreeMap<u32, String> {
    BTreeMap::from([
        (1, "left kidney".to_string()),
        (2, "right kidney".to_string()),
    ])
}
