//! Representative sample selection.
//!
//! Kennard-Stone picks a subset that covers a point cloud homogeneously: the
//! first two picks are the farthest pair, and every later pick maximizes its
//! minimum distance to the already-selected set. Because raw descriptor
//! space is high-dimensional, [`select_representative`] first projects the
//! rows to 2-D with t-SNE and runs the selection there; a raw-space variant
//! is kept for comparison runs.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tsne::{tsne_embed, TsneConfig};

/// Greedy max-min selection of `k` point indices, in selection order.
///
/// Ties in any distance comparison resolve to the lowest index, which makes
/// the selection reproducible and lets brute-force oracles match it exactly.
/// `k = 1` is a documented extension returning the point closest to the
/// centroid; `k = 0` and `k > N` are errors.
pub fn kennard_stone(points: &Array2<f64>, k: usize) -> Result<Vec<usize>> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!(
            "k = {k} outside 1..={n}"
        )));
    }
    if k == 1 {
        return Ok(vec![closest_to_centroid(points)]);
    }

    let d2 = |a: usize, b: usize| -> f64 {
        points
            .row(a)
            .iter()
            .zip(points.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };

    // Farthest pair; scanning i < j in order keeps the lowest pair on ties.
    let mut best = (0usize, 1usize, f64::NEG_INFINITY);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = d2(i, j);
            if d > best.2 {
                best = (i, j, d);
            }
        }
    }
    let mut selected = vec![best.0, best.1];

    // min squared distance from each point to the selected set
    let mut min_d2: Vec<f64> = (0..n)
        .map(|r| d2(r, best.0).min(d2(r, best.1)))
        .collect();
    let mut taken = vec![false; n];
    taken[best.0] = true;
    taken[best.1] = true;

    while selected.len() < k {
        let mut pick = None;
        let mut pick_d2 = f64::NEG_INFINITY;
        for (r, &t) in taken.iter().enumerate() {
            if !t && min_d2[r] > pick_d2 {
                pick = Some(r);
                pick_d2 = min_d2[r];
            }
        }
        let pick = pick.expect("k <= n guarantees an unselected point");
        selected.push(pick);
        taken[pick] = true;
        for (r, m) in min_d2.iter_mut().enumerate() {
            let d = d2(r, pick);
            if d < *m {
                *m = d;
            }
        }
    }
    Ok(selected)
}

fn closest_to_centroid(points: &Array2<f64>) -> usize {
    let n = points.nrows() as f64;
    let centroid: Vec<f64> = points
        .columns()
        .into_iter()
        .map(|c| c.sum() / n)
        .collect();
    let mut best = 0usize;
    let mut best_d2 = f64::INFINITY;
    for (i, row) in points.rows().into_iter().enumerate() {
        let d: f64 = row
            .iter()
            .zip(&centroid)
            .map(|(x, c)| (x - c) * (x - c))
            .sum();
        if d < best_d2 {
            best = i;
            best_d2 = d;
        }
    }
    best
}

/// Embed the rows in 2-D with t-SNE, then Kennard-Stone-select `k` of them.
/// Returns row indices in selection order.
pub fn select_representative(x: &Array2<f64>, k: usize, tsne: &TsneConfig) -> Result<Vec<usize>> {
    let embedding = tsne_embed(x, tsne)?;
    kennard_stone(&embedding.coords, k)
}

/// Kennard-Stone directly in descriptor space (no embedding); kept for
/// comparing against the dimension-reduced selection.
pub fn select_representative_raw(x: &Array2<f64>, k: usize) -> Result<Vec<usize>> {
    kennard_stone(x, k)
}
