use rand::Rng;

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Mat;

pub const PROTO_CLUSTERS: usize = 5;
const RESTARTS: usize = 10;
const MAX_ITERS: usize = 100;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Seeded k-means (k-means++ seeding, best of several restarts by inertia).
/// Rows of `x` are points; returns one label per row.
pub fn kmeans(x: &Mat, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::EmptyInput("k-means input".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let k = k.min(n);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..RESTARTS {
        let mut rng = seeds::rng(seed, &[0x4b3a, restart as u64]);
        let mut centres: Vec<Vec<f64>> = vec![x.row(rng.random_range(0..n)).to_vec()];
        while centres.len() < k {
            let d: Vec<f64> = (0..n)
                .map(|i| centres.iter().map(|c| dist2(x.row(i), c)).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = d.iter().sum();
            if total <= 0.0 {
                break;
            }
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, di) in d.iter().enumerate() {
                if u < *di {
                    pick = i;
                    break;
                }
                u -= di;
            }
            centres.push(x.row(pick).to_vec());
        }
        let mut labels = vec![0usize; n];
        for _ in 0..MAX_ITERS {
            let mut changed = false;
            for (i, label) in labels.iter_mut().enumerate() {
                let (l, _) = centres
                    .iter()
                    .enumerate()
                    .map(|(j, c)| (j, dist2(x.row(i), c)))
                    .fold((0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
                if l != *label {
                    *label = l;
                    changed = true;
                }
            }
            for (j, c) in centres.iter_mut().enumerate() {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == j).collect();
                if members.is_empty() {
                    continue;
                }
                for (d, v) in c.iter_mut().enumerate() {
                    *v = members.iter().map(|&i| x.get(i, d)).sum::<f64>() / members.len() as f64;
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = (0..n).map(|i| dist2(x.row(i), &centres[labels[i]])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    Ok(best.expect("at least one restart").1)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Mean IoU between two label maps under the label matching that maximises
/// total IoU. Classes absent from both maps after matching are ignored.
pub fn matched_miou(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::geometry("label maps differ in size"));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("label maps".into()));
    }
    let k = a.iter().chain(b).max().copied().unwrap_or(0) + 1;
    if k > 8 {
        return Err(Error::Config(format!("exhaustive matching supports at most 8 labels, got {k}")));
    }
    let mut inter = vec![vec![0usize; k]; k];
    let mut ca = vec![0usize; k];
    let mut cb = vec![0usize; k];
    for (&x, &y) in a.iter().zip(b) {
        inter[x][y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let iou = |i: usize, j: usize| -> Option<f64> {
        let union = ca[i] + cb[j] - inter[i][j];
        (union > 0).then(|| inter[i][j] as f64 / union as f64)
    };
    let mut best = f64::NEG_INFINITY;
    let mut best_mean = 0.0;
    for perm in permutations(k) {
        let vals: Vec<f64> = (0..k).filter_map(|i| iou(i, perm[i])).collect();
        let total: f64 = vals.iter().sum();
        let mean = if vals.is_empty() { 1.0 } else { total / vals.len() as f64 };
        // ties in total IoU go to the higher mean so the result does not
        // depend on how labels are numbered
        if total > best + 1e-12 || ((total - best).abs() <= 1e-12 && mean > best_mean) {
            best = total.max(best);
            best_mean = mean;
        }
    }
    Ok(best_mean)
}

/// Clusters each feature map's locations (rows) into `k` groups and returns
/// the matched mean IoU of the two segmentations.
pub fn proto_object_miou(feats_a: &Mat, feats_b: &Mat, k: usize, seed: u64) -> Result<f64> {
    if feats_a.shape() != feats_b.shape() {
        return Err(Error::geometry("feature maps differ in shape"));
    }
    let la = kmeans(feats_a, k, seed)?;
    let lb = kmeans(feats_b, k, seed)?;
    matched_miou(&la, &lb)
}
