use rayon::prelude::*;
use serde::Serialize;

use super::trial::{run_trial, TrialRepr};
use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::gaussian::{obb_to_gbb, obb_to_lgbb};
use crate::geometry::{boundary_pairs, encode, repr_distance, BoundaryPairConfig, ObbLe};
use crate::rng::SeedStream;

/// One `(representation, ε)` cell of the boundary sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryRow {
    pub kind: String,
    pub eps: f64,
    pub pairs: usize,
    pub mean_iou: f64,
    pub mean_repr_distance: f64,
    pub min_repr_distance: f64,
    pub mean_loss: f64,
    pub converged_fraction: f64,
    pub mean_steps: f64,
}

/// `steps` evenly spaced values from `eps_min` to `eps_max`.
pub fn eps_grid(cfg: &ExperimentConfig) -> Vec<f64> {
    if cfg.eps_steps == 1 {
        return vec![cfg.eps_min];
    }
    (0..cfg.eps_steps)
        .map(|i| cfg.eps_min + (cfg.eps_max - cfg.eps_min) * i as f64 / (cfg.eps_steps - 1) as f64)
        .collect()
}

/// Parameter-space distance between the encodings of two boxes. Gaussian
/// forms divide centers by the mean diagonal and second moments by its
/// square.
fn encoded_distance(repr: TrialRepr, a: &ObbLe, b: &ObbLe) -> Result<f64> {
    let gaussian = |mu: [[f64; 2]; 2], m: [[f64; 3]; 2]| {
        let d = 0.5 * (a.diagonal() + b.diagonal());
        let s: f64 = (0..2).map(|i| ((mu[0][i] - mu[1][i]) / d).powi(2)).sum::<f64>()
            + (0..3).map(|i| ((m[0][i] - m[1][i]) / (d * d)).powi(2)).sum::<f64>();
        s.sqrt()
    };
    match repr {
        TrialRepr::Classical(kind) => repr_distance(&encode(a, kind), &encode(b, kind)),
        TrialRepr::Gbb => {
            let (p, q) = (obb_to_gbb(a), obb_to_gbb(b));
            Ok(gaussian([p.mu, q.mu], [p.g, q.g]))
        }
        TrialRepr::Lgbb => {
            let (p, q) = (obb_to_lgbb(a), obb_to_lgbb(b));
            Ok(gaussian([p.mu, q.mu], [p.l, q.l]))
        }
    }
}

/// For every representation and ε: encoding distance and loss between the
/// two sides of the seam, plus regression from one side to the other.
/// Rows are sorted by (kind name, ε).
pub fn boundary_experiment(cfg: &ExperimentConfig) -> Result<Vec<BoundaryRow>> {
    cfg.validate()?;
    let stream = SeedStream::new(cfg.seed).child(0x6264);
    let mut cells: Vec<(TrialRepr, usize, f64)> = Vec::new();
    for repr in TrialRepr::ALL {
        for (j, eps) in eps_grid(cfg).into_iter().enumerate() {
            cells.push((repr, j, eps));
        }
    }
    cells.sort_by(|a, b| a.0.name().cmp(b.0.name()).then(a.2.total_cmp(&b.2)));

    cells
        .par_iter()
        .map(|&(repr, j, eps)| {
            // the same pairs for every representation at a given ε
            let pair_cfg = BoundaryPairConfig { eps_min: eps, eps_max: eps, ..BoundaryPairConfig::default() };
            let pairs = boundary_pairs(cfg.trials, stream.child(j as u64).seed(), &pair_cfg);
            let n = pairs.len() as f64;
            let (mut iou, mut dist, mut min_dist, mut loss, mut conv, mut steps) = (0.0, 0.0, f64::INFINITY, 0.0, 0.0, 0.0);
            for (i, p) in pairs.iter().enumerate() {
                let d = encoded_distance(repr, &p.a, &p.b)?;
                let rec = run_trial(repr, repr.default_loss(), p.a.raw(), &p.b, &p.b, cfg, i as u64)?;
                iou += p.iou;
                dist += d;
                min_dist = f64::min(min_dist, d);
                loss += super::trial::loss_at(repr, &p.a, &p.b, cfg)?;
                conv += rec.converged as u8 as f64;
                steps += rec.steps as f64;
            }
            Ok(BoundaryRow {
                kind: repr.name().to_string(),
                eps,
                pairs: pairs.len(),
                mean_iou: iou / n,
                mean_repr_distance: dist / n,
                min_repr_distance: min_dist,
                mean_loss: loss / n,
                converged_fraction: conv / n,
                mean_steps: steps / n,
            })
        })
        .collect()
}

pub fn boundary_csv(rows: &[BoundaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}
