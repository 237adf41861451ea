use crate::error::{Error, Result};
use crate::losses::{gradient_size_profile, LossKind, ProfileRow};

pub const PROFILE_HEADER: &str = "size,loss_kind,mean_abs_grad,p95_abs_grad";
pub const DEFAULT_PROFILE_SIZES: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];

pub fn profile_csv(rows: &[ProfileRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    let mut out = String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))?;
    if rows.is_empty() {
        out = format!("{PROFILE_HEADER}\n");
    }
    Ok(out)
}

/// Runs the size profile and renders it as CSV.
pub fn profile_command(kinds: &[LossKind], sizes: &[f64], samples: usize, seed: u64) -> Result<(Vec<ProfileRow>, String)> {
    let rows = gradient_size_profile(kinds, sizes, samples, seed)?;
    let csv = profile_csv(&rows)?;
    Ok((rows, csv))
}
