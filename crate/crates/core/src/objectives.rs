//! Mass and depth metrics, and the training losses.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::geom::Vec3;
use crate::pcops::PointCloud;
use crate::{Error, Result};

/// Predicted masses are floored here (kg) before taking logarithms, both in
/// the loss and at evaluation, so a collapsed volume stays finite.
pub const MASS_FLOOR: f64 = 1e-9;

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive, got {x}")))
    }
}

/// `|ln y − ln ŷ|`
pub fn alde(y: f64, y_hat: f64) -> Result<f64> {
    positive("true mass", y)?;
    positive("predicted mass", y_hat)?;
    Ok((y.ln() - y_hat.ln()).abs())
}

/// `|(y − ŷ) / y|`
pub fn ape(y: f64, y_hat: f64) -> Result<f64> {
    positive("true mass", y)?;
    Ok(((y - y_hat) / y).abs())
}

/// `min(ŷ/y, y/ŷ)`
pub fn mnre(y: f64, y_hat: f64) -> Result<f64> {
    positive("true mass", y)?;
    positive("predicted mass", y_hat)?;
    Ok((y_hat / y).min(y / y_hat))
}

/// Fraction of predictions within a factor of two (`mnre ≥ 0.5`).
pub fn q_fraction(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptySet("q over no predictions".into()));
    }
    let mut within = 0usize;
    for &(y, y_hat) in pairs {
        if mnre(y, y_hat)? >= 0.5 {
            within += 1;
        }
    }
    Ok(within as f64 / pairs.len() as f64)
}

/// Fraction of predictions off by a factor of two or more (`mnre < 0.5`).
pub fn q_outside_fraction(pairs: &[(f64, f64)]) -> Result<f64> {
    Ok(1.0 - q_fraction(pairs)?)
}

fn nearest_sq(p: &Vec3, set: &[Vec3]) -> f64 {
    set.iter()
        .map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric Chamfer distance: mean squared nearest-neighbor distance from
/// each set to the other, summed over both directions.
pub fn chamfer_points(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet("Chamfer distance with an empty point set".into()));
    }
    let ab: f64 = a.iter().map(|p| nearest_sq(p, b)).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.iter().map(|p| nearest_sq(p, a)).sum::<f64>() / b.len() as f64;
    Ok(ab + ba)
}

/// Chamfer distance over the real (non-padding) points of two clouds.
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    chamfer_points(p.real(), q.real())
}

/// `ALDE + λ·CD`, where the Chamfer term is absent for samples without a
/// reconstruction target.
pub fn total_loss(alde_term: f64, cd_term: Option<f64>, lambda: f64) -> f64 {
    alde_term + cd_term.map_or(0.0, |cd| lambda * cd)
}

/// Graph form of ALDE on a scalar predicted mass, with the mass floored by
/// [`MASS_FLOOR`].
pub fn alde_loss(g: &mut Graph, mass: Var, y: f64) -> Result<Var> {
    positive("true mass", y)?;
    let m = g.shift(mass, MASS_FLOOR);
    let l = g.ln(m);
    let d = g.shift(l, -y.ln());
    Ok(g.abs(d))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassMetricsReport {
    pub alde: f64,
    pub ape: f64,
    pub mnre: f64,
    /// Fraction within a factor of two.
    pub q: f64,
    /// Fraction off by a factor of two or more.
    pub q_outside: f64,
    pub n: usize,
}

impl MassMetricsReport {
    /// Means over `(true, predicted)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptySet("mass metrics over no predictions".into()));
        }
        let n = pairs.len() as f64;
        let (mut a, mut p, mut m) = (0.0, 0.0, 0.0);
        for &(y, y_hat) in pairs {
            a += alde(y, y_hat)?;
            p += ape(y, y_hat)?;
            m += mnre(y, y_hat)?;
        }
        let q = q_fraction(pairs)?;
        Ok(Self {
            alde: a / n,
            ape: p / n,
            mnre: m / n,
            q,
            q_outside: 1.0 - q,
            n: pairs.len(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetricsReport {
    pub mape: f64,
    pub mspe: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub log10: f64,
    pub silog: f64,
    pub n: usize,
}

/// All six depth metrics over the pixels selected by `mask` (every pixel
/// when `None`). The percentage errors are means over pixels; SILog uses
/// the two-term variance form with natural logarithms.
pub fn depth_metric_report(y: &[f64], y_hat: &[f64], mask: Option<&[bool]>) -> Result<DepthMetricsReport> {
    if y.len() != y_hat.len() || mask.is_some_and(|m| m.len() != y.len()) {
        return Err(Error::Shape(format!("depth arrays of {} and {} pixels", y.len(), y_hat.len())));
    }
    let selected = |i: usize| mask.map_or(true, |m| m[i]);
    let (mut ape, mut spe, mut se, mut sle, mut l10, mut d, mut d2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut n = 0usize;
    for i in (0..y.len()).filter(|&i| selected(i)) {
        let (t, p) = (y[i], y_hat[i]);
        positive("true depth", t)?;
        positive("predicted depth", p)?;
        let rel = (t - p) / t;
        ape += rel.abs();
        spe += rel * rel;
        se += (t - p).powi(2);
        sle += ((t + 1.0).ln() - (p + 1.0).ln()).powi(2);
        l10 += (t.log10() - p.log10()).abs();
        let dl = t.ln() - p.ln();
        d += dl;
        d2 += dl * dl;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let nf = n as f64;
    Ok(DepthMetricsReport {
        mape: ape / nf,
        mspe: spe / nf,
        rmse: (se / nf).sqrt(),
        rmse_log: (sle / nf).sqrt(),
        log10: l10 / nf,
        silog: (d2 / nf - (d / nf).powi(2)).max(0.0),
        n,
    })
}
