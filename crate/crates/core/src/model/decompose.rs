//! Per-token score attribution for the linear head, and the TD-bucketed
//! heatmap built from it.

use cordgt_numerics::Tape;
use serde::Serialize;

use super::{CorDgt, EncoderInput};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contribution {
    pub token: usize,
    pub side: u8,
    pub td_u: f64,
    pub td_v: f64,
    pub sd_u: f64,
    pub sd_v: f64,
    /// `Φᵀ h_w`.
    pub contribution: f64,
    /// Pooling weight of the token, `1 / |own context|`.
    pub weight: f64,
}

/// Contributions of every non-padding token of a link input together with
/// the logit they add up to: `Σ weight · contribution`.
pub fn decompose_scores(model: &CorDgt, input: &EncoderInput) -> Result<(Vec<Contribution>, f64)> {
    let phi = model.linear_head().ok_or(CoreError::HeadAbsent)?;
    if input.targets != 2 {
        return Err(CoreError::InvalidConfig(
            "decomposition needs a link input".into(),
        ));
    }
    let mut tape = Tape::new();
    let h = model.encode(&mut tape, input);
    let phi = tape.param(model.params(), phi);
    let c = tape.matmul(h, phi);
    let values = tape.value(c).data().to_vec();
    let mut out = Vec::new();
    let mut logit = 0.0;
    for (side, pool) in input.pools.iter().enumerate() {
        let weight = 1.0 / pool.len() as f64;
        for &i in pool.iter() {
            let p = input.prox[i];
            logit += weight * values[i];
            out.push(Contribution {
                token: i,
                side: side as u8,
                td_u: p[0].td,
                td_v: p[1].td,
                sd_u: p[0].sd,
                sd_v: p[1].sd,
                contribution: values[i],
                weight,
            });
        }
    }
    Ok((out, logit))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatmapCell {
    pub bucket_u: usize,
    pub bucket_v: usize,
    pub td_u_lo: f64,
    pub td_u_hi: f64,
    pub td_v_lo: f64,
    pub td_v_hi: f64,
    pub count: usize,
    /// `NaN` when the bucket is empty.
    pub mean: f64,
}

fn bucket_of(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((x - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

/// Groups contributions into a `bins × bins` grid of equal-width TD ranges
/// (toward u, toward v) spanning the observed values, and averages each cell.
pub fn bucket_heatmap(contribs: &[Contribution], bins: usize) -> Vec<HeatmapCell> {
    assert!(bins > 0, "at least one bucket");
    let range = |f: fn(&Contribution) -> f64| {
        contribs
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
                (a.min(x), b.max(x))
            })
    };
    let (ulo, uhi) = range(|c| c.td_u);
    let (vlo, vhi) = range(|c| c.td_v);
    let mut sums = vec![(0usize, 0.0f64); bins * bins];
    for c in contribs {
        let bu = bucket_of(c.td_u, ulo, uhi, bins);
        let bv = bucket_of(c.td_v, vlo, vhi, bins);
        let cell = &mut sums[bu * bins + bv];
        cell.0 += 1;
        cell.1 += c.contribution;
    }
    let edge = |lo: f64, hi: f64, i: usize| {
        if contribs.is_empty() {
            0.0
        } else {
            lo + (hi - lo) * i as f64 / bins as f64
        }
    };
    let mut cells = Vec::with_capacity(bins * bins);
    for bu in 0..bins {
        for bv in 0..bins {
            let (count, sum) = sums[bu * bins + bv];
            cells.push(HeatmapCell {
                bucket_u: bu,
                bucket_v: bv,
                td_u_lo: edge(ulo, uhi, bu),
                td_u_hi: edge(ulo, uhi, bu + 1),
                td_v_lo: edge(vlo, vhi, bv),
                td_v_hi: edge(vlo, vhi, bv + 1),
                count,
                mean: if count == 0 {
                    f64::NAN
                } else {
                    sum / count as f64
                },
            });
        }
    }
    cells
}

/// One row per cell: bucket indices, TD ranges, token count and mean.
pub fn heatmap_csv(cells: &[HeatmapCell]) -> String {
    let mut out = String::from("bucket_u,bucket_v,td_u_lo,td_u_hi,td_v_lo,td_v_hi,count,mean\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.bucket_u, c.bucket_v, c.td_u_lo, c.td_u_hi, c.td_v_lo, c.td_v_hi, c.count, c.mean
        ));
    }
    out
}
