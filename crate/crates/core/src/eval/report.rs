use std::fmt::Write as _;

use super::metrics::{mean_mpjpe, pcp, procrustes_align};
use crate::synth::SkeletonSpec;
use crate::{fmt_sig, Result};

/// Threshold of the PCP score, as a fraction of the part length.
pub const PCP_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub mpjpe_mm: f64,
    pub procrustes_mpjpe_mm: f64,
    pub pcp_per_part: Vec<(String, f64)>,
    pub pcp_all: f64,
}

impl MetricReport {
    /// `metric,value` lines, values to six significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        writeln!(out, "mpjpe_mm,{}", fmt_sig(self.mpjpe_mm)).unwrap();
        writeln!(out, "procrustes_mpjpe_mm,{}", fmt_sig(self.procrustes_mpjpe_mm)).unwrap();
        writeln!(out, "pcp_all,{}", fmt_sig(self.pcp_all)).unwrap();
        for (part, v) in &self.pcp_per_part {
            writeln!(out, "pcp_{part},{}", fmt_sig(*v)).unwrap();
        }
        out
    }
}

/// All three protocols over a set of predictions.
pub fn evaluate(preds: &[Vec<f64>], gts: &[Vec<f64>], skel: &SkeletonSpec) -> Result<MetricReport> {
    let mpjpe_mm = mean_mpjpe(preds, gts)?;
    let mut aligned = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        aligned += procrustes_align(p, g)?.1;
    }
    let score = pcp(preds, gts, skel, PCP_THRESHOLD)?;
    Ok(MetricReport {
        mpjpe_mm,
        procrustes_mpjpe_mm: aligned / preds.len() as f64,
        pcp_per_part: score.per_part,
        pcp_all: score.all,
    })
}
