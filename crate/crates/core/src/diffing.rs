//! Feature classification by relative decoder norm.
//!
//! `r_k = ‖W_dec_R[:,k]‖ / (‖W_dec_B[:,k]‖ + ‖W_dec_R[:,k]‖)`, so r = 0 is a
//! base-only feature and r = 1 a reasoning-only one.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::crosscoder::CrosscoderParams;
use crate::error::{ensure_input, Result};

/// Both decoder norms below this make a feature dead.
pub const DEAD_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureClass {
    BaseOnly,
    Shared,
    FinetunedOnly,
    Dead,
}

impl FeatureClass {
    pub const ALL: [FeatureClass; 4] = [
        FeatureClass::BaseOnly,
        FeatureClass::Shared,
        FeatureClass::FinetunedOnly,
        FeatureClass::Dead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureClass::BaseOnly => "base_only",
            FeatureClass::Shared => "shared",
            FeatureClass::FinetunedOnly => "finetuned_only",
            FeatureClass::Dead => "dead",
        }
    }

    /// The class a feature would get with the B and R decoders exchanged.
    pub fn mirrored(self) -> Self {
        match self {
            FeatureClass::BaseOnly => FeatureClass::FinetunedOnly,
            FeatureClass::FinetunedOnly => FeatureClass::BaseOnly,
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RelativeNorm {
    Ratio(f64),
    Dead,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// `r` strictly below this is base-only.
    pub base_below: f64,
    /// `r` strictly above this is finetuned-only.
    pub finetuned_above: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            base_below: 0.1,
            finetuned_above: 0.9,
        }
    }
}

pub fn relative_norm(p: &CrosscoderParams, k: usize) -> Result<RelativeNorm> {
    ensure_input!(
        k < p.d_crosscoder(),
        "feature {k} out of range for d_crosscoder {}",
        p.d_crosscoder()
    );
    let nb = p.dec_base.col_norm(k);
    let nr = p.dec_reasoning.col_norm(k);
    Ok(relative_norm_from(nb, nr))
}

fn relative_norm_from(nb: f64, nr: f64) -> RelativeNorm {
    if nb < DEAD_NORM && nr < DEAD_NORM {
        RelativeNorm::Dead
    } else {
        RelativeNorm::Ratio(nr / (nb + nr))
    }
}

pub fn classify(r: RelativeNorm, t: Thresholds) -> FeatureClass {
    match r {
        RelativeNorm::Dead => FeatureClass::Dead,
        RelativeNorm::Ratio(r) if r < t.base_below => FeatureClass::BaseOnly,
        RelativeNorm::Ratio(r) if r > t.finetuned_above => FeatureClass::FinetunedOnly,
        RelativeNorm::Ratio(_) => FeatureClass::Shared,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub feature: usize,
    pub relative_norm: RelativeNorm,
    pub class: FeatureClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormDiffReport {
    pub thresholds: Thresholds,
    /// One row per feature of the subset, in subset order.
    pub features: Vec<FeatureNorm>,
    pub base_only: usize,
    pub shared: usize,
    pub finetuned_only: usize,
    pub dead: usize,
}

impl NormDiffReport {
    pub fn count(&self, class: FeatureClass) -> usize {
        match class {
            FeatureClass::BaseOnly => self.base_only,
            FeatureClass::Shared => self.shared,
            FeatureClass::FinetunedOnly => self.finetuned_only,
            FeatureClass::Dead => self.dead,
        }
    }

    /// Fraction of live (non-dead) features in `class`; dead features are excluded.
    pub fn fraction(&self, class: FeatureClass) -> f64 {
        let live = self.base_only + self.shared + self.finetuned_only;
        if live == 0 || class == FeatureClass::Dead {
            0.0
        } else {
            self.count(class) as f64 / live as f64
        }
    }

    /// Tab-separated `feature_id  r  class` table; dead features have an empty `r`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("feature_id\tr\tclass\n");
        for f in &self.features {
            let r = match f.relative_norm {
                RelativeNorm::Ratio(r) => format!("{r:.9}"),
                RelativeNorm::Dead => String::new(),
            };
            let _ = writeln!(out, "{}\t{}\t{}", f.feature, r, f.class.as_str());
        }
        out
    }
}

/// Classifies the given features and counts each class.
pub fn class_histogram(p: &CrosscoderParams, subset: &[usize], t: Thresholds) -> Result<NormDiffReport> {
    let mut report = NormDiffReport {
        thresholds: t,
        features: Vec::with_capacity(subset.len()),
        base_only: 0,
        shared: 0,
        finetuned_only: 0,
        dead: 0,
    };
    for &k in subset {
        let r = relative_norm(p, k)?;
        let class = classify(r, t);
        match class {
            FeatureClass::BaseOnly => report.base_only += 1,
            FeatureClass::Shared => report.shared += 1,
            FeatureClass::FinetunedOnly => report.finetuned_only += 1,
            FeatureClass::Dead => report.dead += 1,
        }
        report.features.push(FeatureNorm {
            feature: k,
            relative_norm: r,
            class,
        });
    }
    Ok(report)
}

/// Histogram over every feature of the crosscoder.
pub fn classify_all(p: &CrosscoderParams, t: Thresholds) -> Result<NormDiffReport> {
    let all: Vec<usize> = (0..p.d_crosscoder()).collect();
    class_histogram(p, &all, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{RngState, Tensor2D};

    fn with_columns(vb: &[Vec<f64>], vr: &[Vec<f64>]) -> CrosscoderParams {
        let dm = vb[0].len();
        let dc = vb.len();
        let mut p = CrosscoderParams::zeros(dm, dc);
        for k in 0..dc {
            p.dec_base.set_col(k, &vb[k]);
            p.dec_reasoning.set_col(k, &vr[k]);
        }
        p
    }

    #[test]
    fn relative_norm_cases() {
        let p = with_columns(
            &[vec![0.0, 0.0], vec![1.0, 1.0], vec![3.0, 0.0], vec![0.0, 0.0]],
            &[vec![0.0, 1.0], vec![-1.0, 1.0], vec![1.0, 0.0], vec![0.0, 0.0]],
        );
        assert_eq!(relative_norm(&p, 0).unwrap(), RelativeNorm::Ratio(1.0));
        assert_eq!(relative_norm(&p, 1).unwrap(), RelativeNorm::Ratio(0.5));
        assert_eq!(relative_norm(&p, 2).unwrap(), RelativeNorm::Ratio(0.25));
        assert_eq!(relative_norm(&p, 3).unwrap(), RelativeNorm::Dead);
        assert!(relative_norm(&p, 4).is_err());
    }

    #[test]
    fn classify_cases() {
        let t = Thresholds::default();
        assert_eq!(classify(RelativeNorm::Ratio(0.5), t), FeatureClass::Shared);
        assert_eq!(classify(RelativeNorm::Ratio(1.0), t), FeatureClass::FinetunedOnly);
        assert_eq!(classify(RelativeNorm::Ratio(0.0), t), FeatureClass::BaseOnly);
        assert_eq!(classify(RelativeNorm::Ratio(0.1), t), FeatureClass::Shared);
        assert_eq!(classify(RelativeNorm::Ratio(0.9), t), FeatureClass::Shared);
        assert_eq!(classify(RelativeNorm::Dead, t), FeatureClass::Dead);
    }

    #[test]
    fn classify_is_monotone_with_two_crossings() {
        let t = Thresholds::default();
        let classes: Vec<FeatureClass> = (0..=1000)
            .map(|i| classify(RelativeNorm::Ratio(i as f64 / 1000.0), t))
            .collect();
        let changes = classes.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(changes, 2);
        assert!(classes.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn symmetric_decoders_are_all_shared() {
        let mut rng = RngState::new(1);
        let mut p = CrosscoderParams::zeros(6, 20);
        p.dec_base = Tensor2D::random_normal(6, 20, 1.0, &mut rng);
        p.dec_reasoning = p.dec_base.clone();
        let rep = classify_all(&p, Thresholds::default()).unwrap();
        assert_eq!(rep.shared, 20);
        assert_eq!(rep.fraction(FeatureClass::Shared), 1.0);
    }

    #[test]
    fn empty_subset_has_zero_counts() {
        let p = CrosscoderParams::zeros(2, 3);
        let rep = class_histogram(&p, &[], Thresholds::default()).unwrap();
        assert_eq!((rep.base_only, rep.shared, rep.finetuned_only, rep.dead), (0, 0, 0, 0));
        assert!(rep.features.is_empty());
    }

    #[test]
    fn planted_histogram() {
        // 10 base-only, 10 finetuned-only, 80 shared columns with jittered norms.
        let mut rng = RngState::new(2);
        let dm = 8;
        let mut vb = Vec::new();
        let mut vr = Vec::new();
        for k in 0..100 {
            let u = rng.unit_vector(dm);
            let (sb, sr) = match k {
                0..=9 => (1.0, 0.02 * rng.uniform()),
                10..=19 => (0.02 * rng.uniform(), 1.0),
                _ => (0.5 + rng.uniform(), 0.5 + rng.uniform()),
            };
            vb.push(u.iter().map(|x| x * sb).collect());
            vr.push(u.iter().map(|x| x * sr).collect());
        }
        let p = with_columns(&vb, &vr);
        let rep = classify_all(&p, Thresholds::default()).unwrap();
        assert!(rep.base_only.abs_diff(10) <= 1);
        assert!(rep.finetuned_only.abs_diff(10) <= 1);
        assert!(rep.shared.abs_diff(80) <= 1);
        assert_eq!(rep.base_only + rep.shared + rep.finetuned_only + rep.dead, 100);
    }

    #[test]
    fn tsv_export() {
        let p = with_columns(&[vec![3.0], vec![0.0]], &[vec![1.0], vec![0.0]]);
        let rep = classify_all(&p, Thresholds::default()).unwrap();
        assert_eq!(
            rep.to_tsv(),
            "feature_id\tr\tclass\n0\t0.250000000\tshared\n1\t\tdead\n"
        );
    }
}
