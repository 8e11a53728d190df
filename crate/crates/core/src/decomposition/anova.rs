//! Balanced three-way ANOVA decomposition of a tensor's corrected sum of
//! squares into main effects, two-way interactions and the three-way term.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor3;

/// Sums of squares as percentages of the corrected total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaReport {
    /// Modes 1, 2, 3.
    pub main_effect_pct: [f64; 3],
    /// Interactions I-J, I-K, J-K.
    pub two_way_pct: [f64; 3],
    pub three_way_pct: f64,
}

impl AnovaReport {
    /// Largest pure two-way interaction percentage.
    pub fn max_two_way_pct(&self) -> f64 {
        self.two_way_pct.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn total_pct(&self) -> f64 {
        self.main_effect_pct.iter().sum::<f64>() + self.two_way_pct.iter().sum::<f64>() + self.three_way_pct
    }
}

pub fn anova_interaction(x: &Tensor3) -> Result<AnovaReport> {
    let [ni, nj, nk] = x.dims();
    if ni < 2 || nj < 2 || nk < 2 {
        return invalid(format!("ANOVA needs every extent >= 2, got {:?}", x.dims()));
    }
    let n = (ni * nj * nk) as f64;
    let grand = x.values().iter().sum::<f64>() / n;

    let mut mi = vec![0.0; ni];
    let mut mj = vec![0.0; nj];
    let mut mk = vec![0.0; nk];
    let mut mij = vec![0.0; ni * nj];
    let mut mik = vec![0.0; ni * nk];
    let mut mjk = vec![0.0; nj * nk];
    for i in 0..ni {
        for j in 0..nj {
            for k in 0..nk {
                let v = x.get(i, j, k) - grand;
                mi[i] += v;
                mj[j] += v;
                mk[k] += v;
                mij[i * nj + j] += v;
                mik[i * nk + k] += v;
                mjk[j * nk + k] += v;
            }
        }
    }
    mi.iter_mut().for_each(|v| *v /= (nj * nk) as f64);
    mj.iter_mut().for_each(|v| *v /= (ni * nk) as f64);
    mk.iter_mut().for_each(|v| *v /= (ni * nj) as f64);
    mij.iter_mut().for_each(|v| *v /= nk as f64);
    mik.iter_mut().for_each(|v| *v /= nj as f64);
    mjk.iter_mut().for_each(|v| *v /= ni as f64);

    // Centered marginal means are the main effects; two-way effects subtract
    // the contained main effects.
    let ab = |i: usize, j: usize| mij[i * nj + j] - mi[i] - mj[j];
    let ac = |i: usize, k: usize| mik[i * nk + k] - mi[i] - mk[k];
    let bc = |j: usize, k: usize| mjk[j * nk + k] - mj[j] - mk[k];

    let mut ss_total = 0.0;
    let mut ss_abc = 0.0;
    for i in 0..ni {
        for j in 0..nj {
            for k in 0..nk {
                let v = x.get(i, j, k) - grand;
                ss_total += v * v;
                let res = v - mi[i] - mj[j] - mk[k] - ab(i, j) - ac(i, k) - bc(j, k);
                ss_abc += res * res;
            }
        }
    }
    if ss_total <= 0.0 {
        return Err(Error::Degenerate(
            "constant tensor has zero corrected sum of squares".into(),
        ));
    }

    let sq = |v: &f64| v * v;
    let ss_a = (nj * nk) as f64 * mi.iter().map(sq).sum::<f64>();
    let ss_b = (ni * nk) as f64 * mj.iter().map(sq).sum::<f64>();
    let ss_c = (ni * nj) as f64 * mk.iter().map(sq).sum::<f64>();
    let mut ss_ab = 0.0;
    for i in 0..ni {
        for j in 0..nj {
            ss_ab += ab(i, j).powi(2);
        }
    }
    let mut ss_ac = 0.0;
    for i in 0..ni {
        for k in 0..nk {
            ss_ac += ac(i, k).powi(2);
        }
    }
    let mut ss_bc = 0.0;
    for j in 0..nj {
        for k in 0..nk {
            ss_bc += bc(j, k).powi(2);
        }
    }
    let pct = |ss: f64| 100.0 * ss / ss_total;
    Ok(AnovaReport {
        main_effect_pct: [pct(ss_a), pct(ss_b), pct(ss_c)],
        two_way_pct: [pct(nk as f64 * ss_ab), pct(nj as f64 * ss_ac), pct(ni as f64 * ss_bc)],
        three_way_pct: pct(ss_abc),
    })
}
