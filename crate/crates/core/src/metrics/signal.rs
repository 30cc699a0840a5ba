use super::twofold::{self, Twofold};
use super::MetricsError;
use crate::dsp::AudioClip;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-6;
/// Reported when the error energy is negligible against the signal.
pub const DB_CAP: f64 = 100.0;
/// Error-to-signal energy ratio below which the cap applies.
const CAP_RATIO: f64 = 1e-20;

/// Independent per-class probabilities, clamped into the open unit interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    pub values: Vec<f64>,
}

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricsError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite("probability"));
        }
        Ok(Self {
            values: values
                .into_iter()
                .map(|v| v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Summed binary KL divergence `D(P || Q)` in nats.
pub fn kld_binary(p: &ProbVector, q: &ProbVector) -> Result<f64, MetricsError> {
    if p.len() != q.len() {
        return Err(MetricsError::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let total: f64 = p
        .values
        .iter()
        .zip(&q.values)
        .map(|(&a, &b)| {
            let a = a.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let b = b.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if a == b {
                0.0
            } else {
                a * (a / b).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln()
            }
        })
        .sum();
    Ok(total.max(0.0))
}

fn check_pair(est: &AudioClip, target: &AudioClip) -> Result<(), MetricsError> {
    if est.len() != target.len() {
        return Err(MetricsError::LengthMismatch {
            a: est.len(),
            b: target.len(),
        });
    }
    Ok(())
}

/// `10 log10(signal / error)` from double-double energies, capped and
/// floored at `DB_CAP` in magnitude.
fn ratio_db(signal: Twofold, error: Twofold) -> f64 {
    let (s, e) = (signal.to_f64(), error.to_f64());
    if e <= CAP_RATIO * s {
        DB_CAP
    } else if s == 0.0 {
        -DB_CAP
    } else {
        (10.0 * signal.div(error).log10()).clamp(-DB_CAP, DB_CAP)
    }
}

/// Scale-invariant SDR of `est` against `target`, in dB.
///
/// Computed as `<s,t>^2 / (|s|^2 |t|^2 - <s,t>^2)`, which equals the energy
/// ratio of the projection of `s` onto `t` to the residual. Every term scales
/// by `a^2` when `s` does, and all sums are double-double, so the result is
/// within about one ulp of exact and scaling `est` changes it by at most that.
pub fn si_sdr(est: &AudioClip, target: &AudioClip) -> Result<f64, MetricsError> {
    check_pair(est, target)?;
    let (s, t) = (&est.samples, &target.samples);
    let tt = twofold::dot(t, t);
    if tt.to_f64() == 0.0 {
        return Err(MetricsError::ZeroTarget);
    }
    let st = twofold::dot(s, t);
    let projected = st.mul(st);
    let residual = twofold::dot(s, s).mul(tt).sub(projected);
    Ok(ratio_db(projected, residual))
}

/// Plain SDR `10 log10(|t|^2 / |est - t|^2)`, in dB.
pub fn sdr(est: &AudioClip, target: &AudioClip) -> Result<f64, MetricsError> {
    check_pair(est, target)?;
    let tt = twofold::dot(&target.samples, &target.samples);
    if tt.to_f64() == 0.0 {
        return Err(MetricsError::ZeroTarget);
    }
    Ok(ratio_db(tt, twofold::sq_dist(&est.samples, &target.samples)))
}
