//! The conditional adversarial objective
//!
//! `L(G, D) = E[log D(s, x)] + E[log(1 − D(s, G(s)))]`
//!
//! evaluated on patch score maps, summed over discriminator scales, together
//! with closed-form derivatives of every term with respect to the scores.
//! Scores are clamped to `(ε, 1 − ε)` before any logarithm; the derivative
//! of a clamped score is zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to scores before taking logarithms.
pub const SCORE_EPS: f64 = 1e-6;

/// Which generator loss drives the G-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLoss {
    /// Minimize `−E[log D(s, G(s))]`.
    #[default]
    NonSaturating,
    /// Minimize `E[log(1 − D(s, G(s)))]`, the literal minimax form.
    Saturating,
}

impl GeneratorLoss {
    pub fn label(self) -> &'static str {
        match self {
            GeneratorLoss::NonSaturating => "non_saturating",
            GeneratorLoss::Saturating => "saturating",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleTerms {
    pub d_real_term: f64,
    pub d_fake_term: f64,
    pub g_term: f64,
}

/// Loss terms summed over scales, plus the per-scale breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub d_real_term: f64,
    pub d_fake_term: f64,
    pub g_term: f64,
    pub generator_loss: GeneratorLoss,
    pub per_scale: Vec<ScaleTerms>,
}

impl LossReport {
    /// Value of the objective the discriminators maximize.
    pub fn objective(&self) -> f64 {
        self.d_real_term + self.d_fake_term
    }
}

fn clamp(s: f64) -> f64 {
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

fn inside(s: f64) -> bool {
    s > SCORE_EPS && s < 1.0 - SCORE_EPS
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

/// `mean log(clamp(s))`
pub fn real_term(scores: &[f64]) -> f64 {
    mean(scores.iter().map(|&s| clamp(s).ln()), scores.len())
}

/// `mean log(1 − clamp(s))`
pub fn fake_term(scores: &[f64]) -> f64 {
    mean(scores.iter().map(|&s| (1.0 - clamp(s)).ln()), scores.len())
}

/// Generator term under the chosen loss form.
pub fn generator_term(scores: &[f64], form: GeneratorLoss) -> f64 {
    match form {
        GeneratorLoss::NonSaturating => -real_term(scores),
        GeneratorLoss::Saturating => fake_term(scores),
    }
}

/// `∂/∂s mean log(clamp(s))`
pub fn real_term_grad(scores: &[f64]) -> Vec<f64> {
    let n = scores.len() as f64;
    scores
        .iter()
        .map(|&s| if inside(s) { 1.0 / (n * s) } else { 0.0 })
        .collect()
}

/// `∂/∂s mean log(1 − clamp(s))`
pub fn fake_term_grad(scores: &[f64]) -> Vec<f64> {
    let n = scores.len() as f64;
    scores
        .iter()
        .map(|&s| if inside(s) { -1.0 / (n * (1.0 - s)) } else { 0.0 })
        .collect()
}

/// Derivative of [`generator_term`] with respect to the fake scores.
pub fn generator_term_grad(scores: &[f64], form: GeneratorLoss) -> Vec<f64> {
    match form {
        GeneratorLoss::NonSaturating => real_term_grad(scores).into_iter().map(|g| -g).collect(),
        GeneratorLoss::Saturating => fake_term_grad(scores),
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `mean log σ(z)`: [`real_term`] evaluated from pre-sigmoid logits, without clamping.
pub fn real_term_logits(logits: &[f64]) -> f64 {
    mean(logits.iter().map(|&z| -softplus(-z)), logits.len())
}

/// `mean log(1 − σ(z))`
pub fn fake_term_logits(logits: &[f64]) -> f64 {
    mean(logits.iter().map(|&z| -softplus(z)), logits.len())
}

pub fn generator_term_logits(logits: &[f64], form: GeneratorLoss) -> f64 {
    match form {
        GeneratorLoss::NonSaturating => -real_term_logits(logits),
        GeneratorLoss::Saturating => fake_term_logits(logits),
    }
}

/// `∂/∂z mean log σ(z) = (1 − σ(z)) / n`; nonzero however confident the score.
pub fn real_term_logit_grad(logits: &[f64]) -> Vec<f64> {
    let n = logits.len() as f64;
    logits.iter().map(|&z| sigmoid(-z) / n).collect()
}

/// `∂/∂z mean log(1 − σ(z)) = −σ(z) / n`
pub fn fake_term_logit_grad(logits: &[f64]) -> Vec<f64> {
    let n = logits.len() as f64;
    logits.iter().map(|&z| -sigmoid(z) / n).collect()
}

pub fn generator_term_logit_grad(logits: &[f64], form: GeneratorLoss) -> Vec<f64> {
    match form {
        GeneratorLoss::NonSaturating => real_term_logit_grad(logits).into_iter().map(|g| -g).collect(),
        GeneratorLoss::Saturating => fake_term_logit_grad(logits),
    }
}

/// [`cgan_objective`] on per-scale logit maps.
pub fn cgan_objective_logits(real: &[Vec<f64>], fake: &[Vec<f64>], form: GeneratorLoss) -> Result<LossReport> {
    let squash = |maps: &[Vec<f64>]| -> Vec<Vec<f64>> {
        maps.iter().map(|m| m.iter().map(|&z| sigmoid(z)).collect()).collect()
    };
    let mut report = cgan_objective(&squash(real), &squash(fake), form)?;
    for (k, (r, f)) in real.iter().zip(fake).enumerate() {
        report.per_scale[k] = ScaleTerms {
            d_real_term: real_term_logits(r),
            d_fake_term: fake_term_logits(f),
            g_term: generator_term_logits(f, form),
        };
    }
    report.d_real_term = report.per_scale.iter().map(|t| t.d_real_term).sum();
    report.d_fake_term = report.per_scale.iter().map(|t| t.d_fake_term).sum();
    report.g_term = report.per_scale.iter().map(|t| t.g_term).sum();
    Ok(report)
}

/// Evaluates every term on congruent per-scale score maps.
pub fn cgan_objective(real: &[Vec<f64>], fake: &[Vec<f64>], form: GeneratorLoss) -> Result<LossReport> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Parameter("score lists must not be empty".into()));
    }
    if real.len() != fake.len() {
        return Err(Error::Parameter(format!(
            "{} real score maps but {} fake",
            real.len(),
            fake.len()
        )));
    }
    let mut per_scale = Vec::with_capacity(real.len());
    for (r, f) in real.iter().zip(fake) {
        if r.is_empty() || f.is_empty() {
            return Err(Error::Parameter("score maps must not be empty".into()));
        }
        per_scale.push(ScaleTerms {
            d_real_term: real_term(r),
            d_fake_term: fake_term(f),
            g_term: generator_term(f, form),
        });
    }
    Ok(LossReport {
        d_real_term: per_scale.iter().map(|t| t.d_real_term).sum(),
        d_fake_term: per_scale.iter().map(|t| t.d_fake_term).sum(),
        g_term: per_scale.iter().map(|t| t.g_term).sum(),
        generator_loss: form,
        per_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_half_scores() {
        let r = cgan_objective(&[vec![0.5; 4]], &[vec![0.5; 4]], GeneratorLoss::NonSaturating).unwrap();
        assert_eq!(r.d_real_term, 0.5f64.ln());
        assert_eq!(r.d_fake_term, 0.5f64.ln());
        assert_eq!(r.g_term, -(0.5f64.ln()));
    }

    #[test]
    fn empty_lists_are_rejected() {
        assert!(matches!(
            cgan_objective(&[], &[], GeneratorLoss::NonSaturating),
            Err(Error::Parameter(_))
        ));
        assert!(cgan_objective(&[vec![]], &[vec![0.5]], GeneratorLoss::Saturating).is_err());
    }

    #[test]
    fn extreme_scores_stay_finite() {
        let r = cgan_objective(&[vec![0.0, 1.0]], &[vec![1.0, 0.0]], GeneratorLoss::Saturating).unwrap();
        assert!(r.d_real_term.is_finite() && r.d_fake_term.is_finite() && r.g_term.is_finite());
        assert_eq!(real_term_grad(&[0.0, 1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn logit_forms_agree_with_score_forms() {
        let z = [-3.0, -0.4, 0.0, 0.7, 2.5];
        let s: Vec<f64> = z.iter().map(|&v| 1.0 / (1.0 + f64::exp(-v))).collect();
        assert!((real_term_logits(&z) - real_term(&s)).abs() < 1e-12);
        assert!((fake_term_logits(&z) - fake_term(&s)).abs() < 1e-12);
        // Chain rule through the sigmoid: dz = ds * s(1 - s).
        for (k, (gz, gs)) in real_term_logit_grad(&z).iter().zip(real_term_grad(&s)).enumerate() {
            assert!((gz - gs * s[k] * (1.0 - s[k])).abs() < 1e-12);
        }
        for form in [GeneratorLoss::NonSaturating, GeneratorLoss::Saturating] {
            let h = 1e-6;
            let g = generator_term_logit_grad(&z, form);
            for i in 0..z.len() {
                let (mut p, mut m) = (z, z);
                p[i] += h;
                m[i] -= h;
                let fd = (generator_term_logits(&p, form) - generator_term_logits(&m, form)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7, "{form:?} {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn saturated_logits_keep_gradient() {
        let g = fake_term_logit_grad(&[40.0, 800.0]);
        assert!(g.iter().all(|&v| (v + 0.5).abs() < 1e-12));
        assert!(fake_term_logits(&[800.0]).is_finite());
        let r = cgan_objective_logits(&[vec![0.0; 2]], &[vec![0.0; 2]], GeneratorLoss::NonSaturating).unwrap();
        assert!((r.d_real_term - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn labels() {
        assert_eq!(GeneratorLoss::default().label(), "non_saturating");
    }
}
