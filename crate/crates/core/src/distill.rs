//! Contrastive losses for jointly training dense, lexical and multi-vector
//! scoring heads, with the integrated score acting as a self-distillation
//! teacher.
//!
//! Every loss is computed over one candidate list `[positive, negatives…]`
//! shared by all three methods. Softmaxes use a single temperature `τ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::FusionWeights;

pub const DEFAULT_TEMPERATURE: f64 = 0.05;

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(tau))
    }
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: a.len(), got: b.len() })
    }
}

/// `log Σ exp(x_j / τ)` with the max shifted out.
fn log_sum_exp(scores: &[f64], tau: f64) -> f64 {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s / tau));
    let sum: f64 = scores.iter().map(|&s| (s / tau - max).exp()).sum();
    max + sum.ln()
}

/// `softmax(scores / τ)`.
pub fn softmax(scores: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let lse = log_sum_exp(scores, tau);
    Ok(scores.iter().map(|&s| (s / tau - lse).exp()).collect())
}

/// Softmax cross-entropy of the `target` entry: `−log softmax(s/τ)[target]`.
pub fn info_nce(scores: &[f64], target: usize, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if scores.len() < 2 {
        return Err(Error::InvalidArgument("InfoNCE needs at least two candidates".into()));
    }
    if target >= scores.len() {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for {} candidates",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    Ok((log_sum_exp(scores, tau) - scores[target] / tau).max(0.0))
}

/// `−Σ_j softmax(teacher/τ)_j · log softmax(student/τ)_j`.
pub fn soft_cross_entropy(teacher: &[f64], student: &[f64], tau: f64) -> Result<f64> {
    check_len(teacher, student)?;
    let p = softmax(teacher, tau)?;
    Ok(soft_cross_entropy_probs(&p, student, tau))
}

fn soft_cross_entropy_probs(teacher_probs: &[f64], student: &[f64], tau: f64) -> f64 {
    let lse = log_sum_exp(student, tau);
    teacher_probs.iter().zip(student).map(|(p, s)| -p * (s / tau - lse)).sum()
}

/// Per-method scores over a shared candidate list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScores {
    pub dense: Vec<f64>,
    pub lex: Vec<f64>,
    pub mul: Vec<f64>,
    pub target: usize,
    pub tau: f64,
}

impl CandidateScores {
    pub fn new(
        dense: Vec<f64>,
        lex: Vec<f64>,
        mul: Vec<f64>,
        target: usize,
        tau: f64,
    ) -> Result<Self> {
        let cs = Self { dense, lex, mul, target, tau };
        cs.validate()?;
        Ok(cs)
    }

    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        check_len(&self.dense, &self.lex)?;
        check_len(&self.dense, &self.mul)?;
        if self.dense.len() < 2 {
            return Err(Error::InvalidArgument("need at least two candidates".into()));
        }
        if self.target >= self.dense.len() {
            return Err(Error::InvalidArgument(format!("target {} out of range", self.target)));
        }
        let all = self.dense.iter().chain(&self.lex).chain(&self.mul);
        if all.into_iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("candidate scores"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dense.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense.is_empty()
    }

    fn methods(&self) -> [&[f64]; 3] {
        [&self.dense, &self.lex, &self.mul]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w: FusionWeights,
    pub lambda: [f64; 3],
}

impl Default for LossWeights {
    /// Integration weights (1, 0.3, 1) and loss weights λ = (1, 0.1, 1).
    fn default() -> Self {
        Self { w: FusionWeights::MIRACL_ALL, lambda: [1.0, 0.1, 1.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_dense: f64,
    pub l_lex: f64,
    pub l_mul: f64,
    pub l_inter: f64,
    pub l: f64,
    pub lp_dense: f64,
    pub lp_lex: f64,
    pub lp_mul: f64,
    pub lp: f64,
    pub l_final: f64,
}

impl LossBreakdown {
    /// One `key=value` line, fixed field order, 9 decimal places.
    pub fn report_line(&self) -> String {
        format!(
            "L_dense={:.9} L_lex={:.9} L_mul={:.9} L_inter={:.9} L={:.9} \
             Lp_dense={:.9} Lp_lex={:.9} Lp_mul={:.9} Lp={:.9} L_final={:.9}",
            self.l_dense,
            self.l_lex,
            self.l_mul,
            self.l_inter,
            self.l,
            self.lp_dense,
            self.lp_lex,
            self.lp_mul,
            self.lp,
            self.l_final
        )
    }
}

/// Elementwise weighted sum of the three score vectors (the integrated score).
pub fn integrate(cs: &CandidateScores, w: &FusionWeights) -> Result<Vec<f64>> {
    check_len(&cs.dense, &cs.lex)?;
    check_len(&cs.dense, &cs.mul)?;
    Ok((0..cs.dense.len())
        .map(|j| w.dense * cs.dense[j] + w.lex * cs.lex[j] + w.mul * cs.mul[j])
        .collect())
}

pub fn compute_losses(cs: &CandidateScores, lw: &LossWeights) -> Result<LossBreakdown> {
    cs.validate()?;
    let teacher = integrate(cs, &lw.w)?;
    compute_losses_with_teacher(cs, lw, &teacher)
}

/// Like [`compute_losses`], but the distillation targets come from the
/// given integrated scores instead of being recomputed from `cs`. The
/// hard-label integration loss still uses `cs`.
pub fn compute_losses_with_teacher(
    cs: &CandidateScores,
    lw: &LossWeights,
    teacher: &[f64],
) -> Result<LossBreakdown> {
    cs.validate()?;
    check_len(&cs.dense, teacher)?;
    let (t, tau) = (cs.target, cs.tau);
    let hard = [
        info_nce(&cs.dense, t, tau)?,
        info_nce(&cs.lex, t, tau)?,
        info_nce(&cs.mul, t, tau)?,
        info_nce(&integrate(cs, &lw.w)?, t, tau)?,
    ];
    let p_teacher = softmax(teacher, tau)?;
    let soft = [
        soft_cross_entropy_probs(&p_teacher, &cs.dense, tau),
        soft_cross_entropy_probs(&p_teacher, &cs.lex, tau),
        soft_cross_entropy_probs(&p_teacher, &cs.mul, tau),
    ];
    Ok(combine_losses(hard, soft, lw.lambda))
}

/// Combines individual loss terms with the λ weights:
/// `L = (λ₁L_dense + λ₂L_lex + λ₃L_mul + L_inter)/4`,
/// `L′ = (λ₁L′_dense + λ₂L′_lex + λ₃L′_mul)/3`, `L_final = (L + L′)/2`.
pub fn combine_losses(hard: [f64; 4], soft: [f64; 3], lambda: [f64; 3]) -> LossBreakdown {
    let [l_dense, l_lex, l_mul, l_inter] = hard;
    let [lp_dense, lp_lex, lp_mul] = soft;
    let [ld, ll, lm] = lambda;
    let l = (ld * l_dense + ll * l_lex + lm * l_mul + l_inter) / 4.0;
    let lp = (ld * lp_dense + ll * lp_lex + lm * lp_mul) / 3.0;
    LossBreakdown {
        l_dense,
        l_lex,
        l_mul,
        l_inter,
        l,
        lp_dense,
        lp_lex,
        lp_mul,
        lp,
        l_final: (l + lp) / 2.0,
    }
}

/// Gradient of `info_nce` with respect to each score: `(softmax_j − 1{j=t}) / τ`.
pub fn info_nce_gradient(scores: &[f64], target: usize, tau: f64) -> Result<Vec<f64>> {
    info_nce(scores, target, tau)?;
    let mut g = softmax(scores, tau)?;
    g[target] -= 1.0;
    g.iter_mut().for_each(|x| *x /= tau);
    Ok(g)
}

/// Gradients of `L_final` with respect to each raw score vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradients {
    pub dense: Vec<f64>,
    pub lex: Vec<f64>,
    pub mul: Vec<f64>,
}

/// Which objective a training step minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// `L_final = (L + L′)/2`: hard labels plus self-distillation.
    SelfDistill,
    /// `L` alone: per-method InfoNCE plus the integrated-score InfoNCE.
    Ensemble,
    /// `(λ₁L_dense + λ₂L_lex + λ₃L_mul)/4`: each method trained on its own
    /// labels with no interaction between methods.
    Independent,
}

/// Analytic gradients of `L_final`. The teacher (integrated score inside
/// the distillation terms) is treated as a constant.
pub fn loss_gradients(cs: &CandidateScores, lw: &LossWeights) -> Result<ScoreGradients> {
    objective_gradients(cs, lw, Objective::SelfDistill)
}

pub fn objective_gradients(
    cs: &CandidateScores,
    lw: &LossWeights,
    objective: Objective,
) -> Result<ScoreGradients> {
    cs.validate()?;
    let (t, tau) = (cs.target, cs.tau);
    let lambda = lw.lambda;
    let w = lw.w.as_array();
    let s_inter = integrate(cs, &lw.w)?;
    let g_inter = info_nce_gradient(&s_inter, t, tau)?;
    let p_teacher = softmax(&s_inter, tau)?;

    let (hard_scale, inter_on, kd_scale) = match objective {
        Objective::SelfDistill => (0.5 / 4.0, true, 0.5 / 3.0),
        Objective::Ensemble => (1.0 / 4.0, true, 0.0),
        Objective::Independent => (1.0 / 4.0, false, 0.0),
    };

    let mut out: Vec<Vec<f64>> = Vec::with_capacity(3);
    for (m, scores) in cs.methods().into_iter().enumerate() {
        let g_own = info_nce_gradient(scores, t, tau)?;
        let q = softmax(scores, tau)?;
        let g: Vec<f64> = (0..scores.len())
            .map(|j| {
                let mut hard = lambda[m] * g_own[j];
                if inter_on {
                    hard += w[m] * g_inter[j];
                }
                let kd = lambda[m] * (q[j] - p_teacher[j]) / tau;
                hard_scale * hard + kd_scale * kd
            })
            .collect();
        out.push(g);
    }
    let mul = out.pop().unwrap_or_default();
    let lex = out.pop().unwrap_or_default();
    let dense = out.pop().unwrap_or_default();
    Ok(ScoreGradients { dense, lex, mul })
}

/// Value of the chosen objective, with the teacher taken from `teacher`.
pub fn objective_value(
    cs: &CandidateScores,
    lw: &LossWeights,
    teacher: &[f64],
    objective: Objective,
) -> Result<f64> {
    let b = compute_losses_with_teacher(cs, lw, teacher)?;
    let [ld, ll, lm] = lw.lambda;
    Ok(match objective {
        Objective::SelfDistill => b.l_final,
        Objective::Ensemble => b.l,
        Objective::Independent => (ld * b.l_dense + ll * b.l_lex + lm * b.l_mul) / 4.0,
    })
}

/// Largest relative error between analytic and central-difference
/// gradients of `L_final`, holding the teacher fixed at its current value.
pub fn gradient_check(cs: &CandidateScores, lw: &LossWeights, h: f64, floor: f64) -> Result<f64> {
    let g = loss_gradients(cs, lw)?;
    let teacher = integrate(cs, &lw.w)?;
    let mut worst: f64 = 0.0;
    for m in 0..3 {
        let analytic = match m {
            0 => &g.dense,
            1 => &g.lex,
            _ => &g.mul,
        };
        for (j, &a) in analytic.iter().enumerate() {
            let eval = |delta: f64| -> Result<f64> {
                let mut c = cs.clone();
                match m {
                    0 => c.dense[j] += delta,
                    1 => c.lex[j] += delta,
                    _ => c.mul[j] += delta,
                }
                Ok(compute_losses_with_teacher(&c, lw, &teacher)?.l_final)
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Absolute-scale floor in the relative error of [`gradient_check`].
pub const GRADCHECK_FLOOR: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn info_nce_closed_forms() {
        assert!(
            (info_nce(&[1.0, 0.0], 0, 1.0).unwrap() - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12
        );
        assert!((info_nce(&[1.0, 0.0], 0, 1.0).unwrap() - 0.313262).abs() < 1e-6);
        assert!((info_nce(&[2.0, 1.0, 0.0], 0, 1.0).unwrap() - 0.407606).abs() < 1e-6);
        assert!((info_nce(&[0.3, 0.3, 0.3], 2, 1.0).unwrap() - 3.0f64.ln()).abs() < 1e-12);
        assert_eq!(info_nce(&[1.0, 0.0], 0, 0.0), Err(Error::InvalidTemperature(0.0)));
        assert!(info_nce(&[1.0], 0, 1.0).is_err());
        assert!(info_nce(&[1.0, 2.0], 2, 1.0).is_err());
        // large scores at small temperature stay finite
        assert!(info_nce(&[1000.0, -1000.0], 1, 0.01).unwrap().is_finite());
    }

    #[test]
    fn integrate_examples() {
        let cs =
            CandidateScores::new(vec![0.5, 0.0], vec![0.2, 0.0], vec![0.7, 0.0], 0, 1.0).unwrap();
        let s = integrate(&cs, &FusionWeights::MIRACL_ALL).unwrap();
        assert!((s[0] - 1.26).abs() < 1e-12);
        let dense_only = FusionWeights::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(integrate(&cs, &dense_only).unwrap(), cs.dense);
        let zeros = CandidateScores::new(vec![0.0; 3], vec![0.0; 3], vec![0.0; 3], 0, 1.0).unwrap();
        assert_eq!(integrate(&zeros, &FusionWeights::MIRACL_ALL).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn soft_cross_entropy_examples() {
        let v = [2.0, 1.0, 0.0];
        let p = softmax(&v, 1.0).unwrap();
        let entropy: f64 = -p.iter().map(|x| x * x.ln()).sum::<f64>();
        let got = soft_cross_entropy(&v, &v, 1.0).unwrap();
        assert!((got - entropy).abs() < 1e-12);
        assert!((got - 0.8323956).abs() < 1e-7);

        let student = [0.3, 1.2, -0.4];
        let one_hot = soft_cross_entropy(&[1e9, 0.0, 0.0], &student, 1.0).unwrap();
        assert!((one_hot - info_nce(&student, 0, 1.0).unwrap()).abs() < 1e-6);
        assert!(soft_cross_entropy(&[1.0], &[1.0, 2.0], 1.0).is_err());
        assert!(soft_cross_entropy(&[1.0, 2.0], &[1.0, 2.0], -1.0).is_err());
    }

    #[test]
    fn combination_arithmetic() {
        let lambda = LossWeights::default().lambda;
        let b = combine_losses([1.0; 4], [0.8324; 3], lambda);
        assert!((b.l - 0.775).abs() < 1e-12);
        assert!((b.lp - 0.582680).abs() < 1e-12);
        assert!((b.l_final - 0.678840).abs() < 1e-12);
    }

    #[test]
    fn teacher_equals_student_reduces_to_entropy() {
        let v = vec![2.0, 1.0, 0.0];
        let cs = CandidateScores::new(v.clone(), vec![0.0, 5.0, 1.0], vec![-1.0, 0.0, 3.0], 0, 1.0)
            .unwrap();
        let lw =
            LossWeights { w: FusionWeights::new(1.0, 0.0, 0.0).unwrap(), ..Default::default() };
        let b = compute_losses(&cs, &lw).unwrap();
        assert!((b.lp_dense - soft_cross_entropy(&v, &v, 1.0).unwrap()).abs() < 1e-12);
        assert!((b.l_inter - b.l_dense).abs() < 1e-12);
        assert!((b.l_final - (b.l + b.lp) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_simplex_and_sign() {
        let g = info_nce_gradient(&[0.2, 0.9, -0.3, 0.1], 2, 0.5).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        assert!(g[2] < 0.0);
        assert!(g.iter().enumerate().all(|(j, x)| j == 2 || *x > 0.0));
    }

    #[test]
    fn report_line_is_stable() {
        let cs =
            CandidateScores::new(vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0], 0, 1.0).unwrap();
        let line = compute_losses(&cs, &LossWeights::default()).unwrap().report_line();
        assert!(line.starts_with("L_dense=0.313261688 L_lex=0.693147181"));
        assert_eq!(line.split(' ').count(), 10);
    }
}
