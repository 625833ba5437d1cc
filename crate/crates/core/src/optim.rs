//! Geometry-aware parameter updates: PEM and AIM Riemannian SGD for SPD
//! parameters, a Stiefel rule for BiMap weights, Euclidean steps elsewhere,
//! and a Riemannian AMSGrad wrapper over all of them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::classifier::MlrHead;
use crate::error::{Error, Result};
use crate::geometry::{Frame, MetricSpec};
use crate::linalg::{symmetrize, MatFn, Spectral, SpdMatrix, SymMatrix};
use crate::network::{BiMapWeight, Gradients, HeadGradients, HeadParams, NetworkParams};

/// `φ_{*,P}⁻¹ ∘ φ_{*,P}^{−*}`: the Riemannian gradient of a function whose
/// Euclidean gradient at `P` is `grad`.
pub fn pem_project(metric: MetricSpec, p: &SpdMatrix, grad: &SymMatrix) -> Result<SymMatrix> {
    if p.dim() != grad.dim() {
        return Err(Error::dims(p.dim(), grad.dim()));
    }
    let frame = Frame::at(metric, p)?;
    let chart_grad = frame.pull_adjoint(grad.as_matrix())?;
    Ok(SymMatrix::new_unchecked(frame.pull(&chart_grad)?))
}

/// `Exp_P(−γ Π_P(∇f))`, evaluated as the chart step
/// `φ(P') = φ(P) − γ·∂f/∂φ(P)`.
pub fn rsgd_step_pem(metric: MetricSpec, p: &SpdMatrix, grad: &SymMatrix, lr: f64) -> Result<SpdMatrix> {
    check_lr(lr)?;
    if p.dim() != grad.dim() {
        return Err(Error::dims(p.dim(), grad.dim()));
    }
    let frame = Frame::at(metric, p)?;
    let chart_grad = frame.pull_adjoint(grad.as_matrix())?;
    Ok(Frame::from_chart_matrix(metric, &(frame.chart() - chart_grad * lr))?.1)
}

/// Affine-invariant square roots of a base point.
struct AimBase {
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
}

impl AimBase {
    fn new(p: &SpdMatrix) -> Result<Self> {
        let spectral = Spectral::new(p.as_sym())?;
        Ok(AimBase {
            sqrt: spectral.apply(MatFn::Pow(0.5))?,
            inv_sqrt: spectral.apply(MatFn::Pow(-0.5))?,
        })
    }

    /// `Exp_P(V) = P^{½} mexp(P^{-½} V P^{-½}) P^{½}`.
    fn exp(&self, v: &DMatrix<f64>) -> Result<SpdMatrix> {
        let inner = symmetrize(&(&self.inv_sqrt * v * &self.inv_sqrt));
        let e = Spectral::from_matrix(&inner)?.apply(MatFn::Exp)?;
        Ok(SpdMatrix::new_unchecked(symmetrize(&(&self.sqrt * e * &self.sqrt))))
    }

    /// `Γ_{P→Q}(V) = E V Eᵀ` with `E = P^{½}(P^{-½} Q P^{-½})^{½} P^{-½}`.
    fn transport(&self, q: &SpdMatrix, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let inner = symmetrize(&(&self.inv_sqrt * q.as_matrix() * &self.inv_sqrt));
        let root = Spectral::from_matrix(&inner)?.apply(MatFn::Pow(0.5))?;
        let e = &self.sqrt * root * &self.inv_sqrt;
        Ok(symmetrize(&(&e * v * e.transpose())))
    }
}

/// `P^{½} mexp(−γ P^{-½} G P^{-½}) P^{½}` with `G = P sym(∇f) P`.
pub fn rsgd_step_aim(p: &SpdMatrix, grad: &SymMatrix, lr: f64) -> Result<SpdMatrix> {
    check_lr(lr)?;
    if p.dim() != grad.dim() {
        return Err(Error::dims(p.dim(), grad.dim()));
    }
    let riemannian = p.as_matrix() * grad.as_matrix() * p.as_matrix();
    AimBase::new(p)?.exp(&(riemannian * -lr))
}

/// Stiefel tangent projection in the column convention `X = Wᵀ`:
/// `G − X sym(XᵀG)`.
pub fn stiefel_project(x: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    g - x * symmetrize(&(x.transpose() * g))
}

/// Orthonormal factor of `y` (columns), positive-diagonal QR with a polar
/// fallback when the QR is numerically rank deficient.
pub fn stiefel_retract(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = y.ncols();
    let qr = y.clone().qr();
    let r = qr.r();
    let scale = y.norm().max(1.0);
    let rank_ok = (0..k).all(|j| r[(j, j)].abs() > 1e-10 * scale);
    if rank_ok {
        let mut q = qr.q();
        for j in 0..k {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        return Ok(q);
    }
    let svd = y.clone().svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => Ok(u * v_t),
        _ => Err(Error::NoConvergence {
            sweeps: 0,
            residual: f64::NAN,
        }),
    }
}

/// One Riemannian gradient step on the Stiefel manifold of row
/// semi-orthogonal weights.
pub fn stiefel_step(w: &BiMapWeight, grad: &DMatrix<f64>, lr: f64) -> Result<BiMapWeight> {
    check_lr(lr)?;
    check_shape(w.as_matrix(), grad)?;
    let x = w.as_matrix().transpose();
    let xi = stiefel_project(&x, &grad.transpose());
    Ok(BiMapWeight::new_unchecked(stiefel_retract(&(x - xi * lr))?.transpose()))
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    Ok(())
}

fn check_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dims(
            format!("{}x{}", a.nrows(), a.ncols()),
            format!("{}x{}", b.nrows(), b.ncols()),
        ));
    }
    Ok(())
}

/// How SPD shift parameters are updated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpdRule {
    /// Affine-invariant Riemannian SGD.
    Aim,
    /// Riemannian SGD under the head's own pullback metric.
    Pem,
}

/// Update rule for one parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateRule {
    RsgdPem(MetricSpec),
    RsgdAim,
    Euclidean,
    Stiefel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmsGradConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AmsGradConfig {
    fn default() -> Self {
        AmsGradConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub spd_rule: SpdRule,
    /// `None` selects plain (Riemannian) SGD.
    pub amsgrad: Option<AmsGradConfig>,
    /// Applied to normals and LogEig weights only.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-2,
            spd_rule: SpdRule::Aim,
            amsgrad: Some(AmsGradConfig::default()),
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if let Some(a) = self.amsgrad {
            if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
                return Err(Error::Config(format!("invalid AMSGrad settings {a:?}")));
            }
        }
        Ok(())
    }
}

/// A parameter value as seen by the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamValue {
    Spd(SpdMatrix),
    Stiefel(BiMapWeight),
    Euclid(DMatrix<f64>),
}

/// First moment and running-max second moment of one parameter, stored in
/// chart coordinates (PEM), the tangent space (AIM), the column-convention
/// Stiefel tangent, or raw coordinates (Euclidean).
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: DMatrix<f64>,
    pub second: DMatrix<f64>,
    pub second_max: DMatrix<f64>,
}

impl Moments {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Moments {
            first: DMatrix::zeros(rows, cols),
            second: DMatrix::zeros(rows, cols),
            second_max: DMatrix::zeros(rows, cols),
        }
    }

    /// Updates both moments with `g` and returns `m / (√v̂ + ε)`.
    fn direction(&mut self, g: &DMatrix<f64>, cfg: &AmsGradConfig) -> Result<DMatrix<f64>> {
        check_shape(&self.first, g)?;
        self.first = &self.first * cfg.beta1 + g * (1.0 - cfg.beta1);
        self.second = &self.second * cfg.beta2 + g.component_mul(g) * (1.0 - cfg.beta2);
        self.second_max = self.second_max.zip_map(&self.second, f64::max);
        Ok(self.first.zip_map(&self.second_max, |m, v| m / (v.sqrt() + cfg.eps)))
    }
}

/// One step of `rule`, with AMSGrad when `amsgrad` is set. The first moment
/// is carried to the new base point by the rule's own transport.
pub fn amsgrad_step(
    state: &mut Moments,
    rule: UpdateRule,
    param: &ParamValue,
    grad: &DMatrix<f64>,
    lr: f64,
    amsgrad: Option<&AmsGradConfig>,
) -> Result<ParamValue> {
    match (rule, param) {
        (UpdateRule::RsgdPem(metric), ParamValue::Spd(p)) => {
            // chart coordinates are flat, so transport leaves the moment unchanged
            let frame = Frame::at(metric, p)?;
            let g = frame.pull_adjoint(&symmetrize(grad))?;
            let d = match amsgrad {
                Some(cfg) => state.direction(&g, cfg)?,
                None => g,
            };
            Ok(ParamValue::Spd(Frame::from_chart_matrix(metric, &(frame.chart() - d * lr))?.1))
        }
        (UpdateRule::RsgdAim, ParamValue::Spd(p)) => {
            let base = AimBase::new(p)?;
            let g = symmetrize(&(p.as_matrix() * symmetrize(grad) * p.as_matrix()));
            let d = match amsgrad {
                Some(cfg) => {
                    // Normalize in whitened coordinates P^{-½}·P^{-½}, where an
                    // entry-sized step is a bounded move whatever the scale of P.
                    check_shape(&state.first, &g)?;
                    let whiten = |m: &DMatrix<f64>| symmetrize(&(&base.inv_sqrt * m * &base.inv_sqrt));
                    let gw = whiten(&g);
                    state.first = &state.first * cfg.beta1 + &g * (1.0 - cfg.beta1);
                    state.second = &state.second * cfg.beta2 + gw.component_mul(&gw) * (1.0 - cfg.beta2);
                    state.second_max = state.second_max.zip_map(&state.second, f64::max);
                    let dw = whiten(&state.first).zip_map(&state.second_max, |m, v| m / (v.sqrt() + cfg.eps));
                    &base.sqrt * dw * &base.sqrt
                }
                None => g,
            };
            let next = base.exp(&(d * -lr))?;
            if amsgrad.is_some() {
                state.first = base.transport(&next, &state.first)?;
            }
            Ok(ParamValue::Spd(next))
        }
        (UpdateRule::Stiefel, ParamValue::Stiefel(w)) => {
            check_shape(w.as_matrix(), grad)?;
            let x = w.as_matrix().transpose();
            let g = stiefel_project(&x, &grad.transpose());
            let d = match amsgrad {
                Some(cfg) => stiefel_project(&x, &state.direction(&g, cfg)?),
                None => g,
            };
            let next = stiefel_retract(&(&x - d * lr))?;
            if amsgrad.is_some() {
                state.first = stiefel_project(&next, &state.first);
            }
            Ok(ParamValue::Stiefel(BiMapWeight::new_unchecked(next.transpose())))
        }
        (UpdateRule::Euclidean, ParamValue::Euclid(x)) => {
            check_shape(x, grad)?;
            let d = match amsgrad {
                Some(cfg) => state.direction(grad, cfg)?,
                None => grad.clone(),
            };
            Ok(ParamValue::Euclid(x - d * lr))
        }
        (rule, _) => Err(Error::Contract(format!("update rule {rule:?} does not match the parameter kind"))),
    }
}

/// Optimizer state for a whole network.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    bimaps: Vec<Moments>,
    shifts: Vec<Moments>,
    normals: Vec<Moments>,
    weights: Vec<Moments>,
    biases: Moments,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &NetworkParams) -> Result<Self> {
        config.validate()?;
        let bimaps = params
            .bimaps()
            .iter()
            .map(|w| Moments::zeros(w.in_dim(), w.out_dim()))
            .collect();
        let (shifts, normals, weights, biases) = match params.head() {
            HeadParams::Mlr(h) => {
                let n = h.dim();
                (
                    vec![Moments::zeros(n, n); h.classes()],
                    vec![Moments::zeros(n, n); h.classes()],
                    Vec::new(),
                    Moments::zeros(0, 0),
                )
            }
            HeadParams::LogEig(h) => (
                Vec::new(),
                Vec::new(),
                vec![Moments::zeros(1, h.weights[0].len()); h.classes()],
                Moments::zeros(1, h.classes()),
            ),
        };
        Ok(Optimizer {
            config,
            bimaps,
            shifts,
            normals,
            weights,
            biases,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    fn shift_rule(&self, head: &MlrHead) -> UpdateRule {
        match self.config.spd_rule {
            SpdRule::Aim => UpdateRule::RsgdAim,
            SpdRule::Pem => UpdateRule::RsgdPem(head.metric),
        }
    }

    /// Applies one update to every parameter. A zero learning rate leaves
    /// the parameters untouched.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &Gradients) -> Result<()> {
        let lr = self.config.learning_rate;
        if lr == 0.0 {
            return Ok(());
        }
        let ams = self.config.amsgrad;
        let ams = ams.as_ref();
        let decay = self.config.weight_decay;
        for (i, (w, state)) in params.bimaps_mut().iter_mut().zip(&mut self.bimaps).enumerate() {
            let next = amsgrad_step(state, UpdateRule::Stiefel, &ParamValue::Stiefel(w.clone()), &grads.bimaps[i], lr, ams)
                .map_err(|e| e.at_layer(i))?;
            let ParamValue::Stiefel(next) = next else { unreachable!("Stiefel rule returns a weight") };
            *w = next;
        }
        let rule = match params.head() {
            HeadParams::Mlr(h) => Some(self.shift_rule(h)),
            HeadParams::LogEig(_) => None,
        };
        match (params.head_mut(), &grads.head) {
            (HeadParams::Mlr(h), HeadGradients::Mlr { shifts, normals }) => {
                let rule = rule.expect("MLR head has a shift rule");
                for k in 0..h.classes() {
                    let next = amsgrad_step(&mut self.shifts[k], rule, &ParamValue::Spd(h.shifts[k].clone()), &shifts[k], lr, ams)?;
                    let ParamValue::Spd(next) = next else { unreachable!("SPD rule returns an SPD matrix") };
                    h.shifts[k] = next;
                    let a = h.normals[k].as_matrix();
                    let g = &normals[k] + a * decay;
                    let next = amsgrad_step(&mut self.normals[k], UpdateRule::Euclidean, &ParamValue::Euclid(a.clone()), &g, lr, ams)?;
                    let ParamValue::Euclid(next) = next else { unreachable!("Euclidean rule returns a matrix") };
                    h.normals[k] = SymMatrix::new_unchecked(symmetrize(&next));
                }
            }
            (HeadParams::LogEig(h), HeadGradients::LogEig { weights, biases }) => {
                for k in 0..h.classes() {
                    let a = DMatrix::from_row_slice(1, h.weights[k].len(), &h.weights[k]);
                    let g = DMatrix::from_row_slice(1, weights[k].len(), &weights[k]) + &a * decay;
                    let next = amsgrad_step(&mut self.weights[k], UpdateRule::Euclidean, &ParamValue::Euclid(a), &g, lr, ams)?;
                    let ParamValue::Euclid(next) = next else { unreachable!("Euclidean rule returns a matrix") };
                    h.weights[k] = next.as_slice().to_vec();
                }
                let b = DMatrix::from_row_slice(1, h.biases.len(), &h.biases);
                let g = DMatrix::from_row_slice(1, biases.len(), biases);
                let next = amsgrad_step(&mut self.biases, UpdateRule::Euclidean, &ParamValue::Euclid(b), &g, lr, ams)?;
                let ParamValue::Euclid(next) = next else { unreachable!("Euclidean rule returns a matrix") };
                h.biases = next.as_slice().to_vec();
            }
            _ => return Err(Error::Contract("gradient head kind does not match parameters".into())),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geodesic_dist, metric_at, phi, THETA_CANDIDATES};
    use crate::linalg::{mexp, mlog};
    use crate::random::{random_spd, random_sym, seeded};

    fn metrics(n: usize) -> Vec<MetricSpec> {
        let mut out: Vec<MetricSpec> = MetricSpec::beta_candidates(n)
            .iter()
            .map(|&b| MetricSpec::lem(1.0, b))
            .collect();
        out.extend(THETA_CANDIDATES.iter().map(|&t| MetricSpec::lcm(t)));
        out
    }

    /// Euclidean gradient of `S ↦ d(S, target)²`, from the chart.
    fn dist_sq_grad(metric: MetricSpec, s: &SpdMatrix, target: &SpdMatrix) -> SymMatrix {
        let frame = Frame::at(metric, s).unwrap();
        let diff = frame.chart() - phi(metric, target).unwrap().matrix();
        SymMatrix::new_unchecked(frame.push_adjoint(&(diff * 2.0)).unwrap())
    }

    #[test]
    fn projection_examples() {
        let mut rng = seeded(61);
        let g = random_sym(&mut rng, 3, 1.0);
        let r = pem_project(MetricSpec::STANDARD_LEM, &SpdMatrix::identity(3), &g).unwrap();
        assert!((r.as_matrix() - g.as_matrix()).amax() < 1e-14);

        // commuting case: Π = diag(a²∇₁₁, b²∇₂₂)
        let p = SpdMatrix::from_diagonal(&[2.0, 5.0]).unwrap();
        let g = SymMatrix::from_diagonal(&[0.7, -1.3]);
        let r = pem_project(MetricSpec::STANDARD_LEM, &p, &g).unwrap();
        assert!((r[(0, 0)] - 4.0 * 0.7).abs() < 1e-13 && (r[(1, 1)] + 25.0 * 1.3).abs() < 1e-12);
        assert!(r[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn projection_defining_property() {
        let mut rng = seeded(62);
        for metric in metrics(3) {
            for _ in 0..12 {
                let p = random_spd(&mut rng, 3, 20.0);
                let g = random_sym(&mut rng, 3, 1.0);
                let v = random_sym(&mut rng, 3, 1.0);
                let r = pem_project(metric, &p, &g).unwrap();
                let lhs = metric_at(metric, &p, &r, &v).unwrap();
                let rhs = g.inner(&v);
                assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1e-2), "{metric}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn pem_step_examples() {
        let mut rng = seeded(63);
        let p = random_spd(&mut rng, 3, 10.0);
        for metric in metrics(3) {
            let same = rsgd_step_pem(metric, &p, &SymMatrix::zeros(3), 0.1).unwrap();
            assert!((same.as_matrix() - p.as_matrix()).amax() < 1e-12);
            // descent on d(P, P*)²
            let target = random_spd(&mut rng, 3, 10.0);
            let g = dist_sq_grad(metric, &p, &target);
            let next = rsgd_step_pem(metric, &p, &g, 1e-2).unwrap();
            assert!(geodesic_dist(metric, &next, &target).unwrap() < geodesic_dist(metric, &p, &target).unwrap());
        }
    }

    #[test]
    fn pem_step_is_exponential_of_projection() {
        let mut rng = seeded(64);
        for metric in metrics(3) {
            let p = random_spd(&mut rng, 3, 10.0);
            let g = random_sym(&mut rng, 3, 1.0);
            // near β = −1/n the trace direction is almost free, so keep γ small
            let lr = 1e-3;
            let direct = rsgd_step_pem(metric, &p, &g, lr).unwrap();
            let r = pem_project(metric, &p, &g).unwrap();
            let via_exp = crate::geometry::rie_exp(metric, &p, &r.scale(-lr)).unwrap();
            let gap = (direct.as_matrix() - via_exp.as_matrix()).norm() / direct.norm();
            assert!(gap < 1e-10, "{metric}: {gap:e}");
        }
    }

    #[test]
    fn chart_step_identity_standard_lem() {
        let mut rng = seeded(65);
        let metric = MetricSpec::STANDARD_LEM;
        for _ in 0..20 {
            let p = random_spd(&mut rng, 4, 10.0);
            let g = random_sym(&mut rng, 4, 1.0);
            let lr = 0.03;
            let next = rsgd_step_pem(metric, &p, &g, lr).unwrap();
            // ∂L/∂φ(P) from the chain rule through P = mexp(φ(P))
            let log_p = mlog(&p).unwrap();
            let chart_grad = crate::linalg::mat_fn_diff(&log_p, MatFn::Exp, &g, false).unwrap();
            let expected = log_p.as_matrix() - chart_grad.as_matrix() * lr;
            assert!((mlog(&next).unwrap().as_matrix() - expected).amax() < 1e-9);
        }
    }

    #[test]
    fn aim_step_examples() {
        let mut rng = seeded(66);
        let p = random_spd(&mut rng, 3, 10.0);
        let same = rsgd_step_aim(&p, &SymMatrix::zeros(3), 0.1).unwrap();
        assert!((same.as_matrix() - p.as_matrix()).amax() < 1e-12);
        let g = random_sym(&mut rng, 3, 1.0);
        let at_identity = rsgd_step_aim(&SpdMatrix::identity(3), &g, 0.1).unwrap();
        let expected = mexp(&g.scale(-0.1)).unwrap();
        assert!((at_identity.as_matrix() - expected.as_matrix()).amax() < 1e-13);

        // f(P) = ‖mlog P‖², ∇f = 2 mlog_{*,P}(mlog P)
        let log_p = mlog(&p).unwrap();
        let grad = crate::linalg::mat_fn_diff(p.as_sym(), MatFn::Log, &log_p.scale(2.0), false).unwrap();
        let next = rsgd_step_aim(&p, &grad, 1e-2).unwrap();
        assert!(mlog(&next).unwrap().norm() < log_p.norm());
        assert!(rsgd_step_aim(&p, &grad, 0.0).is_err());
    }

    #[test]
    fn aim_and_pem_updates_compared() {
        // at I and whenever ∇f commutes with P both rules move along the
        // same geodesic by the same amount
        let mut rng = seeded(67);
        let q = crate::random::random_orthogonal(&mut rng, 3);
        let commuting = |values: &[f64]| {
            let d = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(values));
            symmetrize(&(&q * d * q.transpose()))
        };
        let cases = [
            (SpdMatrix::identity(3), random_sym(&mut rng, 3, 1.0)),
            (
                SpdMatrix::new(commuting(&[3.0, 1.0, 0.4])).unwrap(),
                SymMatrix::new(commuting(&[0.5, -1.0, 0.8])).unwrap(),
            ),
        ];
        for (p, g) in cases {
            for lr in [1e-1, 1e-2] {
                let a = rsgd_step_aim(&p, &g, lr).unwrap();
                let b = rsgd_step_pem(MetricSpec::STANDARD_LEM, &p, &g, lr).unwrap();
                assert!((a.as_matrix() - b.as_matrix()).norm() < 1e-12 * a.norm());
            }
        }
        // at a generic base point the Riemannian gradients differ, so the
        // gap shrinks only linearly in γ
        let p = random_spd(&mut rng, 3, 5.0);
        let g = random_sym(&mut rng, 3, 1.0);
        let gap = |lr: f64| {
            let a = rsgd_step_aim(&p, &g, lr).unwrap();
            let b = rsgd_step_pem(MetricSpec::STANDARD_LEM, &p, &g, lr).unwrap();
            (a.as_matrix() - b.as_matrix()).norm()
        };
        let ratio = gap(1e-3) / gap(5e-4);
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn stiefel_examples() {
        let mut rng = seeded(68);
        let w = BiMapWeight::random(&mut rng, 3, 6);
        let same = stiefel_step(&w, &DMatrix::zeros(3, 6), 0.1).unwrap();
        assert!((same.as_matrix() - w.as_matrix()).amax() < 1e-12);
        let mut w = w;
        for _ in 0..200 {
            let g = crate::random::gaussian_matrix(&mut rng, 3, 6, 1.0);
            w = stiefel_step(&w, &g, 0.1).unwrap();
            let gap = (w.as_matrix() * w.as_matrix().transpose() - DMatrix::identity(3, 3)).amax();
            assert!(gap < 1e-8);
        }
        let x = w.as_matrix().transpose();
        let g = crate::random::gaussian_matrix(&mut rng, 6, 3, 1.0);
        let once = stiefel_project(&x, &g);
        assert!((stiefel_project(&x, &once) - &once).amax() < 1e-10);
        // rank-deficient input falls back to the polar factor
        let mut y = x.clone();
        y.set_column(2, &(x.column(0) * 1.0));
        let q = stiefel_retract(&y).unwrap();
        assert!((q.transpose() * &q - DMatrix::identity(3, 3)).amax() < 1e-8);
    }

    #[test]
    fn euclidean_amsgrad_single_step() {
        let cfg = AmsGradConfig {
            beta1: 0.0,
            beta2: 0.0,
            eps: 1e-8,
        };
        let x = DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]);
        let g = DMatrix::from_row_slice(1, 3, &[0.4, -3.0, 0.0]);
        let mut state = Moments::zeros(1, 3);
        let out = amsgrad_step(&mut state, UpdateRule::Euclidean, &ParamValue::Euclid(x.clone()), &g, 0.1, Some(&cfg)).unwrap();
        let ParamValue::Euclid(out) = out else { panic!() };
        // m/(√v + ε) with m = g, v = g²
        let expected = DMatrix::from_row_slice(
            1,
            3,
            &[1.0 - 0.1 * 0.4 / (0.4 + 1e-8), -2.0 + 0.1 * 3.0 / (3.0 + 1e-8), 0.5],
        );
        assert!((out - expected).amax() < 1e-15);
        assert!(state.second_max.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn zero_gradients_keep_parameters() {
        let mut rng = seeded(69);
        let p = random_spd(&mut rng, 3, 10.0);
        let cfg = AmsGradConfig::default();
        for rule in [UpdateRule::RsgdAim, UpdateRule::RsgdPem(MetricSpec::lcm(0.5))] {
            let mut state = Moments::zeros(3, 3);
            let mut value = ParamValue::Spd(p.clone());
            for _ in 0..10 {
                value = amsgrad_step(&mut state, rule, &value, &DMatrix::zeros(3, 3), 0.1, Some(&cfg)).unwrap();
            }
            let ParamValue::Spd(q) = value else { panic!() };
            assert!((q.as_matrix() - p.as_matrix()).amax() < 1e-11);
        }
        let mut state = Moments::zeros(3, 3);
        assert!(amsgrad_step(&mut state, UpdateRule::Stiefel, &ParamValue::Spd(p), &DMatrix::zeros(3, 3), 0.1, None).is_err());
    }

    #[test]
    fn amsgrad_converges_on_distance_objective() {
        let mut rng = seeded(70);
        let metric = MetricSpec::STANDARD_LEM;
        let target = random_spd(&mut rng, 3, 10.0);
        let cfg = AmsGradConfig::default();
        let mut state = Moments::zeros(3, 3);
        let mut value = ParamValue::Spd(SpdMatrix::identity(3));
        let mut final_dist = f64::INFINITY;
        for _ in 0..500 {
            let ParamValue::Spd(p) = &value else { unreachable!() };
            let g = dist_sq_grad(metric, p, &target);
            value = amsgrad_step(&mut state, UpdateRule::RsgdPem(metric), &value, g.as_matrix(), 0.05, Some(&cfg)).unwrap();
            let ParamValue::Spd(p) = &value else { unreachable!() };
            final_dist = geodesic_dist(metric, p, &target).unwrap();
        }
        assert!(final_dist * final_dist < 1e-4, "{final_dist}");
    }

    #[test]
    fn aim_amsgrad_keeps_spd_and_descends() {
        let mut rng = seeded(71);
        let metric = MetricSpec::STANDARD_LEM;
        let target = random_spd(&mut rng, 3, 10.0);
        let cfg = AmsGradConfig::default();
        let mut state = Moments::zeros(3, 3);
        let mut value = ParamValue::Spd(SpdMatrix::identity(3));
        let start = geodesic_dist(metric, &SpdMatrix::identity(3), &target).unwrap();
        for _ in 0..300 {
            let ParamValue::Spd(p) = &value else { unreachable!() };
            let g = dist_sq_grad(metric, p, &target);
            value = amsgrad_step(&mut state, UpdateRule::RsgdAim, &value, g.as_matrix(), 0.02, Some(&cfg)).unwrap();
        }
        let ParamValue::Spd(p) = &value else { unreachable!() };
        assert!(SpdMatrix::new(p.as_matrix().clone()).is_ok());
        assert!(geodesic_dist(metric, p, &target).unwrap() < 0.1 * start);
    }
}
