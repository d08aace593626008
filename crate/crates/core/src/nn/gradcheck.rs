//! Central finite-difference verification of analytic gradients.

use super::loss::{cross_entropy, mse};
use super::{Network, Tensor};
use crate::error::{Error, Result};

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub enum LossKind {
    /// Mean squared error to a fixed target of the output's shape.
    Mse(Tensor<f64>),
    CrossEntropy(Vec<usize>),
    /// `sum(output * weights)`: exercises every output with distinct weights.
    Projection(Tensor<f64>),
}

fn loss_and_grad(out: &Tensor<f64>, kind: &LossKind) -> Result<(f64, Tensor<f64>)> {
    let (v, g) = match kind {
        LossKind::Mse(target) => {
            let o = mse(out, target)?;
            (o.value, o.grad)
        }
        LossKind::CrossEntropy(labels) => {
            let o = cross_entropy(out, labels)?;
            (o.value, o.grad)
        }
        LossKind::Projection(w) => {
            if w.shape() != out.shape() {
                return Err(Error::Shape(format!("projection {:?} vs output {:?}", w.shape(), out.shape())));
            }
            let v = out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
            (v, w.clone())
        }
    };
    if !v.is_finite() {
        return Err(Error::NonFinite("grad_check loss"));
    }
    Ok((v, g))
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradReport {
    /// Worst relative error over every checked element.
    pub max_rel_err: f64,
    /// Elements that fail `tol` while their forward and backward one-sided
    /// slopes differ by more than the analytic/central gap: the probe stepped
    /// across a kink (ReLU at zero, a max-pool tie). On a smooth function the
    /// one-sided slopes agree to O(h * curvature) and a wrong gradient shows
    /// up as a large gap instead.
    pub kinks: usize,
}

impl GradReport {
    fn merge(self, other: Self) -> Self {
        Self { max_rel_err: self.max_rel_err.max(other.max_rel_err), kinks: self.kinks + other.kinks }
    }
}

struct Probe {
    base: f64,
    tol: f64,
    report: GradReport,
}

impl Probe {
    fn new(base: f64, tol: f64) -> Self {
        Self { base, tol, report: GradReport::default() }
    }

    fn add(&mut self, analytic: f64, plus: f64, minus: f64) {
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let e = rel_err(analytic, numeric);
        self.report.max_rel_err = self.report.max_rel_err.max(e);
        if e >= self.tol {
            let forward = (plus - self.base) / FD_STEP;
            let backward = (self.base - minus) / FD_STEP;
            if (forward - backward).abs() > (analytic - numeric).abs() {
                self.report.kinks += 1;
            }
        }
    }
}

/// Max relative error between analytic and central-difference gradients over
/// every parameter element. The network is left with its original values.
pub fn grad_check(net: &mut Network<f64>, x: &Tensor<f64>, kind: &LossKind) -> Result<f64> {
    Ok(param_report(net, x, kind, f64::INFINITY)?.max_rel_err)
}

/// Same check on the gradient with respect to the input.
pub fn input_grad_check(net: &mut Network<f64>, x: &Tensor<f64>, kind: &LossKind) -> Result<f64> {
    Ok(input_report(net, x, kind, f64::INFINITY)?.max_rel_err)
}

/// Parameter and input checks together, counting kink crossings among the
/// elements whose relative error reaches `tol`.
pub fn grad_report(net: &mut Network<f64>, x: &Tensor<f64>, kind: &LossKind, tol: f64) -> Result<GradReport> {
    Ok(param_report(net, x, kind, tol)?.merge(input_report(net, x, kind, tol)?))
}

fn param_report(net: &mut Network<f64>, x: &Tensor<f64>, kind: &LossKind, tol: f64) -> Result<GradReport> {
    net.zero_grad();
    let out = net.forward(x)?;
    let (base, g) = loss_and_grad(&out, kind)?;
    net.backward(&g)?;
    let analytic = net.param_grads();
    let mut probe = Probe::new(base, tol);
    for (pi, grads) in analytic.iter().enumerate() {
        for (ei, &a) in grads.iter().enumerate() {
            let original = net.params()[pi].data()[ei];
            net.params_mut()[pi].data_mut()[ei] = original + FD_STEP;
            let plus = loss_and_grad(&net.forward(x)?, kind)?.0;
            net.params_mut()[pi].data_mut()[ei] = original - FD_STEP;
            let minus = loss_and_grad(&net.forward(x)?, kind)?.0;
            net.params_mut()[pi].data_mut()[ei] = original;
            probe.add(a, plus, minus);
        }
    }
    Ok(probe.report)
}

fn input_report(net: &mut Network<f64>, x: &Tensor<f64>, kind: &LossKind, tol: f64) -> Result<GradReport> {
    let out = net.forward(x)?;
    let (base, g) = loss_and_grad(&out, kind)?;
    let analytic = net.backward(&g)?;
    let mut shifted = x.clone();
    let mut probe = Probe::new(base, tol);
    for i in 0..x.numel() {
        let original = x.data()[i];
        shifted.data_mut()[i] = original + FD_STEP;
        let plus = loss_and_grad(&net.forward(&shifted)?, kind)?.0;
        shifted.data_mut()[i] = original - FD_STEP;
        let minus = loss_and_grad(&net.forward(&shifted)?, kind)?.0;
        shifted.data_mut()[i] = original;
        probe.add(analytic.data()[i], plus, minus);
    }
    Ok(probe.report)
}
