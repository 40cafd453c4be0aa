use declip_core::losses::LossValue;
use declip_core::network::Mlp;

pub type LossFn<'a> = dyn Fn(&Mlp) -> LossValue + 'a;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Max over all parameters of |fd - analytic| / max(|fd|, |analytic|, 1e-6),
/// skipping coordinates whose two one-sided differences disagree (a kink
/// lies within the step).
pub fn fd_relative_error(net: &Mlp, loss: &LossFn<'_>) -> f64 {
    let h = FD_STEP;
    let base = loss(net);
    let analytic = base.grads.to_flat();
    let flat = net.params().to_flat();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..flat.len() {
        let mut p = flat.clone();
        p[i] = flat[i] + h;
        probe.params_mut().set_flat(&p).unwrap();
        let up = loss(&probe).value;
        p[i] = flat[i] - h;
        probe.params_mut().set_flat(&p).unwrap();
        let down = loss(&probe).value;
        let fwd = (up - base.value) / h;
        let bwd = (base.value - down) / h;
        if (fwd - bwd).abs() > 1e-3 * (1.0 + fwd.abs()) {
            continue;
        }
        let fd = (up - down) / (2.0 * h);
        let scale = fd.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max((fd - analytic[i]).abs() / scale);
    }
    worst
}
