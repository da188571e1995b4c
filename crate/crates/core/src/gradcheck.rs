//! Central finite-difference probes for the analytic and backprop gradients.

use crate::param::{actor_grad_log_density, actor_log_density, Actor, Critic, Mlp, MlpCache};

/// Magnitude below which gradient components are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

fn central(f: impl Fn(&[f64]) -> f64, params: &[f64], i: usize, h: f64) -> f64 {
    let mut p = params.to_vec();
    p[i] = params[i] + h;
    let up = f(&p);
    p[i] = params[i] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

/// Worst relative error of `grad_eta J(t, x, mubar)` over all components.
pub fn critic_grad_error(critic: &dyn Critic, t: f64, x: &[f64], mu_bar: &[f64], lambda: f64, h: f64) -> f64 {
    let g = critic.grad(t, x, mu_bar, lambda);
    let probe = std::cell::RefCell::new(critic.box_clone());
    let base = critic.params().to_vec();
    let f = |p: &[f64]| {
        let mut pr = probe.borrow_mut();
        pr.params_mut().copy_from_slice(p);
        pr.value(t, x, mu_bar, lambda)
    };
    (0..base.len())
        .map(|i| relative_error(g[i], central(f, &base, i, h)))
        .fold(0.0, f64::max)
}

/// Worst relative error of `grad_theta log p(t, x, mubar, a)` over all components.
pub fn actor_score_error(
    actor: &dyn Actor,
    t: f64,
    x: &[f64],
    mu_bar: &[f64],
    a: &[f64],
    lambda: f64,
    h: f64,
) -> f64 {
    let g = actor_grad_log_density(actor, t, x, mu_bar, a, lambda).expect("positive temperature");
    let probe = std::cell::RefCell::new(actor.box_clone());
    let base = actor.params().to_vec();
    let f = |p: &[f64]| {
        let mut pr = probe.borrow_mut();
        pr.params_mut().copy_from_slice(p);
        actor_log_density(pr.as_ref(), t, x, mu_bar, a, lambda).expect("positive temperature")
    };
    (0..base.len())
        .map(|i| relative_error(g[i], central(f, &base, i, h)))
        .fold(0.0, f64::max)
}

/// Worst relative error of the backward pass for the loss `<grad_out, net(input)>`,
/// over all weights and inputs.
pub fn mlp_grad_error(net: &Mlp, params: &[f64], input: &[f64], grad_out: &[f64], h: f64) -> f64 {
    let loss = |p: &[f64], x: &[f64]| -> f64 {
        net.forward(p, x).iter().zip(grad_out).map(|(a, b)| a * b).sum()
    };
    let mut cache = MlpCache::default();
    net.forward_cached(params, input, &mut cache);
    let mut g = vec![0.0; params.len()];
    let gx = net.backward(params, &cache, grad_out, &mut g);
    let wp = (0..params.len()).map(|i| relative_error(g[i], central(|p| loss(p, input), params, i, h)));
    let wx = (0..input.len()).map(|i| relative_error(gx[i], central(|x| loss(params, x), input, i, h)));
    wp.chain(wx).fold(0.0, f64::max)
}
