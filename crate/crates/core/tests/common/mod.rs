//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use blockcnn::nn::{LayerSpec, Mode, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
pub const GRAD_FLOOR: f64 = 1e-6;

/// Norm-wise relative error `|a - n| / max(|a|, |n|, GRAD_FLOOR)`. The floor
/// covers gradients that vanish identically, such as a convolution bias
/// feeding batch norm.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(GRAD_FLOOR)
}

/// Outcome of a finite-difference check. `worst` is the largest per-tensor
/// relative error (input gradient included); `overall` treats every checked
/// entry as one vector.
#[derive(Debug)]
pub struct GradReport {
    pub worst: f64,
    pub worst_name: String,
    pub overall: f64,
    pub checked: usize,
    /// Entries whose step straddles a leaky kink, detected by the difference
    /// at `FD_STEP` disagreeing with the one at `FD_STEP / 10`. These carry
    /// no information about the analytic gradient and are left out.
    pub kinked: usize,
}

/// Central differences at `FD_STEP` and `FD_STEP / 10`.
fn central(mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let d = |f: &mut dyn FnMut(f64) -> f64, h: f64| (f(h) - f(-h)) / (2.0 * h);
    (d(&mut f, FD_STEP), d(&mut f, FD_STEP / 10.0))
}

/// Keeps the entries where both step sizes agree.
fn smooth_entries(analytic: Vec<f64>, fd: Vec<(f64, f64)>) -> (Vec<f64>, Vec<f64>, usize) {
    let rms = (fd.iter().map(|(a, _)| a * a).sum::<f64>() / fd.len().max(1) as f64).sqrt();
    let (mut a_out, mut n_out, mut kinked) = (Vec::new(), Vec::new(), 0);
    for (a, (big, small)) in analytic.into_iter().zip(fd) {
        if (big - small).abs() > 1e-4 * big.abs().max(rms).max(GRAD_FLOOR) {
            kinked += 1;
        } else {
            a_out.push(a);
            n_out.push(big);
        }
    }
    (a_out, n_out, kinked)
}

fn loss(net: &mut Network<f64>, x: &Tensor<f64>, probe: &Tensor<f64>) -> f64 {
    let y = net.forward(x, Mode::Train).expect("forward");
    net.clear_cache();
    y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
}

/// Central-difference check of `specs` in f64 with loss `sum(y * probe)`.
/// Batch norm is exercised in training mode; gamma and beta are randomised so
/// their gradients are not trivially structured. At most `per_tensor`
/// entries of each tensor are perturbed (all of them when it is `None`).
pub fn grad_check(
    specs: &[(String, LayerSpec)],
    input_shape: [usize; 4],
    seed: u64,
    per_tensor: Option<usize>,
) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f64>::new(specs).expect("valid specs");
    net.init_he(seed);
    for p in net.params_mut() {
        if p.name.ends_with("gamma") || p.name.ends_with("beta") || p.name.ends_with("bias") {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
    }
    let n: usize = input_shape.iter().product();
    let x = Tensor::from_vec(input_shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("input");
    let y = net.forward(&x, Mode::Train).expect("forward");
    net.clear_cache();
    let probe = Tensor::from_vec(
        y.shape(),
        (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .expect("probe");

    net.zero_grad();
    net.forward(&x, Mode::Train).expect("forward");
    let dx = net.backward(&probe).expect("backward");
    net.clear_cache();
    let analytic: Vec<(String, Vec<f64>)> = net
        .params_mut()
        .into_iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();

    let pick = |len: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        match per_tensor {
            Some(k) if k < len => (0..k).map(|_| rng.random_range(0..len)).collect(),
            _ => (0..len).collect(),
        }
    };

    let mut report = GradReport {
        worst: 0.0,
        worst_name: String::new(),
        overall: 0.0,
        checked: 0,
        kinked: 0,
    };
    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    let mut record = |name: &str, a: Vec<f64>, fd: Vec<(f64, f64)>, report: &mut GradReport| {
        report.checked += a.len();
        let (a, num, kinked) = smooth_entries(a, fd);
        report.kinked += kinked;
        let e = rel_error(&a, &num);
        if e >= report.worst {
            report.worst = e;
            report.worst_name = name.to_owned();
        }
        all_a.extend(a);
        all_n.extend(num);
    };

    // Input gradient.
    let idx = pick(n, &mut rng);
    let mut xp = x.clone();
    let mut num = Vec::with_capacity(idx.len());
    for &i in &idx {
        let orig = xp.data()[i];
        num.push(central(|h| {
            xp.data_mut()[i] = orig + h;
            let l = loss(&mut net, &xp, &probe);
            xp.data_mut()[i] = orig;
            l
        }));
    }
    record("input", idx.iter().map(|&i| dx.data()[i]).collect(), num, &mut report);

    // Parameter gradients.
    for (t, (name, grad)) in analytic.iter().enumerate() {
        let idx = pick(grad.len(), &mut rng);
        let mut num = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = net.params_mut()[t].value.data()[i];
            num.push(central(|h| {
                net.params_mut()[t].value.data_mut()[i] = orig + h;
                let l = loss(&mut net, &x, &probe);
                net.params_mut()[t].value.data_mut()[i] = orig;
                l
            }));
        }
        record(name, idx.iter().map(|&i| grad[i]).collect(), num, &mut report);
    }
    report.overall = rel_error(&all_a, &all_n);
    report
}
