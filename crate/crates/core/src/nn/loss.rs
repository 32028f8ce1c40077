//! Losses, the Gaussian KL regularizer and reparameterized sampling.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::real::Real;

/// Tolerance on `sum(pi) == 1` accepted by [`cross_entropy`].
const SIMPLEX_TOL: f64 = 1e-4;

/// Mean squared difference over all elements.
pub fn mse<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// `-sum_l y_l ln pi_l`, averaged over rows.
pub fn cross_entropy<T: Real>(g: &mut Graph<T>, probs: Var, onehot: Var) -> Result<Var> {
    if g.shape(probs) != g.shape(onehot) {
        return Err(Error::shape(
            "cross_entropy",
            format!("{:?} vs {:?}", g.shape(probs), g.shape(onehot)),
        ));
    }
    let d = *g.shape(probs).last().unwrap_or(&1);
    let rows = g.value(probs).len() / d.max(1);
    for row in g.value(probs).chunks(d) {
        let s: f64 = row.iter().map(|v| v.f64()).sum();
        if row.iter().any(|&v| v < T::zero()) || (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidArgument(format!(
                "cross_entropy expects normalized non-negative probabilities, row sums to {s}"
            )));
        }
    }
    // softmax can underflow to exactly 0, and 0 * ln 0 would poison the sum
    let safe = g.clamp(probs, T::min_positive_value(), T::one());
    let logp = g.log(safe)?;
    let prod = g.mul(logp, onehot)?;
    let s = g.sum(prod);
    Ok(g.scale(s, T::of(-1.0 / rows.max(1) as f64)))
}

/// Mean absolute error; the subgradient at a zero residual is 0.
pub fn mae<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

/// `KL(N(mu, diag(sigma^2)) || N(0, I))` summed over all elements:
/// `sum 0.5 * (mu^2 + sigma^2 - 1 - 2 ln sigma)`.
pub fn gaussian_kl_to_standard<T: Real>(g: &mut Graph<T>, mu: Var, sigma: Var) -> Result<Var> {
    if g.shape(mu) != g.shape(sigma) {
        return Err(Error::shape(
            "gaussian_kl_to_standard",
            "mu and sigma differ",
        ));
    }
    if g.value(sigma).iter().any(|&s| s <= T::zero()) {
        return Err(Error::InvalidArgument("sigma must be positive".into()));
    }
    let mu2 = g.square(mu);
    let s2 = g.square(sigma);
    let ls = g.log(sigma)?;
    let ls2 = g.scale(ls, T::of(2.0));
    let a = g.add(mu2, s2)?;
    let b = g.sub(a, ls2)?;
    let c = g.add_scalar(b, -T::one());
    let s = g.sum(c);
    Ok(g.scale(s, T::of(0.5)))
}

/// `z = mu + sigma * eps` with `eps` a constant: gradients reach `mu` and
/// `sigma` only.
pub fn reparameterize<T: Real>(g: &mut Graph<T>, mu: Var, sigma: Var, eps: Vec<T>) -> Result<Var> {
    if g.shape(mu) != g.shape(sigma) || eps.len() != g.value(mu).len() {
        return Err(Error::shape(
            "reparameterize",
            "mu, sigma and eps must agree",
        ));
    }
    if g.value(sigma).iter().any(|&s| s < T::zero()) {
        return Err(Error::InvalidArgument("sigma must be nonnegative".into()));
    }
    let shape = g.shape(mu).to_vec();
    let e = g.constant(eps, &shape)?;
    let se = g.mul(sigma, e)?;
    g.add(mu, se)
}

pub fn standard_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}
