//! Central finite-difference verification of backprop gradients.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::Serialize;

use crate::error::Result;
use crate::seed;

use super::graph::{Graph, Var};
use super::params::{ParamStore, ParamTensor};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub rel_tol: f64,
    /// Coordinates sampled per tensor; `usize::MAX` checks all of them.
    pub coords_per_tensor: usize,
    /// Gradients below this magnitude are compared in absolute terms.
    pub magnitude_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            coords_per_tensor: 16,
            magnitude_floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_path: Option<String>,
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates whose one-sided differences disagreed at the default
    /// step and were re-probed with a smaller one.
    pub kinks: usize,
    pub rel_tol: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient returned by `f` with central differences
/// of its value, over a random subset of coordinates of every tensor.
pub fn grad_check<F>(
    store: &ParamStore<f64>,
    f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>) -> Result<(f64, BTreeMap<String, Vec<f64>>)>,
{
    let (f0, analytic) = f(store)?;
    let mut rng = seed::rng(opts.seed, "grad_check");
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_path: None,
        worst_index: 0,
        checked: 0,
        kinks: 0,
        rel_tol: opts.rel_tol,
        passed: true,
    };
    for (path, grad) in &analytic {
        let n = grad.len();
        let coords: Vec<usize> = if opts.coords_per_tensor >= n {
            (0..n).collect()
        } else {
            index::sample(&mut rng, n, opts.coords_per_tensor).into_vec()
        };
        for i in coords {
            let mut step = opts.step;
            let mut err = f64::INFINITY;
            // a max or abs switching branch inside the stencil shows up as
            // mismatched one-sided slopes; shrink the step
            for attempt in 0..3 {
                let orig = probe.param(path)?.data[i];
                probe.param_mut(path)?.data[i] = orig + step;
                let (up, _) = f(&probe)?;
                probe.param_mut(path)?.data[i] = orig - step;
                let (down, _) = f(&probe)?;
                probe.param_mut(path)?.data[i] = orig;
                let numeric = (up - down) / (2.0 * step);
                err = relative_error(grad[i], numeric, opts.magnitude_floor);
                let right = (up - f0) / step;
                let left = (f0 - down) / step;
                // smooth functions keep the slope gap at O(step), far below a
                // real gradient error
                if err < opts.rel_tol || (right - left).abs() < (numeric - grad[i]).abs() {
                    break;
                }
                if attempt == 0 {
                    report.kinks += 1;
                }
                step *= 0.1;
            }
            report.checked += 1;
            if err > report.max_rel_err || !err.is_finite() {
                report.max_rel_err = err;
                report.worst_path = Some(path.clone());
                report.worst_index = i;
            }
        }
    }
    report.passed = report.max_rel_err < opts.rel_tol;
    Ok(report)
}

/// Grad check of a graph-building closure with respect to its inputs.
/// Inputs are named `x0`, `x1`, ... in the report.
pub fn grad_check_fn<B>(
    inputs: &[(Vec<f64>, Vec<usize>)],
    build: B,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::<f64>::empty(opts.seed);
    for (i, (data, shape)) in inputs.iter().enumerate() {
        store.insert_param(
            format!("x{i}"),
            ParamTensor {
                shape: shape.clone(),
                data: data.clone(),
            },
        );
    }
    let eval = |s: &ParamStore<f64>| -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
        let mut g = Graph::new();
        let mut vars = Vec::with_capacity(inputs.len());
        for i in 0..inputs.len() {
            let t = s.param(&format!("x{i}"))?;
            vars.push(g.leaf(t.data.clone(), &t.shape, true)?);
        }
        let out = build(&mut g, &vars)?;
        let grads = g.backward(out)?;
        let map = vars
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let gr = grads
                    .get(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; g.value(v).len()]);
                (format!("x{i}"), gr)
            })
            .collect();
        Ok((g.scalar(out), map))
    };
    grad_check(&store, eval, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_matches_exactly() {
        let inputs = vec![
            (vec![0.3, -0.2, 1.1, 0.4], vec![2, 2]),
            (vec![0.5, -1.0, 2.0, 0.1], vec![2, 2]),
            (vec![0.1, 0.2], vec![2]),
        ];
        let report = grad_check_fn(
            &inputs,
            |g, v| {
                let y = g.dense(v[0], v[1], v[2])?;
                Ok(g.sum(y))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.max_rel_err < 1e-9);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let store = {
            let mut s = ParamStore::<f64>::empty(0);
            s.insert_param(
                "w",
                ParamTensor {
                    shape: vec![1],
                    data: vec![2.0],
                },
            );
            s
        };
        let report = grad_check(
            &store,
            |s| {
                let w = s.param("w")?.data[0];
                Ok((w * w, BTreeMap::from([("w".to_string(), vec![3.0 * w])])))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed);
        assert_eq!(report.worst_path.as_deref(), Some("w"));
    }

    #[test]
    fn kink_inside_stencil_is_reprobed() {
        let store = {
            let mut s = ParamStore::<f64>::empty(0);
            s.insert_param(
                "w",
                ParamTensor {
                    shape: vec![1],
                    data: vec![4e-6],
                },
            );
            s
        };
        let abs = |s: &ParamStore<f64>| {
            let w = s.param("w")?.data[0];
            Ok((
                w.abs(),
                BTreeMap::from([("w".to_string(), vec![w.signum()])]),
            ))
        };
        let report = grad_check(&store, abs, GradCheckOptions::default()).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.kinks, 1);

        let wrong = |s: &ParamStore<f64>| {
            let w = s.param("w")?.data[0];
            Ok((
                w.abs(),
                BTreeMap::from([("w".to_string(), vec![-w.signum()])]),
            ))
        };
        assert!(
            !grad_check(&store, wrong, GradCheckOptions::default())
                .unwrap()
                .passed
        );
    }
}
