//! Central finite-difference check of the tape gradients.

use super::{Graph, ParamStore, TensorError, Var};

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub eps: f64,
    /// Only parameters whose name starts with one of these prefixes; empty
    /// means all.
    pub prefixes: Vec<String>,
    /// Checks at most this many evenly strided coordinates per parameter.
    pub max_coords: Option<usize>,
    pub inject_fault: Option<f64>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            prefixes: Vec::new(),
            max_coords: None,
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub coords: usize,
    pub max_abs_error: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        !self.groups.is_empty() && self.groups.iter().all(|g| g.rel_error < tol)
    }
}

fn eval<F>(store: &ParamStore, f: &F) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, TensorError>,
{
    let mut g = Graph::new(store);
    let l = f(&mut g)?;
    g.value(l).item()
}

/// Compares tape gradients of the scalar built by `f` with central
/// differences. The error of a group is
/// `max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-12)`.
pub fn gradcheck<F>(
    store: &mut ParamStore,
    f: F,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport, TensorError>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, TensorError>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new(store);
        if let Some(d) = opts.inject_fault {
            g.inject_matmul_fault(d);
        }
        let l = f(&mut g)?;
        let grads = g.backward(l)?;
        store
            .ids()
            .map(|id| {
                grads
                    .param(id)
                    .map_or_else(|| vec![0.0; store.get(id).numel()], <[f64]>::to_vec)
            })
            .collect()
    };
    let ids: Vec<_> = store.ids().collect();
    let mut groups = Vec::new();
    for id in ids {
        let name = store.name(id).to_string();
        if !opts.prefixes.is_empty() && !opts.prefixes.iter().any(|p| name.starts_with(p.as_str()))
        {
            continue;
        }
        let n = store.get(id).numel();
        let stride = opts.max_coords.map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        let (mut max_diff, mut max_a, mut max_n, mut coords) = (0.0f64, 0.0f64, 0.0f64, 0);
        for j in (0..n).step_by(stride) {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + opts.eps;
            let up = eval(store, &f);
            store.get_mut(id).data_mut()[j] = orig - opts.eps;
            let down = eval(store, &f);
            store.get_mut(id).data_mut()[j] = orig;
            let num = (up? - down?) / (2.0 * opts.eps);
            let a = analytic[id.index()][j];
            max_diff = max_diff.max((a - num).abs());
            max_a = max_a.max(a.abs());
            max_n = max_n.max(num.abs());
            coords += 1;
        }
        groups.push(GroupReport {
            name,
            coords,
            max_abs_error: max_diff,
            rel_error: max_diff / max_a.max(max_n).max(1e-12),
        });
    }
    Ok(GradcheckReport { groups })
}
