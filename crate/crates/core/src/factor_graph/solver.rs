use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::factors::{evaluate_f64, linearize};
use super::sparse::{BlockMatrix, Symbolic};
use super::{Factor, FactorGraph, FactorId, Value, Variable, VariableId};

/// Pivot tolerance, relative to the undamped diagonal, used to detect
/// unconstrained directions before iterating.
const GAUGE_PIVOT_TOL: f64 = 1e-10;
const MAX_LAMBDA: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub lambda_init: f64,
    pub rel_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_iters: 100, lambda_init: 1e-4, rel_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    /// Cost before the first iteration followed by the cost after every
    /// accepted step.
    pub cost_trace: Vec<f64>,
}

impl SolveReport {
    pub fn is_monotone(&self) -> bool {
        self.cost_trace.windows(2).all(|w| w[1] <= w[0])
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("normal equations are singular at variable {0}; fix a variable or add a prior")]
    SingularNormalEquations(VariableId),
    #[error("residual of factor {0} is not finite")]
    NonFiniteResidual(FactorId),
}

fn robust(s: f64, huber: Option<f64>) -> (f64, f64) {
    match huber {
        Some(d) if s > d * d => {
            let r = s.sqrt();
            (2.0 * d * r - d * d, d / r)
        }
        _ => (s, 1.0),
    }
}

fn factor_cost(f: &Factor, vals: &BTreeMap<VariableId, Variable>) -> Option<f64> {
    let vs: Vec<&Value> = f.variables.iter().map(|id| &vals[id].value).collect();
    let r = evaluate_f64(&f.kind, &vs)?;
    let w = f.sqrt_information() * r;
    Some(0.5 * robust(w.norm_squared(), f.huber).0)
}

pub(crate) fn total_cost(g: &FactorGraph, vals: &BTreeMap<VariableId, Variable>) -> f64 {
    g.factors
        .iter()
        .filter(|f| f.enabled)
        .map(|f| factor_cost(f, vals).unwrap_or(f64::INFINITY))
        .sum()
}

struct Layout {
    ids: Vec<VariableId>,
    block_of: BTreeMap<VariableId, usize>,
    offsets: Vec<usize>,
    sizes: Vec<usize>,
    factors: Vec<FactorId>,
}

fn layout(g: &FactorGraph) -> Layout {
    let mut used = BTreeSet::new();
    let mut factors = Vec::new();
    for (i, f) in g.factors.iter().enumerate() {
        if !f.enabled {
            continue;
        }
        let mut any = false;
        for id in &f.variables {
            if !g.variables[id].fixed {
                used.insert(*id);
                any = true;
            }
        }
        if any {
            factors.push(i);
        }
    }
    let ids: Vec<VariableId> = used.into_iter().collect();
    let sizes: Vec<usize> = ids.iter().map(|id| g.variables[id].value.dim()).collect();
    let mut offsets = Vec::with_capacity(ids.len());
    let mut acc = 0;
    for s in &sizes {
        offsets.push(acc);
        acc += s;
    }
    let block_of = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    Layout { ids, block_of, offsets, sizes, factors }
}

fn assemble<'a>(
    g: &FactorGraph,
    vals: &BTreeMap<VariableId, Variable>,
    lay: &Layout,
    sym: &'a Symbolic,
) -> Result<(BlockMatrix<'a>, DVector<f64>), SolveError> {
    let mut h = BlockMatrix::zeros(sym);
    let mut grad = DVector::zeros(sym.dim());
    for &fi in &lay.factors {
        let f = &g.factors[fi];
        let vs: Vec<&Value> = f.variables.iter().map(|id| &vals[id].value).collect();
        let active: Vec<bool> = f.variables.iter().map(|id| !vals[id].fixed).collect();
        let (r, j) = linearize(&f.kind, &vs, &active).ok_or(SolveError::NonFiniteResidual(fi))?;
        let l = f.sqrt_information();
        let rw = l * r;
        let jw = l * j;
        let (_, weight) = robust(rw.norm_squared(), f.huber);
        let mut blocks = Vec::new();
        let mut col = 0;
        for (id, a) in f.variables.iter().zip(&active) {
            if *a {
                let d = vals[id].value.dim();
                blocks.push((lay.block_of[id], col, d));
                col += d;
            }
        }
        for &(bi, ci, di) in &blocks {
            let ji = jw.columns(ci, di);
            let gi = ji.tr_mul(&rw) * weight;
            let mut seg = grad.rows_mut(lay.offsets[bi], di);
            seg += gi;
            for &(bk, ck, dk) in &blocks {
                if bk < bi {
                    continue;
                }
                let jk = jw.columns(ck, dk);
                let m: DMatrix<f64> = ji.tr_mul(&jk) * weight;
                h.add_block(bi, bk, &m);
            }
        }
    }
    Ok((h, grad))
}

fn apply_step(
    vals: &BTreeMap<VariableId, Variable>,
    lay: &Layout,
    step: &DVector<f64>,
) -> BTreeMap<VariableId, Variable> {
    let mut out = vals.clone();
    for (b, id) in lay.ids.iter().enumerate() {
        let v = out.get_mut(id).expect("layout ids exist");
        let d = step.rows(lay.offsets[b], lay.sizes[b]);
        v.value = v.value.boxplus(d.as_slice());
    }
    out
}

pub(crate) fn optimize(g: &mut FactorGraph, opts: &SolveOptions) -> Result<SolveReport, SolveError> {
    let initial_cost = g.cost();
    let lay = layout(g);
    if lay.ids.is_empty() {
        return Ok(SolveReport {
            iterations: 0,
            initial_cost,
            final_cost: initial_cost,
            converged: true,
            cost_trace: vec![initial_cost],
        });
    }
    let mut edges = BTreeSet::new();
    for &fi in &lay.factors {
        let bs: Vec<usize> = g.factors[fi]
            .variables
            .iter()
            .filter_map(|id| lay.block_of.get(id).copied())
            .collect();
        for (i, &a) in bs.iter().enumerate() {
            for &b in &bs[i + 1..] {
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    let sym = Symbolic::analyze(&lay.sizes, &edges);

    let mut vals = g.variables.clone();
    let mut cost = initial_cost;
    let mut trace = vec![cost];
    let (mut h, mut grad) = assemble(g, &vals, &lay, &sym)?;
    if let Err(e) = h.clone().factorize(GAUGE_PIVOT_TOL) {
        return Err(SolveError::SingularNormalEquations(lay.ids[e.block]));
    }
    let mut lambda = opts.lambda_init;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        if cost <= f64::MIN_POSITIVE {
            converged = true;
            break;
        }
        iterations += 1;
        let diag = h.diagonal();
        let mut damped = h.clone();
        damped.add_diagonal(&(diag.map(|d| d.max(1e-12)) * lambda));
        let fact = match damped.factorize(0.0) {
            Ok(f) => f,
            Err(e) => {
                lambda *= 10.0;
                if lambda > MAX_LAMBDA {
                    return Err(SolveError::SingularNormalEquations(lay.ids[e.block]));
                }
                continue;
            }
        };
        let step = fact.solve(&(-&grad));
        let candidate = apply_step(&vals, &lay, &step);
        let new_cost = total_cost(g, &candidate);
        if new_cost.is_finite() && new_cost < cost {
            let rel = (cost - new_cost) / cost;
            vals = candidate;
            cost = new_cost;
            trace.push(cost);
            lambda = (lambda / 10.0).max(1e-15);
            if rel < opts.rel_tol {
                converged = true;
                break;
            }
            let (nh, ng) = assemble(g, &vals, &lay, &sym)?;
            h = nh;
            grad = ng;
        } else {
            let tiny_step = step.norm() < 1e-14 * (1.0 + step.len() as f64);
            if tiny_step || (new_cost.is_finite() && (new_cost - cost).abs() <= opts.rel_tol * cost) {
                converged = true;
                break;
            }
            lambda *= 10.0;
            if lambda > MAX_LAMBDA {
                converged = true;
                break;
            }
        }
    }
    for id in &lay.ids {
        let v = vals.remove(id).expect("layout ids exist");
        g.variables_map_mut().insert(*id, v);
    }
    Ok(SolveReport { iterations, initial_cost, final_cost: cost, converged, cost_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_is_continuous() {
        let (a, _) = robust(1.0 - 1e-12, Some(1.0));
        let (b, _) = robust(1.0 + 1e-12, Some(1.0));
        assert!((a - b).abs() < 1e-9);
        assert_eq!(robust(4.0, None), (4.0, 1.0));
    }
}
