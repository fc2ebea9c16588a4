//! Gaussian-approximation message passing on the factor graph of `H̄`.
//!
//! Observation node `r` connects to every symbol whose column is supported on
//! row `r`. The interference seen by edge `(r, n)` is modelled as Gaussian
//! with the mean and variance of `Σ_{n'≠n} H̄(r,n') x_{n'}` under the incoming
//! symbol messages. Symbol-to-observation messages are products of the
//! likelihoods from all other observations, damped against the previous
//! message. Flooding schedule: all observation nodes, then all symbols.

use std::time::Instant;

use super::{argmax, check_inputs, softmax_in_place, DetectionResult, DetectorConfig};
use crate::channel::EffectiveChannel;
use crate::constellation::Constellation;
use crate::{Result, C64};

struct Graph {
    /// `(row, h)` per edge, grouped by column.
    edges: Vec<(usize, C64)>,
    /// Edge range of each column.
    col_start: Vec<usize>,
    /// Edge ids incident to each row.
    row_edges: Vec<Vec<usize>>,
}

impl Graph {
    fn new(eff: &EffectiveChannel) -> Self {
        let n = eff.n();
        let mut edges = Vec::with_capacity(eff.nnz());
        let mut col_start = Vec::with_capacity(n + 1);
        let mut row_edges = vec![Vec::new(); n];
        for col in 0..n {
            col_start.push(edges.len());
            for &(r, h) in eff.column(col) {
                row_edges[r].push(edges.len());
                edges.push((r, h));
            }
        }
        col_start.push(edges.len());
        Self {
            edges,
            col_start,
            row_edges,
        }
    }

    fn column_edges(&self, col: usize) -> std::ops::Range<usize> {
        self.col_start[col]..self.col_start[col + 1]
    }
}

pub fn mpa_detect(
    y: &[C64],
    eff: &EffectiveChannel,
    n0: f64,
    c: &Constellation,
    cfg: &DetectorConfig,
) -> Result<DetectionResult> {
    check_inputs(y, eff, n0)?;
    cfg.validate()?;
    let started = Instant::now();
    let n = eff.n();
    let k = c.size();
    let points = c.points();
    let graph = Graph::new(eff);
    let num_edges = graph.edges.len();
    let damping = cfg.damping;

    // symbol -> observation messages, K entries per edge
    let mut msgs = vec![1.0 / k as f64; num_edges * k];
    let mut marginals = vec![vec![1.0 / k as f64; k]; n];
    let mut edge_mean = vec![C64::new(0.0, 0.0); num_edges];
    let mut edge_var = vec![0.0; num_edges];
    let mut interf_mean = vec![C64::new(0.0, 0.0); num_edges];
    let mut interf_var = vec![0.0; num_edges];
    let mut loglik = vec![0.0; num_edges * k];
    let mut buf = vec![0.0; k];
    let mut trace = Vec::with_capacity(cfg.max_iter);
    let mut ops: u64 = 0;

    for _ in 0..cfg.max_iter {
        for e in 0..num_edges {
            let m = &msgs[e * k..(e + 1) * k];
            let mean: C64 = m.iter().zip(points).map(|(p, a)| a * *p).sum();
            let second: f64 = m.iter().zip(points).map(|(p, a)| p * a.norm_sqr()).sum();
            edge_mean[e] = mean;
            edge_var[e] = (second - mean.norm_sqr()).max(0.0);
        }

        // observation nodes
        for row in &graph.row_edges {
            for &e in row {
                let mut mu = C64::new(0.0, 0.0);
                let mut var = n0;
                for &o in row {
                    if o != e {
                        let h = graph.edges[o].1;
                        mu += h * edge_mean[o];
                        var += h.norm_sqr() * edge_var[o];
                    }
                }
                ops += 2 * (row.len() as u64 - 1);
                interf_mean[e] = mu;
                interf_var[e] = var.max(super::SIGMA_SQ_FLOOR);
            }
        }

        // symbol nodes
        let mut res: f64 = 0.0;
        for col in 0..n {
            let range = graph.column_edges(col);
            let degree = range.len() as u64;
            for e in range.clone() {
                let (r, h) = graph.edges[e];
                let base = y[r] - interf_mean[e];
                for (kk, a) in points.iter().enumerate() {
                    loglik[e * k + kk] = -(base - h * a).norm_sqr() / interf_var[e];
                }
            }
            ops += degree * k as u64;

            for (kk, b) in buf.iter_mut().enumerate() {
                *b = range.clone().map(|e| loglik[e * k + kk]).sum();
            }
            ops += degree * k as u64;
            softmax_in_place(&mut buf);
            let marg = &mut marginals[col];
            for (old, new) in marg.iter_mut().zip(&buf) {
                res = res.max((*old - new).abs());
                *old = *new;
            }

            for e in range.clone() {
                for (kk, b) in buf.iter_mut().enumerate() {
                    *b = range
                        .clone()
                        .filter(|&o| o != e)
                        .map(|o| loglik[o * k + kk])
                        .sum();
                }
                ops += (degree - 1) * k as u64;
                softmax_in_place(&mut buf);
                for (m, new) in msgs[e * k..(e + 1) * k].iter_mut().zip(&buf) {
                    *m = damping * new + (1.0 - damping) * *m;
                }
            }
        }
        trace.push(res);
        if cfg.early_stop && res < cfg.tol {
            break;
        }
    }

    let indices = marginals.iter().map(|m| argmax(m)).collect();
    let mut result = DetectionResult::from_indices(indices, c, started);
    result.iterations = trace.len();
    result.residual_trace = Some(trace);
    result.soft_probs = Some(marginals);
    result.op_count = ops;
    result.elapsed = started.elapsed();
    Ok(result)
}
