//! Exact minimum-cost perfect matching on square cost matrices.
//!
//! Shortest augmenting paths with row/column potentials (the O(n³) form of
//! the Hungarian method). Rows are added one at a time; each addition runs
//! a Dijkstra-like sweep over columns using reduced costs.

use crate::array::Array;
use crate::error::{shape_err, NumericError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `permutation[row] = column`.
    pub permutation: Vec<usize>,
    pub total_cost: f64,
}

pub fn solve_assignment(cost: &Array) -> Result<Assignment> {
    let (n, m) = cost.dims2();
    if cost.is_empty() {
        return Ok(Assignment {
            permutation: Vec::new(),
            total_cost: 0.0,
        });
    }
    if n != m {
        return Err(shape_err("solve_assignment", format!("{n} x {m} is not square")));
    }
    if !cost.is_finite() {
        return Err(NumericError::NonFinite("assignment cost"));
    }
    let a = |i: usize, j: usize| cost.data()[i * n + j];

    // 1-based with column 0 as the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut permutation = vec![0; n];
    for j in 1..=n {
        permutation[owner[j] - 1] = j - 1;
    }
    let total_cost = permutation.iter().enumerate().map(|(i, &j)| a(i, j)).sum();
    Ok(Assignment {
        permutation,
        total_cost,
    })
}
