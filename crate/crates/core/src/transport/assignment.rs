//! Dense linear assignment by shortest augmenting paths (Jonker–Volgenant).
//!
//! Column reduction, reduction transfer and two rounds of augmenting row
//! reduction build a dual-feasible partial assignment; every row still free
//! afterwards is matched by a Dijkstra-style shortest augmenting path on the
//! reduced costs. The solution is optimal for any finite real cost matrix.

use crate::error::{invalid, Result};

/// Optimal permutation `row -> column` and its total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub row_to_col: Vec<usize>,
    pub cost: f64,
}

const NONE: usize = usize::MAX;

/// Solves `min_π Σ_i cost[i * n + π(i)]` over permutations of `0..n`.
pub fn solve_assignment(cost: &[f64], n: usize) -> Result<Assignment> {
    if cost.len() != n * n {
        return Err(invalid(format!(
            "cost matrix has {} entries, expected {}",
            cost.len(),
            n * n
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(invalid("cost matrix has non-finite entries"));
    }
    if n == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            cost: 0.0,
        });
    }
    let row_to_col = lapjv(cost, n);
    let total = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok(Assignment {
        row_to_col,
        cost: total,
    })
}

fn lapjv(c: &[f64], n: usize) -> Vec<usize> {
    let at = |i: usize, j: usize| c[i * n + j];

    let mut rowsol = vec![NONE; n];
    let mut colsol = vec![NONE; n];
    let mut v = vec![0.0_f64; n];
    let mut matches = vec![0usize; n];

    // Column reduction, scanning columns right to left.
    for j in (0..n).rev() {
        let mut min = at(0, j);
        let mut imin = 0;
        for i in 1..n {
            let h = at(i, j);
            if h < min {
                min = h;
                imin = i;
            }
        }
        v[j] = min;
        matches[imin] += 1;
        if matches[imin] == 1 {
            rowsol[imin] = j;
            colsol[j] = imin;
        } else {
            colsol[j] = NONE;
        }
    }

    // Reduction transfer.
    let mut free = Vec::with_capacity(n);
    for i in 0..n {
        match matches[i] {
            0 => free.push(i),
            1 => {
                let j1 = rowsol[i];
                let mut min = f64::INFINITY;
                for j in 0..n {
                    if j != j1 {
                        let h = at(i, j) - v[j];
                        if h < min {
                            min = h;
                        }
                    }
                }
                if min.is_finite() {
                    v[j1] -= min - (at(i, j1) - v[j1]);
                }
            }
            _ => {}
        }
    }

    // Augmenting row reduction, two passes.
    if n > 1 {
        let guard = 8 * n + 64;
        for _ in 0..2 {
            let previous = std::mem::take(&mut free);
            let mut stack: Vec<usize> = previous.into_iter().rev().collect();
            let mut steps = 0;
            while let Some(i) = stack.pop() {
                steps += 1;
                if steps > guard {
                    free.push(i);
                    free.extend(stack.drain(..).rev());
                    break;
                }
                let mut umin = at(i, 0) - v[0];
                let mut j1 = 0;
                let mut usubmin = f64::INFINITY;
                let mut j2 = NONE;
                for j in 1..n {
                    let h = at(i, j) - v[j];
                    if h < usubmin {
                        if h >= umin {
                            usubmin = h;
                            j2 = j;
                        } else {
                            usubmin = umin;
                            umin = h;
                            j2 = j1;
                            j1 = j;
                        }
                    }
                }
                let mut i0 = colsol[j1];
                let strict = umin < usubmin;
                if strict {
                    v[j1] -= usubmin - umin;
                } else if i0 != NONE {
                    j1 = j2;
                    i0 = colsol[j2];
                }
                if rowsol[i] != NONE && rowsol[i] != j1 {
                    colsol[rowsol[i]] = NONE;
                }
                rowsol[i] = j1;
                colsol[j1] = i;
                if i0 != NONE && i0 != i {
                    rowsol[i0] = NONE;
                    if strict {
                        stack.push(i0);
                    } else {
                        free.push(i0);
                    }
                }
            }
        }
    }

    // Shortest augmenting paths for the remaining free rows.
    let mut d = vec![0.0_f64; n];
    let mut pred = vec![0usize; n];
    let mut collist: Vec<usize> = (0..n).collect();
    for &freerow in &free {
        if rowsol[freerow] != NONE {
            continue;
        }
        for j in 0..n {
            d[j] = at(freerow, j) - v[j];
            pred[j] = freerow;
            collist[j] = j;
        }
        let mut low = 0;
        let mut up = 0;
        let mut last = 0;
        let mut min = 0.0;
        let mut endofpath = NONE;
        while endofpath == NONE {
            if up == low {
                last = low;
                min = d[collist[up]];
                up += 1;
                for k in up..n {
                    let j = collist[k];
                    let h = d[j];
                    if h <= min {
                        if h < min {
                            up = low;
                            min = h;
                        }
                        collist[k] = collist[up];
                        collist[up] = j;
                        up += 1;
                    }
                }
                for &j in &collist[low..up] {
                    if colsol[j] == NONE {
                        endofpath = j;
                        break;
                    }
                }
            }
            if endofpath == NONE {
                let j1 = collist[low];
                low += 1;
                let i = colsol[j1];
                let h = at(i, j1) - v[j1] - min;
                let mut k = up;
                while k < n {
                    let j = collist[k];
                    let v2 = at(i, j) - v[j] - h;
                    if v2 < d[j] {
                        pred[j] = i;
                        if v2 == min {
                            if colsol[j] == NONE {
                                endofpath = j;
                                break;
                            }
                            collist[k] = collist[up];
                            collist[up] = j;
                            up += 1;
                        }
                        d[j] = v2;
                    }
                    k += 1;
                }
            }
        }
        // columns settled before the current minimum level get their prices updated
        for &j1 in &collist[..last] {
            v[j1] += d[j1] - min;
        }
        let mut j = endofpath;
        loop {
            let i = pred[j];
            colsol[j] = i;
            let next = rowsol[i];
            rowsol[i] = j;
            j = next;
            if i == freerow {
                break;
            }
        }
    }

    debug_assert!(rowsol.iter().all(|&j| j != NONE));
    rowsol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_integer_instance() {
        let c = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = solve_assignment(&c, 3).unwrap();
        assert_eq!(a.cost, 5.0);
        let mut cols = a.row_to_col.clone();
        cols.sort();
        assert_eq!(cols, vec![0, 1, 2]);
    }

    #[test]
    fn trivial_sizes() {
        assert_eq!(solve_assignment(&[], 0).unwrap().cost, 0.0);
        let a = solve_assignment(&[7.5], 1).unwrap();
        assert_eq!(a.row_to_col, vec![0]);
        assert_eq!(a.cost, 7.5);
    }

    #[test]
    fn all_equal_costs() {
        let n = 6;
        let a = solve_assignment(&vec![1.0; n * n], n).unwrap();
        assert_eq!(a.cost, n as f64);
    }

    #[test]
    fn one_row_cheapest_everywhere() {
        // row 0 is the column minimum of every column, so column reduction
        // assigns it many times over
        let n = 4;
        let mut c = vec![10.0; n * n];
        for j in 0..n {
            c[j] = j as f64;
        }
        for i in 1..n {
            c[i * n + i] = 0.5;
        }
        let a = solve_assignment(&c, n).unwrap();
        assert_eq!(a.cost, 0.0 + 1.5);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(solve_assignment(&[1.0, 2.0], 2).is_err());
        assert!(solve_assignment(&[f64::NAN], 1).is_err());
    }
}
