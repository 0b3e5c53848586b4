//! Exact discrete optimal transport: assignment (equal sizes) and the
//! transportation simplex (unequal sizes, uniform marginals).

/// Minimum-cost perfect assignment on an `n x n` cost matrix given as a
/// closure. Hungarian algorithm with potentials, O(n^3).
pub fn assignment_cost(n: usize, cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    // 1-based arrays; column 0 is the virtual root.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: row assigned to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost(p[j] - 1, j - 1)).sum()
}

/// Exact optimal transport cost between uniform empirical measures of sizes
/// `n` and `m` (weights `1/n` and `1/m`) under the given pairwise cost.
/// Transportation simplex on the integer-scaled problem (row supplies `m`,
/// column demands `n`), Bland's rule for anti-cycling.
pub fn transport_cost(n: usize, m: usize, cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    let supply_unit = m as i64;
    let demand_unit = n as i64;

    // Basic cells with allocations; kept as a flat list, at most n+m-1 long.
    #[derive(Clone, Copy)]
    struct Cell {
        row: usize,
        col: usize,
        alloc: i64,
    }

    // Northwest-corner initial basis.
    let mut basis: Vec<Cell> = Vec::with_capacity(n + m);
    let mut supply = vec![supply_unit; n];
    let mut demand = vec![demand_unit; m];
    let (mut i, mut j) = (0usize, 0usize);
    while i < n && j < m {
        let amount = supply[i].min(demand[j]);
        basis.push(Cell {
            row: i,
            col: j,
            alloc: amount,
        });
        supply[i] -= amount;
        demand[j] -= amount;
        if supply[i] == 0 && i + 1 < n {
            i += 1;
        } else if demand[j] == 0 && j + 1 < m {
            j += 1;
        } else if supply[i] == 0 && demand[j] == 0 {
            break;
        }
    }

    let max_pivots = 1000 * (n + m) * (n + m);
    for _ in 0..max_pivots {
        // Potentials from the basis tree: u[row] + v[col] = cost(row, col).
        let mut u = vec![f64::NAN; n];
        let mut v = vec![f64::NAN; m];
        u[0] = 0.0;
        let mut settled = 1;
        while settled < n + m {
            let mut progressed = false;
            for c in &basis {
                if u[c.row].is_nan() && !v[c.col].is_nan() {
                    u[c.row] = cost(c.row, c.col) - v[c.col];
                    settled += 1;
                    progressed = true;
                } else if !u[c.row].is_nan() && v[c.col].is_nan() {
                    v[c.col] = cost(c.row, c.col) - u[c.row];
                    settled += 1;
                    progressed = true;
                }
            }
            if !progressed {
                break; // disconnected basis cannot happen with n+m-1 cells
            }
        }

        // Entering cell: Bland's rule, first negative reduced cost.
        let mut entering = None;
        'scan: for r in 0..n {
            for c in 0..m {
                let reduced = cost(r, c) - u[r] - v[c];
                if reduced < -1e-12 && !basis.iter().any(|b| b.row == r && b.col == c) {
                    entering = Some((r, c));
                    break 'scan;
                }
            }
        }
        let Some((er, ec)) = entering else {
            break;
        };

        // Unique cycle through the entering cell: edges alternate row / column
        // matches starting with a row match against `er`, and the cycle closes
        // on a row-matched cell whose column is `ec`.
        fn find_cycle(
            basis: &[Cell],
            entering_col: usize,
            path: &mut Vec<usize>,
            used: &mut Vec<bool>,
            match_row: bool,
            key: usize,
        ) -> bool {
            for (idx, c) in basis.iter().enumerate() {
                if used[idx] {
                    continue;
                }
                if match_row && c.row == key {
                    used[idx] = true;
                    path.push(idx);
                    if c.col == entering_col
                        || find_cycle(basis, entering_col, path, used, false, c.col)
                    {
                        return true;
                    }
                    path.pop();
                    used[idx] = false;
                } else if !match_row && c.col == key {
                    used[idx] = true;
                    path.push(idx);
                    if find_cycle(basis, entering_col, path, used, true, c.row) {
                        return true;
                    }
                    path.pop();
                    used[idx] = false;
                }
            }
            false
        }

        let mut path = Vec::new();
        let mut used = vec![false; basis.len()];
        let found = find_cycle(&basis, ec, &mut path, &mut used, true, er);
        debug_assert!(found, "transportation basis must contain a cycle");
        if !found {
            break;
        }

        // Path alternates row-hop/column-hop cells starting from (er, ec);
        // odd positions (0-based even indices in `path`) lose allocation.
        let minus_positions: Vec<usize> = path.iter().step_by(2).copied().collect();
        let theta = minus_positions
            .iter()
            .map(|&idx| basis[idx].alloc)
            .min()
            .unwrap_or(0);
        let leaving = *minus_positions
            .iter()
            .min_by_key(|&&idx| (basis[idx].alloc, basis[idx].row, basis[idx].col))
            .expect("cycle has a leaving cell");

        for (pos, &idx) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis[idx].alloc -= theta;
            } else {
                basis[idx].alloc += theta;
            }
        }
        basis[leaving] = Cell {
            row: er,
            col: ec,
            alloc: theta,
        };
    }

    let total: f64 = basis
        .iter()
        .map(|c| c.alloc as f64 * cost(c.row, c.col))
        .sum();
    total / (n as f64 * m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_identity_is_optimal() {
        let pts = [0.0, 1.0, 2.0, 3.0];
        let cost = |i: usize, j: usize| (pts[i] - pts[j]) * (pts[i] - pts[j]);
        assert_eq!(assignment_cost(4, &cost), 0.0);
    }

    #[test]
    fn assignment_small_hand_case() {
        // rows pick distinct columns; optimum is 1 + 2 + 1 = 4
        let c = [[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 1.0]];
        let cost = |i: usize, j: usize| c[i][j];
        assert_eq!(assignment_cost(3, &cost), 4.0);
    }

    #[test]
    fn transport_equal_sizes_matches_assignment() {
        let xs = [0.3, -1.2, 0.9, 2.0, -0.5];
        let ys = [1.0, 0.0, -2.0, 0.4, 0.8];
        let cost = |i: usize, j: usize| (xs[i] - ys[j]) * (xs[i] - ys[j]);
        let a = assignment_cost(5, &cost) / 5.0;
        let t = transport_cost(5, 5, &cost);
        assert!((a - t).abs() < 1e-12, "{a} vs {t}");
    }

    #[test]
    fn transport_two_to_one() {
        // mass 1/2 at 0 and 1 moved to a single point at 0.5
        let xs = [0.0, 1.0];
        let ys = [0.5];
        let cost = |i: usize, j: usize| (xs[i] - ys[j]) * (xs[i] - ys[j]);
        let t = transport_cost(2, 1, &cost);
        assert!((t - 0.25).abs() < 1e-12);
    }
}
