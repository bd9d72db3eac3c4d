//! Small dense two-phase simplex used by the concave-closure utilities.
//! Solves `max cᵀλ  s.t.  Aλ = b, λ >= 0` with a handful of rows and up to
//! a few thousand columns. Bland's rule throughout, so it cannot cycle.

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub(crate) enum SimplexError {
    #[error("linear program is infeasible (phase-1 residual {0})")]
    Infeasible(f64),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("right-hand side must be nonnegative")]
    NegativeRhs,
}

/// Equality-form LP in column-major layout: `cols[j]` holds the `m` entries
/// of column `j`.
pub(crate) struct StandardLp {
    pub m: usize,
    pub cols: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub costs: Vec<f64>,
}

pub(crate) fn maximize(lp: &StandardLp) -> Result<f64, SimplexError> {
    let m = lp.m;
    let n_real = lp.cols.len();
    if lp.rhs.iter().any(|&b| b < 0.0) {
        return Err(SimplexError::NegativeRhs);
    }

    // Tableau rows: m constraints then the objective (z - c form); columns:
    // real, artificial, rhs.
    let total = n_real + m;
    let mut tab = vec![vec![0.0f64; total + 1]; m + 1];
    for (j, col) in lp.cols.iter().enumerate() {
        for i in 0..m {
            tab[i][j] = col[i];
        }
    }
    for i in 0..m {
        tab[i][n_real + i] = 1.0;
        tab[i][total] = lp.rhs[i];
    }
    let mut basis: Vec<usize> = (n_real..total).collect();

    // Phase 1: maximize minus the artificial sum.
    for j in 0..n_real {
        tab[m][j] = -(0..m).map(|i| tab[i][j]).sum::<f64>();
    }
    for j in n_real..total {
        tab[m][j] = 0.0;
    }
    tab[m][total] = -lp.rhs.iter().sum::<f64>();
    run(&mut tab, &mut basis, m, total, total)?;
    if tab[m][total] < -1e-7 {
        return Err(SimplexError::Infeasible(-tab[m][total]));
    }

    // Drive artificials out of the basis where possible; leftover rows are
    // redundant and their artificials stay pinned at zero.
    for i in 0..m {
        if basis[i] >= n_real {
            if let Some(j) = (0..n_real).find(|&j| tab[i][j].abs() > PIVOT_TOL) {
                pivot(&mut tab, &mut basis, i, j, total);
            }
        }
    }

    // Phase 2 objective from the real costs.
    for j in 0..=total {
        tab[m][j] = 0.0;
    }
    for j in 0..n_real {
        tab[m][j] = -lp.costs[j];
    }
    for i in 0..m {
        let b = basis[i];
        if b < n_real {
            let c = lp.costs[b];
            if c != 0.0 {
                for j in 0..=total {
                    tab[m][j] += c * tab[i][j];
                }
            }
        }
    }
    run(&mut tab, &mut basis, m, n_real, total)?;
    Ok(tab[m][total])
}

fn run(
    tab: &mut [Vec<f64>],
    basis: &mut [usize],
    m: usize,
    allowed: usize,
    total: usize,
) -> Result<(), SimplexError> {
    loop {
        // Bland: lowest-index column with negative reduced cost.
        let Some(enter) = (0..allowed).find(|&j| tab[m][j] < -COST_TOL) else {
            return Ok(());
        };
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let a = tab[i][enter];
            if a > PIVOT_TOL {
                let ratio = tab[i][total] / a;
                let better = ratio < best_ratio - 1e-12
                    || (ratio < best_ratio + 1e-12
                        && leave.is_some_and(|l| basis[i] < basis[l]));
                if better {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(row) = leave else {
            return Err(SimplexError::Unbounded);
        };
        pivot(tab, basis, row, enter, total);
    }
}

fn pivot(tab: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize, total: usize) {
    let inv = 1.0 / tab[row][col];
    for j in 0..=total {
        tab[row][j] *= inv;
    }
    tab[row][col] = 1.0;
    for i in 0..tab.len() {
        if i == row {
            continue;
        }
        let factor = tab[i][col];
        if factor != 0.0 {
            for j in 0..=total {
                tab[i][j] -= factor * tab[row][j];
            }
            tab[i][col] = 0.0;
        }
    }
    basis[row] = col;
}
