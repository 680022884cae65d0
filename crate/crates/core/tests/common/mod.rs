#![allow(dead_code)]

//! Test-only oracles, independent of the library's solver.

/// A tiny labeled dataset with the solver settings to use on it.
pub struct OracleCase {
    pub name: &'static str,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub c: f64,
    /// `None` for linear, `Some(gamma)` for rbf.
    pub gamma: Option<f64>,
    pub queries: Vec<Vec<f64>>,
}

pub fn kernel(gamma: Option<f64>, a: &[f64], b: &[f64]) -> f64 {
    match gamma {
        None => a.iter().zip(b).map(|(p, q)| p * q).sum(),
        Some(g) => (-g * a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>()).exp(),
    }
}

/// Brute-force dual maximization over a grid of step `0.01 C` for all but
/// the last multiplier; the last one is fixed by `Σ α_i y_i = 0`.
pub struct GridOracle {
    pub alpha: Vec<f64>,
    pub bias: f64,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    gamma: Option<f64>,
}

impl GridOracle {
    pub fn solve(x: &[Vec<f64>], y: &[f64], c: f64, gamma: Option<f64>) -> Self {
        let n = x.len();
        assert!((2..=4).contains(&n));
        let k: Vec<Vec<f64>> = x.iter().map(|a| x.iter().map(|b| kernel(gamma, a, b)).collect()).collect();
        let steps = 100usize;
        let h = c / steps as f64;
        let free = n - 1;
        let total = (steps + 1).pow(free as u32);

        let mut best = f64::NEG_INFINITY;
        let mut best_alpha = vec![0.0; n];
        let mut alpha = vec![0.0; n];
        for code in 0..total {
            let mut rem = code;
            let mut s = 0.0;
            for i in 0..free {
                alpha[i] = (rem % (steps + 1)) as f64 * h;
                rem /= steps + 1;
                s += alpha[i] * y[i];
            }
            let last = -s * y[n - 1];
            if !(-1e-12..=c + 1e-12).contains(&last) {
                continue;
            }
            alpha[n - 1] = last.clamp(0.0, c);
            let mut w = alpha.iter().sum::<f64>();
            for i in 0..n {
                for j in 0..n {
                    w -= 0.5 * alpha[i] * alpha[j] * y[i] * y[j] * k[i][j];
                }
            }
            if w > best {
                best = w;
                best_alpha.copy_from_slice(&alpha);
            }
        }

        // bias: midpoint of the interval allowed by the KKT conditions,
        // averaged over free multipliers when there are any
        let g: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| best_alpha[j] * y[j] * k[j][i]).sum())
            .collect();
        let tiny = 1e-9 * c;
        let free_b: Vec<f64> = (0..n)
            .filter(|&i| best_alpha[i] > tiny && best_alpha[i] < c - tiny)
            .map(|i| y[i] - g[i])
            .collect();
        let bias = if !free_b.is_empty() {
            free_b.iter().sum::<f64>() / free_b.len() as f64
        } else {
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for i in 0..n {
                let v = y[i] - g[i];
                let at_zero = best_alpha[i] <= tiny;
                let at_c = best_alpha[i] >= c - tiny;
                // α < C ⇒ y f ≥ 1 ; α > 0 ⇒ y f ≤ 1
                if (y[i] > 0.0 && !at_c) || (y[i] < 0.0 && !at_zero) {
                    lo = lo.max(v);
                }
                if (y[i] > 0.0 && !at_zero) || (y[i] < 0.0 && !at_c) {
                    hi = hi.min(v);
                }
            }
            (lo + hi) / 2.0
        };

        Self {
            alpha: best_alpha,
            bias,
            x: x.to_vec(),
            y: y.to_vec(),
            gamma,
        }
    }

    pub fn decision(&self, q: &[f64]) -> f64 {
        self.alpha
            .iter()
            .zip(&self.y)
            .zip(&self.x)
            .map(|((a, y), x)| a * y * kernel(self.gamma, x, q))
            .sum::<f64>()
            + self.bias
    }
}

fn grid_queries(lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..5 {
        for j in 0..5 {
            let a = lo + (hi - lo) * i as f64 / 4.0;
            let b = lo + (hi - lo) * j as f64 / 4.0;
            out.push(vec![a, b]);
        }
    }
    out
}

/// The fixed suite of small datasets (at most 4 points in at most 2
/// dimensions).
pub fn oracle_suite() -> Vec<OracleCase> {
    let with_training = |x: &Vec<Vec<f64>>, mut q: Vec<Vec<f64>>| {
        q.extend(x.iter().cloned());
        q
    };
    let mut cases = Vec::new();

    let x = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
    cases.push(OracleCase {
        name: "two-point linear",
        queries: with_training(&x, grid_queries(-1.0, 3.0)),
        x,
        y: vec![-1.0, 1.0],
        c: 10.0,
        gamma: None,
    });

    let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    cases.push(OracleCase {
        name: "xor rbf",
        queries: with_training(&x, vec![vec![0.1, 0.1], vec![0.9, 0.9], vec![0.1, 0.9], vec![0.9, 0.1]]),
        x,
        y: vec![-1.0, -1.0, 1.0, 1.0],
        c: 100.0,
        gamma: Some(1.0),
    });

    let x = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![3.0, 1.0]];
    cases.push(OracleCase {
        name: "three-point linear",
        queries: with_training(&x, grid_queries(-1.0, 4.0)),
        x,
        y: vec![-1.0, -1.0, 1.0],
        c: 1.0,
        gamma: None,
    });

    let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.9, 0.8], vec![0.2, 0.1]];
    cases.push(OracleCase {
        name: "overlapping linear",
        queries: with_training(&x, grid_queries(-1.0, 2.0)),
        x,
        y: vec![-1.0, 1.0, -1.0, 1.0],
        c: 1.0,
        gamma: None,
    });

    let x = vec![vec![0.0, 0.0], vec![0.0, 2.0], vec![2.0, 0.0], vec![2.0, 2.0]];
    cases.push(OracleCase {
        name: "scaled xor rbf",
        queries: with_training(&x, vec![vec![0.3, 0.3], vec![1.7, 1.7], vec![0.3, 1.7], vec![1.7, 0.3]]),
        x,
        y: vec![1.0, -1.0, -1.0, 1.0],
        c: 10.0,
        gamma: Some(0.5),
    });

    let x = vec![vec![0.0, 0.0], vec![0.5, 0.5], vec![1.0, 0.0]];
    cases.push(OracleCase {
        name: "triangle rbf",
        queries: with_training(&x, grid_queries(-0.5, 1.5)),
        x,
        y: vec![-1.0, 1.0, -1.0],
        c: 1.0,
        gamma: Some(2.0),
    });

    let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
    cases.push(OracleCase {
        name: "one-dimensional linear",
        queries: (0..13).map(|i| vec![-1.5 + 0.5 * i as f64]).chain(x.iter().cloned()).collect(),
        x,
        y: vec![-1.0, -1.0, 1.0, 1.0],
        c: 5.0,
        gamma: None,
    });

    cases
}
