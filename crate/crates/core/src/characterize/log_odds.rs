//! Log-odds ratio with an uninformative Dirichlet prior.
//!
//! For cell i and category w the point estimate is
//!
//! ```text
//! δ(i, w) = ln[(y_iw + α) / (n_i + α0 - y_iw - α)] - ln[(y_w + α) / (n + α0 - y_w - α)]
//! ```
//!
//! where `y_w` and `n` are city-wide totals over all cells (cell i included),
//! `α` is the per-category pseudo-count and `α0 = K α` for K categories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PoiTable;

pub const DEFAULT_PRIOR_ALPHA: f64 = 0.5;

/// δ for every row of a count matrix with `K` categories per row.
pub fn log_odds<const K: usize>(counts: &[[u64; K]], alpha: f64) -> Result<Vec<[f64; K]>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("prior alpha must be positive, got {alpha}")));
    }
    let alpha0 = K as f64 * alpha;
    let mut city = [0.0f64; K];
    for row in counts {
        for (c, y) in city.iter_mut().zip(row) {
            *c += *y as f64;
        }
    }
    let city_n: f64 = city.iter().sum();
    let background: [f64; K] = std::array::from_fn(|w| {
        ((city[w] + alpha) / (city_n + alpha0 - city[w] - alpha)).ln()
    });
    Ok(counts
        .iter()
        .map(|row| {
            let n: f64 = row.iter().map(|&y| y as f64).sum();
            std::array::from_fn(|w| {
                let y = row[w] as f64;
                ((y + alpha) / (n + alpha0 - y - alpha)).ln() - background[w]
            })
        })
        .collect())
}

/// Per-cell, per-category association of POIs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiAssociation {
    pub ids: Vec<String>,
    pub deltas: Vec<[f64; 8]>,
    pub alpha_prior: f64,
}

impl PoiAssociation {
    pub fn delta(&self, cell_id: &str) -> Option<&[f64; 8]> {
        self.ids.iter().position(|id| id == cell_id).map(|i| &self.deltas[i])
    }
}

pub fn poi_log_odds(table: &PoiTable, alpha_prior: f64) -> Result<PoiAssociation> {
    Ok(PoiAssociation {
        ids: table.ids.clone(),
        deltas: log_odds(&table.counts, alpha_prior)?,
        alpha_prior,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_cell_hand_case() {
        // categories: [food, transport]
        let d = log_odds(&[[3, 1], [1, 3]], 0.5).unwrap();
        assert!((d[0][0] - (7.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((d[0][0] - ((3.5f64 / 1.5).ln() - (4.5f64 / 4.5).ln())).abs() < 1e-12);
        // mirrored counts give mirrored deltas
        for (a, b) in d[0].iter().zip(&d[1]) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn proportional_cell_is_near_zero() {
        let d = log_odds(&[[400, 200, 100, 100, 50, 50, 50, 50], [4000, 2000, 1000, 1000, 500, 500, 500, 500]], 0.5).unwrap();
        for w in 0..8 {
            assert!(d[1][w].abs() < 0.01, "{:?}", d[1]);
            assert!(d[0][w].abs() < 0.02, "{:?}", d[0]);
        }
    }

    #[test]
    fn empty_cell_is_finite() {
        let d = log_odds(&[[0; 8], [5, 1, 0, 2, 0, 0, 9, 1]], 0.5).unwrap();
        assert!(d[0].iter().all(|v| v.is_finite()));
        // prior-only odds (0.5 / 3.5) against the city term
        let city = (5.5f64 / (18.0 + 4.0 - 5.5)).ln();
        assert!((d[0][0] - ((0.5f64 / 3.5).ln() - city)).abs() < 1e-12);
    }

    #[test]
    fn non_positive_prior_rejected() {
        assert!(log_odds(&[[1, 2]], 0.0).is_err());
    }
}
