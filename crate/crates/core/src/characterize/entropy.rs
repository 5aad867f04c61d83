//! Shannon entropy of the POI category mix within a cell.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::PoiTable;

/// Natural-log entropy of a count vector; `None` for an all-zero vector.
pub fn shannon_entropy(counts: &[u64]) -> Option<f64> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return None;
    }
    let n = n as f64;
    let h = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>();
    Some(h.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEntropy {
    pub entropy: f64,
    pub n_pois: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyField {
    pub values: BTreeMap<String, CellEntropy>,
    /// Cells without any POI.
    pub empty: Vec<String>,
}

pub fn poi_entropy(table: &PoiTable) -> EntropyField {
    let mut values = BTreeMap::new();
    let mut empty = Vec::new();
    for (id, row) in table.ids.iter().zip(&table.counts) {
        match shannon_entropy(row) {
            Some(entropy) => {
                values.insert(
                    id.clone(),
                    CellEntropy {
                        entropy,
                        n_pois: row.iter().sum(),
                    },
                );
            }
            None => empty.push(id.clone()),
        }
    }
    EntropyField { values, empty }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_cases() {
        assert_eq!(shannon_entropy(&[0, 0, 5, 0, 0, 0, 0, 0]), Some(0.0));
        assert!((shannon_entropy(&[2, 0, 2, 0, 0, 0, 0, 0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((shannon_entropy(&[3; 8]).unwrap() - 8f64.ln()).abs() < 1e-12);
        assert_eq!(shannon_entropy(&[0; 8]), None);
    }

    #[test]
    fn empty_cells_reported() {
        let table = PoiTable {
            ids: vec!["a".into(), "b".into()],
            counts: vec![[0; 8], [1, 1, 0, 0, 0, 0, 0, 0]],
            unassigned: 0,
        };
        let f = poi_entropy(&table);
        assert_eq!(f.empty, vec!["a".to_string()]);
        assert_eq!(f.values["b"].n_pois, 2);
    }

    proptest! {
        #[test]
        fn bounded_and_scale_invariant(counts in prop::array::uniform8(0u64..1000), k in 1u64..20) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let h = shannon_entropy(&counts).unwrap();
            prop_assert!(h >= 0.0 && h <= 8f64.ln() + 1e-12);
            let scaled: Vec<u64> = counts.iter().map(|c| c * k).collect();
            prop_assert!((shannon_entropy(&scaled).unwrap() - h).abs() < 1e-12);
        }
    }
}
