use std::collections::BTreeMap;

use crate::geometry::AdjacencyList;
use crate::metrics::MetricField;

/// Row-standardized binary contiguity weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    ids: Vec<String>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl WeightMatrix {
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn is_island(&self, i: usize) -> bool {
        self.rows[i].is_empty()
    }

    pub fn islands(&self) -> Vec<&str> {
        (0..self.len())
            .filter(|&i| self.is_island(i))
            .map(|i| self.ids[i].as_str())
            .collect()
    }

    /// Sum of all weights.
    pub fn total_weight(&self) -> f64 {
        self.rows.iter().flatten().map(|(_, w)| w).sum()
    }

    pub fn to_map(&self) -> BTreeMap<String, Vec<(String, f64)>> {
        self.ids
            .iter()
            .zip(&self.rows)
            .map(|(id, row)| (id.clone(), row.iter().map(|&(j, w)| (self.ids[j].clone(), w)).collect()))
            .collect()
    }

    /// Drops cells failing `keep` from the matrix and from every neighbor
    /// list, then renormalizes rows. Cells left without neighbors become
    /// islands.
    pub fn restrict(&self, keep: impl Fn(&str) -> bool) -> WeightMatrix {
        let kept: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.ids[i])).collect();
        let mut remap = vec![usize::MAX; self.len()];
        for (new, &old) in kept.iter().enumerate() {
            remap[old] = new;
        }
        let rows = kept
            .iter()
            .map(|&old| {
                let row: Vec<usize> = self.rows[old]
                    .iter()
                    .filter_map(|&(j, _)| (remap[j] != usize::MAX).then_some(remap[j]))
                    .collect();
                normalize(row)
            })
            .collect();
        WeightMatrix {
            ids: kept.iter().map(|&i| self.ids[i].clone()).collect(),
            rows,
        }
    }
}

fn normalize(neighbors: Vec<usize>) -> Vec<(usize, f64)> {
    let w = 1.0 / neighbors.len() as f64;
    neighbors.into_iter().map(|j| (j, w)).collect()
}

/// w_ij = 1 / |neighbors(i)| for contiguous j, 0 otherwise.
pub fn build_weights(adjacency: &AdjacencyList) -> WeightMatrix {
    WeightMatrix {
        ids: adjacency.ids().to_vec(),
        rows: (0..adjacency.len())
            .map(|i| normalize(adjacency.neighbors(i).to_vec()))
            .collect(),
    }
}

/// Cells entering a spatial analysis: defined in the field and with at least
/// one defined neighbor. Rows are renormalized over the included cells.
#[derive(Debug, Clone)]
pub struct AnalysisSet {
    pub weights: WeightMatrix,
    pub values: Vec<f64>,
    /// Defined cells with no defined neighbor.
    pub islands: Vec<String>,
    /// Grid cells with no value in the field.
    pub undefined: Vec<String>,
}

impl AnalysisSet {
    pub fn new(field: &MetricField, weights: &WeightMatrix) -> Self {
        let defined = weights.restrict(|id| field.standardized.contains_key(id));
        let islands: Vec<String> = defined.islands().into_iter().map(str::to_string).collect();
        let analysed = defined.restrict(|id| !islands.iter().any(|s| s == id));
        let values = analysed.ids().iter().map(|id| field.standardized[id]).collect();
        let undefined = weights
            .ids()
            .iter()
            .filter(|id| !field.standardized.contains_key(*id))
            .cloned()
            .collect();
        AnalysisSet {
            weights: analysed,
            values,
            islands,
            undefined,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricId;

    fn path_adjacency(n: usize) -> AdjacencyList {
        let ids = (0..n).map(|i| format!("c{i}")).collect();
        let lists = (0..n).map(|i| if i + 1 < n { vec![i + 1] } else { vec![] }).collect();
        AdjacencyList::from_indices(ids, lists)
    }

    #[test]
    fn rows_sum_to_one() {
        // star: 0 linked to 1..=4, plus isolated 5
        let ids = (0..6).map(|i| format!("c{i}")).collect();
        let adj = AdjacencyList::from_indices(ids, vec![vec![1, 2, 3, 4], vec![], vec![], vec![], vec![], vec![]]);
        let w = build_weights(&adj);
        assert_eq!(w.row(0).iter().map(|r| r.1).collect::<Vec<_>>(), vec![0.25; 4]);
        assert_eq!(w.islands(), vec!["c5"]);
        for i in 0..5 {
            let s: f64 = w.row(i).iter().map(|r| r.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(w.row(0).iter().all(|&(j, _)| j != 0));
    }

    #[test]
    fn restriction_renormalizes_and_creates_islands() {
        let w = build_weights(&path_adjacency(4));
        let field = MetricField {
            metric: MetricId::Custom,
            raw: BTreeMap::new(),
            standardized: [("c0", 1.0), ("c2", 2.0), ("c3", 3.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            n_cells: 3,
        };
        let set = AnalysisSet::new(&field, &w);
        assert_eq!(set.undefined, vec!["c1"]);
        assert_eq!(set.islands, vec!["c0"]);
        assert_eq!(set.weights.ids(), &["c2".to_string(), "c3".to_string()]);
        assert_eq!(set.weights.row(0), &[(1, 1.0)]);
        assert_eq!(set.values, vec![2.0, 3.0]);
    }
}
