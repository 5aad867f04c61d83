//! Hot vs cold spot characterization: income distributions, POI association
//! and POI diversity, each compared with a two-sample KS test.

mod entropy;
mod ks;
mod log_odds;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use entropy::{poi_entropy, shannon_entropy, CellEntropy, EntropyField};
pub use ks::{
    asymptotic_p_value, bonferroni, ecdf_points, exact_p_value, kolmogorov_sf, ks_statistic, ks_two_sample,
    ks_two_sample_with, KsMethod, KsTestResult, EXACT_AUTO_MAX,
};
pub use log_odds::{log_odds, poi_log_odds, PoiAssociation, DEFAULT_PRIOR_ALPHA};

use crate::error::{Error, Result};
use crate::geometry::IncomeField;
use crate::ingest::PoiCategory;
use crate::metrics::MetricId;
use crate::spatial::{SpotLabel, SpotSummary};

/// Values of hot and cold cells, skipping cells without a value.
pub fn split_by_spot<'a>(
    spots: &SpotSummary,
    value: impl Fn(&str) -> Option<f64> + 'a,
) -> (Vec<f64>, Vec<f64>) {
    let pick = |label| spots.cells_with(label).filter_map(&value).collect::<Vec<_>>();
    (pick(SpotLabel::Hot), pick(SpotLabel::Cold))
}

fn compare(
    what: &str,
    spots: &SpotSummary,
    value: impl Fn(&str) -> Option<f64>,
    method: KsMethod,
    bonferroni_m: usize,
) -> Result<KsTestResult> {
    let (hot, cold) = split_by_spot(spots, value);
    if hot.is_empty() || cold.is_empty() {
        return Err(Error::NoSpots(format!(
            "{} {what}: {} hot and {} cold cells with values",
            spots.metric,
            hot.len(),
            cold.len()
        )));
    }
    ks_two_sample_with(&hot, &cold, method, bonferroni_m)
}

/// KS on the incomes of hot cells against cold cells.
pub fn compare_income(
    spots: &SpotSummary,
    income: &IncomeField,
    method: KsMethod,
    bonferroni_m: usize,
) -> Result<KsTestResult> {
    compare("income", spots, |id| income.income(id), method, bonferroni_m)
}

/// KS on hot vs cold log-odds, separately for each POI category.
pub fn compare_poi_association(
    spots: &SpotSummary,
    association: &PoiAssociation,
    method: KsMethod,
    bonferroni_m: usize,
) -> Result<Vec<(PoiCategory, KsTestResult)>> {
    let index: BTreeMap<&str, usize> = association
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    PoiCategory::ALL
        .iter()
        .map(|&cat| {
            let r = compare(
                cat.as_str(),
                spots,
                |id| index.get(id).map(|&i| association.deltas[i][cat.index()]),
                method,
                bonferroni_m,
            )?;
            Ok((cat, r))
        })
        .collect()
}

pub fn compare_entropy(
    spots: &SpotSummary,
    entropy: &EntropyField,
    method: KsMethod,
    bonferroni_m: usize,
) -> Result<KsTestResult> {
    compare("entropy", spots, |id| entropy.values.get(id).map(|v| v.entropy), method, bonferroni_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Income,
    PoiLogOdds,
    Entropy,
}

impl Comparison {
    pub fn as_str(self) -> &'static str {
        match self {
            Comparison::Income => "income",
            Comparison::PoiLogOdds => "poi_log_odds",
            Comparison::Entropy => "entropy",
        }
    }
}

/// One row of the hot-vs-cold comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: MetricId,
    pub comparison: Comparison,
    pub category: Option<PoiCategory>,
    pub result: KsTestResult,
}

impl ComparisonRow {
    pub fn significant(&self, alpha: f64) -> bool {
        self.result.p_bonferroni < alpha
    }
}

pub const COMPARISON_HEADER: &str = "metric,comparison,category,ks,p,p_bonferroni,n_hot,n_cold";

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = format!("{COMPARISON_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.metric,
            r.comparison.as_str(),
            r.category.map(|c| c.as_str()).unwrap_or(""),
            r.result.statistic,
            r.result.p_value,
            r.result.p_bonferroni,
            r.result.n_a,
            r.result.n_b
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CellIncome, PoiTable};

    fn spots(hot: &[&str], cold: &[&str]) -> SpotSummary {
        let mut labels = BTreeMap::new();
        for id in hot {
            labels.insert(id.to_string(), SpotLabel::Hot);
        }
        for id in cold {
            labels.insert(id.to_string(), SpotLabel::Cold);
        }
        SpotSummary {
            metric: MetricId::G,
            labels,
            counts: BTreeMap::new(),
        }
    }

    fn income(pairs: &[(&str, f64)]) -> IncomeField {
        IncomeField {
            values: pairs
                .iter()
                .map(|(id, v)| {
                    (
                        id.to_string(),
                        CellIncome {
                            income: Some(*v),
                            covered_fraction: 1.0,
                        },
                    )
                })
                .collect(),
            low_coverage: vec![],
            min_coverage: 0.05,
        }
    }

    #[test]
    fn income_disjoint_and_identical() {
        let s = spots(&["a", "b"], &["c", "d"]);
        let r = compare_income(&s, &income(&[("a", 120.0), ("b", 130.0), ("c", 80.0), ("d", 90.0)]), KsMethod::Asymptotic, 3).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert_eq!(r.bonferroni_m, 3);
        let r = compare_income(&s, &income(&[("a", 100.0), ("b", 110.0), ("c", 100.0), ("d", 110.0)]), KsMethod::Asymptotic, 3).unwrap();
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn no_spots_error() {
        let s = spots(&["a"], &[]);
        let err = compare_income(&s, &income(&[("a", 1.0)]), KsMethod::Asymptotic, 1).unwrap_err();
        assert_eq!(err.name(), "NoSpots");
    }

    #[test]
    fn entropy_disjoint() {
        let s = spots(&["a", "b"], &["c", "d"]);
        let table = PoiTable {
            ids: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            counts: vec![[2; 8], [5; 8], [0, 0, 4, 0, 0, 0, 0, 0], [0, 9, 0, 0, 0, 0, 0, 0]],
            unassigned: 0,
        };
        let r = compare_entropy(&s, &poi_entropy(&table), KsMethod::Asymptotic, 1).unwrap();
        assert_eq!(r.statistic, 1.0);
    }

    #[test]
    fn constant_association_gives_zero_statistic() {
        let s = spots(&["a", "b"], &["c", "d"]);
        let table = PoiTable {
            ids: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            counts: vec![[3, 1, 4, 1, 5, 9, 2, 6]; 4],
            unassigned: 0,
        };
        let assoc = poi_log_odds(&table, DEFAULT_PRIOR_ALPHA).unwrap();
        for (_, r) in compare_poi_association(&s, &assoc, KsMethod::Asymptotic, 8).unwrap() {
            assert_eq!(r.statistic, 0.0);
        }
    }

    #[test]
    fn csv_shape() {
        let row = ComparisonRow {
            metric: MetricId::G,
            comparison: Comparison::PoiLogOdds,
            category: Some(PoiCategory::Accommodation),
            result: ks_two_sample_with(&[1.0, 2.0], &[3.0, 4.0], KsMethod::Asymptotic, 24).unwrap(),
        };
        let csv = comparison_csv(&[row]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(COMPARISON_HEADER));
        assert!(lines.next().unwrap().starts_with("G,poi_log_odds,accommodation,1,"));
    }
}
