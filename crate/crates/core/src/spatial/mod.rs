//! Spatial weights, global and local Moran's I, and hot/cold spot labels.

mod moran;
pub mod rng;
mod weights;

pub use moran::{
    classify_spots, fdr_adjust, global_moran, local_moran, moran_i, Alternative, Correction, GlobalMoranResult,
    GlobalOptions, LocalCell, LocalMoranResult, LocalOptions, LocalVariance, Quadrant, SpotLabel, SpotSummary,
    DEFAULT_ALPHA, DEFAULT_PERMUTATIONS,
};
pub use weights::{build_weights, AnalysisSet, WeightMatrix};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fdr_matches_hand_computation() {
        // sorted p: 0.01, 0.02, 0.03, 0.5 with m = 4
        let q = fdr_adjust(&[0.03, 0.01, 0.5, 0.02]);
        let expected = [0.04, 0.04, 0.5, 0.04];
        for (a, b) in q.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{q:?}");
        }
    }

    #[test]
    fn fdr_is_not_below_raw() {
        let p = [0.2, 0.001, 0.04, 0.9, 0.3];
        for (a, b) in fdr_adjust(&p).iter().zip(p) {
            assert!(*a >= b);
        }
    }
}
