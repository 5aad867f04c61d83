use std::collections::BTreeMap;

use urban_subdivide::geometry::{AdjacencyList, Contiguity};
use urban_subdivide::metrics::{standardize, MetricField, MetricId};
use urban_subdivide::spatial::*;
use urban_subdivide::synth::*;

fn lattice_weights(rows: usize, cols: usize, mode: Contiguity) -> WeightMatrix {
    build_weights(&lattice_adjacency(rows, cols, mode))
}

fn field_from(values: &[f64], ids: &[String]) -> MetricField {
    standardize(MetricId::Custom, ids.iter().cloned().zip(values.iter().copied()).collect()).unwrap()
}

#[test]
fn rook_checkerboard_is_minus_one() {
    let f = generate(&SynthSpec::new(8, 8, Pattern::Checkerboard, 0.0, 0)).unwrap();
    let w = lattice_weights(8, 8, Contiguity::Rook);
    assert!((moran_i(&f.field, &w).unwrap() + 1.0).abs() < 1e-9);
    assert!((brute_force_moran(&f.field, &w) + 1.0).abs() < 1e-9);
}

#[test]
fn queen_checkerboard_matches_oracle() {
    // diagonal neighbors share the sign, so queen I is above -1
    let f = generate(&SynthSpec::new(8, 8, Pattern::Checkerboard, 0.0, 0)).unwrap();
    let w = lattice_weights(8, 8, Contiguity::Queen);
    let i = moran_i(&f.field, &w).unwrap();
    assert!(i > -1.0 + 1e-3 && i < 0.0, "{i}");
    assert!((i - brute_force_moran(&f.field, &w)).abs() < 1e-12);
}

#[test]
fn constant_plus_outlier_matches_oracle() {
    let grid = lattice_grid(6, 6);
    let ids: Vec<String> = grid.ids().map(str::to_string).collect();
    let mut values = vec![1.0; 36];
    values[14] = 10.0;
    let field = field_from(&values, &ids);
    for mode in [Contiguity::Rook, Contiguity::Queen] {
        let w = lattice_weights(6, 6, mode);
        assert!((moran_i(&field, &w).unwrap() - brute_force_moran(&field, &w)).abs() < 1e-12);
    }
}

#[test]
fn half_split_is_strongly_positive() {
    let grid = lattice_grid(8, 8);
    let ids: Vec<String> = grid.ids().map(str::to_string).collect();
    let values: Vec<f64> = (0..64).map(|k| if k % 8 < 4 { 1.0 } else { -1.0 }).collect();
    let field = field_from(&values, &ids);
    let w = lattice_weights(8, 8, Contiguity::Queen);
    let r = global_moran(&field, &w, &GlobalOptions::default()).unwrap();
    assert!(r.i > 0.5, "{}", r.i);
    assert!(r.pseudo_p <= 0.001, "{}", r.pseudo_p);
    assert!((r.expected_i + 1.0 / 63.0).abs() < 1e-15);
}

#[test]
fn planted_block_interior_is_hot() {
    let spec = SynthSpec::new(10, 10, Pattern::PlantedBlock, 0.2, 11);
    let f = generate(&spec).unwrap();
    let w = lattice_weights(10, 10, Contiguity::Queen);
    let r = local_moran(&f.field, &w, &LocalOptions::default()).unwrap();
    let labels = classify_spots(&r);
    // centre of the default 3x3 block at (3..6, 3..6)
    let centre = cell_id(10, 10, 4, 4);
    assert_eq!(labels.labels[&centre], SpotLabel::Hot);
    for c in &r.cells {
        if c.label == SpotLabel::Hot {
            assert!(c.value > 0.0 && c.lag.unwrap() > 0.0, "hot cell {} off quadrant", c.cell_id);
        }
    }
}

#[test]
fn single_high_cell_is_never_hot() {
    let grid = lattice_grid(7, 7);
    let ids: Vec<String> = grid.ids().map(str::to_string).collect();
    let w = lattice_weights(7, 7, Contiguity::Queen);
    for seed in 0..5 {
        let mut values: Vec<f64> = (0..49).map(|k| ((k * 37 + seed * 11) % 13) as f64 * 0.01).collect();
        values[24] = 5.0;
        let field = field_from(&values, &ids);
        let opts = LocalOptions {
            seed: seed as u64,
            ..Default::default()
        };
        let r = local_moran(&field, &w, &opts).unwrap();
        let cell = r.cells.iter().find(|c| c.cell_id == ids[24]).unwrap();
        assert_eq!(cell.quadrant, Some(Quadrant::HL));
        assert!(matches!(cell.label, SpotLabel::Outlier | SpotLabel::NotSignificant));
    }
}

#[test]
fn islands_are_labelled_and_excluded() {
    let ids: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
    // a path 0-1-2-3-4 plus an isolated cell 5
    let adj = AdjacencyList::from_indices(ids.clone(), vec![vec![1], vec![0, 2], vec![1, 3], vec![2, 4], vec![3], vec![]]);
    let w = build_weights(&adj);
    let field = field_from(&[1.0, 2.0, 3.0, 4.0, 5.0, 100.0], &ids);
    let r = local_moran(&field, &w, &LocalOptions::default()).unwrap();
    let island = r.cells.iter().find(|c| c.cell_id == "c5").unwrap();
    assert_eq!(island.label, SpotLabel::Island);
    assert!(island.pseudo_p.is_none() && island.local_i.is_none());
    // the island's extreme value must not enter the mean
    assert!((r.mean - field.standardized.iter().take(5).map(|(_, v)| v).sum::<f64>() / 5.0).abs() < 1e-12);
    assert!((moran_i(&field, &w).unwrap() - brute_force_moran(&field, &w)).abs() < 1e-12);
}

#[test]
fn undefined_cells_are_excluded() {
    let w = lattice_weights(5, 5, Contiguity::Rook);
    let f = generate(&SynthSpec::new(5, 5, Pattern::Random, 1.0, 3)).unwrap();
    let mut raw: BTreeMap<String, f64> = f.field.raw.clone();
    raw.remove(&cell_id(5, 5, 2, 2));
    let field = standardize(MetricId::Custom, raw).unwrap();
    let r = local_moran(&field, &w, &LocalOptions::default()).unwrap();
    assert_eq!(r.cells.len(), 24);
    assert!((moran_i(&field, &w).unwrap() - brute_force_moran(&field, &w)).abs() < 1e-12);
}

#[test]
fn evidence_grows_with_contrast() {
    let w = lattice_weights(10, 10, Contiguity::Queen);
    let centre = cell_id(10, 10, 4, 4);
    let mut last = f64::INFINITY;
    for contrast in [1.0, 2.0, 4.0] {
        let f = generate(&SynthSpec::new(10, 10, Pattern::PlantedBlock, 1.0, 5).with_contrast(contrast)).unwrap();
        let r = local_moran(&f.field, &w, &LocalOptions::default()).unwrap();
        let p = r.cells.iter().find(|c| c.cell_id == centre).unwrap().pseudo_p.unwrap();
        assert!(p <= last, "p {p} at contrast {contrast} above {last}");
        last = p;
    }
}

#[test]
fn local_statistics_sum_to_global() {
    // with m2 scaling, sum_i I_i = W * I where W is the total weight
    for seed in 0..5 {
        let f = generate(&SynthSpec::new(9, 7, Pattern::Random, 1.0, seed)).unwrap();
        let w = lattice_weights(9, 7, Contiguity::Queen);
        let i = moran_i(&f.field, &w).unwrap();
        let r = local_moran(&f.field, &w, &LocalOptions { permutations: 9, ..Default::default() }).unwrap();
        let sum: f64 = r.cells.iter().filter_map(|c| c.local_i).sum();
        assert!((sum - w.total_weight() * i).abs() < 1e-10, "{sum} vs {}", w.total_weight() * i);
    }
}

#[test]
fn paper_literal_variance_runs_and_reports_fallbacks() {
    let f = generate(&SynthSpec::new(6, 6, Pattern::Random, 1.0, 9)).unwrap();
    let w = lattice_weights(6, 6, Contiguity::Queen);
    let opts = LocalOptions {
        variance: LocalVariance::PaperLiteral,
        ..Default::default()
    };
    let r = local_moran(&f.field, &w, &opts).unwrap();
    assert_eq!(r.literal_fallbacks, 0);
    assert!(r.cells.iter().all(|c| c.local_i.unwrap().is_finite()));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let f = generate(&SynthSpec::new(12, 12, Pattern::PlantedBlock, 1.0, 4)).unwrap();
    let w = lattice_weights(12, 12, Contiguity::Queen);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                (
                    local_moran(&f.field, &w, &LocalOptions::default()).unwrap(),
                    global_moran(&f.field, &w, &GlobalOptions::default()).unwrap(),
                )
            })
    };
    let (l1, g1) = run(1);
    let (l4, g4) = run(4);
    assert_eq!(g1, g4);
    for (a, b) in l1.cells.iter().zip(&l4.cells) {
        assert_eq!(a.pseudo_p.map(f64::to_bits), b.pseudo_p.map(f64::to_bits));
    }
}

#[test]
fn null_fields_flag_about_alpha() {
    let w = lattice_weights(10, 10, Contiguity::Queen);
    let (mut sig, mut n) = (0usize, 0usize);
    for seed in 0..10 {
        let f = generate(&SynthSpec::new(10, 10, Pattern::Random, 1.0, 500 + seed)).unwrap();
        let r = local_moran(&f.field, &w, &LocalOptions { seed, ..Default::default() }).unwrap();
        sig += r.cells.iter().filter(|c| c.label.is_significant()).count();
        n += r.cells.len();
    }
    let rate = sig as f64 / n as f64;
    assert!((0.01..=0.10).contains(&rate), "{rate}");
}

#[test]
fn fdr_never_adds_significance() {
    let f = generate(&SynthSpec::new(10, 10, Pattern::PlantedBlock, 1.0, 2)).unwrap();
    let w = lattice_weights(10, 10, Contiguity::Queen);
    let plain = local_moran(&f.field, &w, &LocalOptions::default()).unwrap();
    let fdr = local_moran(
        &f.field,
        &w,
        &LocalOptions {
            correction: Correction::Fdr,
            ..Default::default()
        },
    )
    .unwrap();
    for (a, b) in plain.cells.iter().zip(&fdr.cells) {
        if b.label.is_significant() {
            assert!(a.label.is_significant());
        }
        assert!(b.p_adjusted.unwrap() >= b.pseudo_p.unwrap());
    }
}
