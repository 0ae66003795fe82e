mod common;

use common::naive_mask;
use mclnn::maskgen::{apply_mask, band_count, build_mask, MaskSpec};
use ndarray::Array2;
use proptest::prelude::*;

fn grid_case() -> impl Strategy<Value = (usize, usize, usize, i64)> {
    (2usize..=32, 1usize..=64)
        .prop_flat_map(|(l, e)| (Just(l), Just(e), 1..=l))
        .prop_flat_map(|(l, e, bw)| (Just(l), Just(e), Just(bw), -(l as i64)..bw as i64))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn matches_direct_search((l, e, bw, ov) in grid_case()) {
        let mask = build_mask(l, e, MaskSpec::new(bw, ov).unwrap()).unwrap();
        let oracle = naive_mask(l, e, bw, ov);
        for (r, row) in oracle.iter().enumerate() {
            for (c, &want) in row.iter().enumerate() {
                prop_assert_eq!(mask.entries()[[r, c]], want, "({}, {})", r, c);
            }
        }
    }

    #[test]
    fn ones_count_is_generated_minus_overflow((l, e, bw, ov) in grid_case()) {
        let spec = MaskSpec::new(bw, ov).unwrap();
        let mask = build_mask(l, e, spec).unwrap();
        let step = spec.band_step(l);
        let g_max = band_count(l, e, &spec);
        let overflow = (1..=g_max)
            .flat_map(|g| (0..bw).map(move |a| a + (g - 1) * step))
            .filter(|&lx| lx >= l * e)
            .count();
        prop_assert_eq!(mask.count_ones(), bw * g_max - overflow);
    }

    #[test]
    fn columns_hold_contiguous_runs((l, e, bw, ov) in grid_case()) {
        // A band can wrap from the bottom of one column to the top of the
        // next, so each column has at most two runs: one touching row 0 and
        // one elsewhere. Since step > l, no column holds pieces of more than
        // two bands.
        let mask = build_mask(l, e, MaskSpec::new(bw, ov).unwrap()).unwrap();
        for c in 0..e {
            let col: Vec<u8> = (0..l).map(|r| mask.entries()[[r, c]]).collect();
            let starts = (0..l).filter(|&r| col[r] == 1 && (r == 0 || col[r - 1] == 0)).count();
            prop_assert!(starts <= 2, "column {} = {:?}", c, col);
            if starts == 2 {
                prop_assert_eq!(col[0], 1);
            }
        }
    }

    #[test]
    fn apply_mask_is_idempotent((l, e, bw, ov) in grid_case(), seed in any::<u64>()) {
        let mask = build_mask(l, e, MaskSpec::new(bw, ov).unwrap()).unwrap();
        let mut state = seed | 1;
        let w = Array2::from_shape_simple_fn((l, e), || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 2001) as f64 / 1000.0 - 1.0
        });
        let once = apply_mask(&w, &mask).unwrap();
        prop_assert_eq!(apply_mask(&once, &mask).unwrap(), once);
    }

    #[test]
    fn deterministic((l, e, bw, ov) in grid_case()) {
        let spec = MaskSpec::new(bw, ov).unwrap();
        prop_assert_eq!(build_mask(l, e, spec).unwrap(), build_mask(l, e, spec).unwrap());
    }
}

#[test]
fn sparse_neuron_coverage() {
    let mask = build_mask(9, 8, MaskSpec::new(3, -1).unwrap()).unwrap();
    let rows_of = |c: usize| (0..9).filter(|&r| mask.get(r, c)).collect::<Vec<_>>();
    // The 7th neuron sees only the first feature; the 4th sees the first two.
    assert_eq!(rows_of(6), vec![0]);
    assert_eq!(rows_of(3), vec![0, 1]);
}

#[test]
fn bandwidth_five_overlap_three() {
    let mask = build_mask(12, 10, MaskSpec::new(5, 3).unwrap()).unwrap();
    for j in 0..4 {
        let rows: Vec<usize> = (0..12).filter(|&r| mask.get(r, j)).collect();
        assert_eq!(rows, (2 * j..2 * j + 5).collect::<Vec<_>>());
    }
}
