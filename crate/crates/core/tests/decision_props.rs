mod common;

use common::{build, criteria, matrix_parts, position};
use crowd_core::decision::{
    aras_scores, edas_scores, entropy_weights, mabac_scores, DecisionMatrix, McdmMethod, WeightVector,
};
use proptest::prelude::*;

const METHODS: [McdmMethod; 3] = [McdmMethod::Edas, McdmMethod::Aras, McdmMethod::Mabac];

proptest! {
    #[test]
    fn weights_are_a_distribution((rows, benefit) in matrix_parts()) {
        let w = entropy_weights(&build(&rows, &benefit)).unwrap();
        prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(w.as_slice().iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn scores_are_bounded((rows, benefit) in matrix_parts()) {
        let m = build(&rows, &benefit);
        let w = entropy_weights(&m).unwrap();
        for (_, s) in edas_scores(&m, &w).unwrap().scores {
            prop_assert!((0.0..=1.0).contains(&s));
        }
        for (_, s) in aras_scores(&m, &w).unwrap().scores {
            prop_assert!(s > 0.0 && s <= 1.0 + 1e-12);
        }
        for (_, s) in mabac_scores(&m, &w).unwrap().scores {
            prop_assert!(s.is_finite());
        }
    }

    #[test]
    fn column_scaling_changes_nothing(
        (rows, benefit) in matrix_parts(),
        col in any::<prop::sample::Index>(),
        c in 0.01f64..100.0,
    ) {
        let m = build(&rows, &benefit);
        let j = col.index(benefit.len());
        let scaled_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().enumerate().map(|(k, x)| if k == j { x * c } else { *x }).collect())
            .collect();
        let s = build(&scaled_rows, &benefit);
        let (w, ws) = (entropy_weights(&m).unwrap(), entropy_weights(&s).unwrap());
        for (a, b) in w.as_slice().iter().zip(ws.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        for method in METHODS {
            prop_assert_eq!(method.rank(&m, &w).unwrap().order, method.rank(&s, &w).unwrap().order);
        }
    }

    #[test]
    fn dominant_row_ranks_higher(
        (rows, benefit) in matrix_parts(),
        pick in any::<prop::sample::Index>(),
        strict in any::<prop::sample::Index>(),
        gains in prop::collection::vec(0.0f64..0.5, 6),
    ) {
        let b = pick.index(rows.len());
        let s = strict.index(benefit.len());
        let better: Vec<f64> = rows[b]
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let g = if j == s { gains[j] + 0.01 } else { gains[j] };
                if benefit[j] { x * (1.0 + g) } else { x / (1.0 + g) }
            })
            .collect();
        let mut all = rows.clone();
        all.push(better);
        let m = build(&all, &benefit);
        let w = entropy_weights(&m).unwrap();
        let a_id = format!("a{}", all.len() - 1);
        let b_id = format!("a{b}");
        for method in METHODS {
            let r = method.rank(&m, &w).unwrap();
            prop_assert!(position(&r, &a_id) < position(&r, &b_id), "{:?}: {:?}", method, r);
        }
    }

    #[test]
    fn identical_rows_order_by_id(
        (rows, benefit) in matrix_parts(),
        src in any::<prop::sample::Index>(),
        dst in any::<prop::sample::Index>(),
    ) {
        let mut rows = rows;
        let (i, j) = (src.index(rows.len()), dst.index(rows.len()));
        prop_assume!(i != j);
        rows[j] = rows[i].clone();
        let m = build(&rows, &benefit);
        let w = entropy_weights(&m).unwrap();
        let (lo, hi) = (format!("a{}", i.min(j)), format!("a{}", i.max(j)));
        for method in METHODS {
            let r = method.rank(&m, &w).unwrap();
            prop_assert!(position(&r, &lo) < position(&r, &hi));
        }
    }

    #[test]
    fn row_permutation_keeps_scores(
        (rows, benefit) in matrix_parts(),
        perm_seed in any::<u64>(),
    ) {
        let m = build(&rows, &benefit);
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        let mut s = perm_seed;
        for k in (1..idx.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(k, (s >> 33) as usize % (k + 1));
        }
        let p = DecisionMatrix::new(
            idx.iter().map(|i| format!("a{i}")).collect(),
            criteria(&benefit),
            idx.iter().map(|i| rows[*i].clone()).collect(),
        )
        .unwrap();
        let (w, wp) = (entropy_weights(&m).unwrap(), entropy_weights(&p).unwrap());
        for method in METHODS {
            let (r, rp) = (method.rank(&m, &w).unwrap(), method.rank(&p, &wp).unwrap());
            for (id, score) in &r.scores {
                prop_assert!((rp.score_of(id).unwrap() - score).abs() <= 1e-9);
            }
            prop_assert_eq!(&r.order, &rp.order);
        }
    }

    #[test]
    fn explicit_weights_must_match_width(
        (rows, benefit) in matrix_parts(),
    ) {
        let m = build(&rows, &benefit);
        let w = WeightVector::uniform(benefit.len() + 1);
        for method in METHODS {
            prop_assert!(method.rank(&m, &w).is_err());
        }
    }
}
