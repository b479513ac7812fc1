mod common;

use ascmh::retrieval::{self, average_precision, CodeSet, RelevanceJudge};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn codes_from(bits: &[bool], n: usize, r: usize) -> (CodeSet, DMatrix<f64>) {
    let signs = DMatrix::from_fn(n, r, |i, j| if bits[i * r + j] { 1.0 } else { -1.0 });
    (CodeSet::from_signs(&signs), signs)
}

proptest! {
    #[test]
    fn hamming_is_a_metric(r in 1usize..150, bits in prop::collection::vec(any::<bool>(), 3 * 150)) {
        let (codes, _) = codes_from(&bits, 3, r);
        let d = |i, j| codes.hamming(i, &codes, j).unwrap();
        prop_assert_eq!(d(0, 0), 0);
        prop_assert_eq!(d(0, 1), d(1, 0));
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2));
    }

    #[test]
    fn packed_distance_equals_unpacked(r in 1usize..200, seed in any::<u64>()) {
        let mut g = rng(seed);
        let a = signs(4, r, &mut g);
        let b = signs(5, r, &mut g);
        let (ca, cb) = (CodeSet::from_signs(&a), CodeSet::from_signs(&b));
        let brute = brute_distances(&a, &b);
        for i in 0..4 {
            for j in 0..5 {
                prop_assert_eq!(ca.hamming(i, &cb, j).unwrap(), brute[(i, j)]);
            }
        }
        prop_assert_eq!(ca.to_signs(), a);
    }

    #[test]
    fn ranking_is_a_sorted_permutation(seed in any::<u64>(), r in 1usize..12) {
        let mut g = rng(seed);
        let q = signs(1, r, &mut g);
        let db = signs(200, r, &mut g);
        let ranked = retrieval::rank_by_hamming(CodeSet::from_signs(&q).code(0), &CodeSet::from_signs(&db)).unwrap();
        let dist: Vec<u32> = brute_distances(&q, &db).row(0).iter().copied().collect();
        prop_assert_eq!(ranked, brute_ranking(&dist));
    }

    #[test]
    fn ap_is_bounded(rel in prop::collection::vec(any::<bool>(), 1..40)) {
        let n = rel.len();
        let db_labels = DMatrix::from_fn(1, n, |_, j| if rel[j] { 1.0 } else { 0.0 });
        let judge = RelevanceJudge::from_matrices(&DMatrix::from_element(1, 1, 1.0), &db_labels).unwrap();
        let ranked: Vec<usize> = (0..n).collect();
        let ap = average_precision(&ranked, &judge, 0, n);
        prop_assert!((0.0..=1.0).contains(&ap.ap));
        let hits = rel.iter().filter(|&&r| r).count();
        let leading = rel.iter().take_while(|&&r| r).count();
        prop_assert_eq!(ap.ap == 1.0, hits > 0 && leading == hits);
    }
}

#[test]
fn codes_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.abc");
    let codes = CodeSet::random(37, 70, 5);
    retrieval::write_codes(&codes, &path).unwrap();
    assert_eq!(retrieval::read_codes(&path).unwrap(), codes);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 4 + 8 + 4 + 37 * 2 * 8);
    assert_eq!(&bytes[..4], b"ABC1");
}

#[test]
fn top_n_precision_of_random_codes_is_near_base_rate() {
    // 2 balanced classes: every precision is a binomial proportion around 0.5
    let q = CodeSet::random(200, 16, 1);
    let db = CodeSet::random(400, 16, 2);
    let ql = DMatrix::from_fn(2, 200, |i, j| if j % 2 == i { 1.0 } else { 0.0 });
    let dl = DMatrix::from_fn(2, 400, |i, j| if j % 2 == i { 1.0 } else { 0.0 });
    let judge = RelevanceJudge::from_matrices(&ql, &dl).unwrap();
    let curve = retrieval::topn_precision_curve(&q, &db, &judge, &[50, 100]).unwrap();
    for (n, p) in curve {
        // std of the mean over 200 queries of Binomial(n, 0.5)/n, widened 5x
        let sd = (0.25 / (n as f64 * 200.0)).sqrt();
        assert!((p - 0.5).abs() < 5.0 * sd + 0.02, "p@{n} = {p}");
    }
}
