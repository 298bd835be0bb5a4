use proptest::prelude::*;

use fedcode::accounting::codec::{BitReader, BitWriter};
use fedcode::accounting::index_bits;
use fedcode::clustering::{
    compress, decompress, kmeans_fit, snap, ClusterMethod, Codebook, KMeansConfig,
};
use fedcode::FlatParams;

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![-5.0f64..5.0, (-3i32..3).prop_map(|i| i as f64)],
        1..200,
    )
}

fn lloyd(k: usize) -> KMeansConfig {
    KMeansConfig {
        method: ClusterMethod::Lloyd,
        max_iterations: 50,
        ..KMeansConfig::with_k(k)
    }
}

proptest! {
    #[test]
    fn lloyd_inertia_never_increases(v in values(), k in 1usize..20) {
        let fit = kmeans_fit(&FlatParams::new(v).unwrap(), &lloyd(k)).unwrap();
        for w in fit.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", fit.inertia_history);
        }
    }

    #[test]
    fn centers_sorted_and_within_range(v in values(), k in 1usize..40, exact in any::<bool>()) {
        let cfg = if exact { KMeansConfig::with_k(k) } else { lloyd(k) };
        let fit = kmeans_fit(&FlatParams::new(v.clone()).unwrap(), &cfg).unwrap();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let c = fit.codebook.centers();
        prop_assert!(c.len() <= k);
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(c.iter().all(|&x| lo <= x && x <= hi));
    }

    #[test]
    fn exact_never_worse_than_lloyd(v in values(), k in 1usize..8) {
        let params = FlatParams::new(v).unwrap();
        let exact = kmeans_fit(&params, &KMeansConfig::with_k(k)).unwrap();
        let approx = kmeans_fit(&params, &lloyd(k)).unwrap();
        prop_assert!(exact.inertia <= approx.inertia + 1e-9);
    }

    #[test]
    fn snap_lands_on_nearest_center_and_is_idempotent(
        v in values(),
        centers in prop::collection::vec(-6.0f64..6.0, 1..30),
    ) {
        let cb = Codebook::from_unsorted(centers).unwrap();
        let params = FlatParams::new(v).unwrap();
        let snapped = snap(&params, &cb);
        prop_assert_eq!(snapped.len(), params.len());
        for (&x, &s) in params.as_slice().iter().zip(snapped.as_slice()) {
            let best = cb.centers().iter().map(|c| (x - c).abs()).fold(f64::INFINITY, f64::min);
            prop_assert_eq!((x - s).abs(), best);
        }
        prop_assert_eq!(snap(&snapped, &cb), snapped.clone());
        prop_assert_eq!(decompress(&compress(&params, &cb), &cb).unwrap(), snapped);
    }

    #[test]
    fn fit_is_deterministic(v in values(), k in 1usize..10) {
        let params = FlatParams::new(v).unwrap();
        prop_assert_eq!(
            kmeans_fit(&params, &KMeansConfig::with_k(k)).unwrap(),
            kmeans_fit(&params, &KMeansConfig::with_k(k)).unwrap()
        );
    }

    #[test]
    fn bit_packing_is_lossless(k in 1u64..=65_536, seed in any::<u64>(), n in 1usize..300) {
        let width = index_bits(k);
        let indices: Vec<u32> = (0..n as u64)
            .map(|i| (seed.wrapping_mul(i + 1).rotate_left(17) % k) as u32)
            .collect();
        let mut bytes = Vec::new();
        let mut w = BitWriter::new(&mut bytes);
        for &i in &indices {
            w.put(i, width);
        }
        w.finish();
        prop_assert_eq!(bytes.len() as u64, (n as u64 * width as u64).div_ceil(8));
        let mut r = BitReader::new(&bytes);
        let back: Vec<u32> = (0..n).map(|_| r.take(width)).collect();
        prop_assert_eq!(back, indices);
    }
}

#[test]
fn shrinks_when_k_exceeds_distinct_values() {
    let fit = kmeans_fit(
        &FlatParams::new(vec![0.5, 0.5, -1.0, 2.0]).unwrap(),
        &KMeansConfig::with_k(64),
    )
    .unwrap();
    assert!(fit.shrunk);
    assert_eq!(fit.codebook.centers(), &[-1.0, 0.5, 2.0]);
    assert_eq!(fit.inertia, 0.0);
}
