use dgq_core::tensorio::{axis_minmax, load_tensor, read_shape, save_tensor, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_finite(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| loop {
            let v = f32::from_bits(rng.gen());
            if v.is_finite() {
                break v;
            }
        })
        .collect()
}

#[test]
fn thousand_random_floats_roundtrip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = Tensor::new(vec![10, 4, 25], random_finite(&mut rng, 1000)).unwrap();
    let path = dir.path().join("t.npy");
    save_tensor(&t, &path).unwrap();
    let back = load_tensor(&path).unwrap();
    assert_eq!(back.shape(), t.shape());
    let same = back
        .data()
        .iter()
        .zip(t.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    assert!(same);
    // payload bytes are the little-endian values verbatim
    let raw = std::fs::read(&path).unwrap();
    let payload = &raw[raw.len() - 4000..];
    let expected: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(payload, &expected[..]);
}

#[test]
fn million_element_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<f32> = (0..1_000_000).map(|i| (i as f32).sin()).collect();
    let t = Tensor::new(vec![1000, 1000], data).unwrap();
    let path = dir.path().join("big.npy");
    save_tensor(&t, &path).unwrap();
    assert_eq!(read_shape(&path).unwrap(), vec![1000, 1000]);
    assert_eq!(load_tensor(&path).unwrap(), t);
}

#[test]
fn unwritable_destination_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::scalar(1.0).unwrap();
    let err = save_tensor(&t, dir.path().join("missing").join("t.npy")).unwrap_err();
    assert!(!err.is_validation());
    assert!(err.to_string().contains("missing"));
}

fn tensor() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(1usize..5, 1..=4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(-1e3f32..1e3, n)
            .prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
    })
}

proptest! {
    #[test]
    fn axis_minmax_brackets_every_slice(t in tensor(), axis_seed in 0usize..4) {
        let dim = axis_seed % t.rank();
        let (lo, hi) = axis_minmax(&t, dim).unwrap();
        prop_assert_eq!(lo.len(), t.shape()[dim]);
        let inner: usize = t.shape()[dim + 1..].iter().product();
        let n = t.shape()[dim];
        for (i, &v) in t.data().iter().enumerate() {
            let j = (i / inner) % n;
            prop_assert!(lo[j] <= v && v <= hi[j]);
        }
        for j in 0..n {
            prop_assert!(lo[j] <= hi[j]);
        }
        // extremes over all slices are the tensor's extremes
        let gmin = lo.iter().copied().fold(f32::INFINITY, f32::min);
        let gmax = hi.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        prop_assert_eq!(Some(gmin), t.min());
        prop_assert_eq!(Some(gmax), t.max());
    }

    #[test]
    fn save_load_is_identity(t in tensor()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.npy");
        save_tensor(&t, &path).unwrap();
        prop_assert_eq!(load_tensor(&path).unwrap(), t);
    }
}
