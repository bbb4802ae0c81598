use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Independent oracle: index arithmetic written against the formula with
/// signed offsets, no shared helpers with the library kernels.
fn naive_conv(u: &Tensor<f64>, s: &Tensor<f64>) -> Tensor<f64> {
    let (kw, kh, m_in, m_out) = (u.shape()[0], u.shape()[1], u.shape()[2], u.shape()[3]);
    let (w, n) = (s.shape()[0], s.shape()[1]);
    let mut out = Tensor::zeros(&[w, n, m_out]);
    let (hw, hh) = (kw as i64 / 2, kh as i64 / 2);
    for x in 0..w as i64 {
        for y in 0..n as i64 {
            for i in 0..m_out {
                let mut total = 0.0;
                for du in -hw..=hw {
                    for dv in -hh..=hh {
                        let (sx, sy) = (x + du, y + dv);
                        let inside = sx >= 0 && sy >= 0 && sx < w as i64 && sy < n as i64;
                        for c in 0..m_in {
                            let sv = if inside {
                                s.get(&[sx as usize, sy as usize, c]).unwrap()
                            } else {
                                0.0
                            };
                            total += sv * u.get(&[(du + hw) as usize, (dv + hh) as usize, c, i]).unwrap();
                        }
                    }
                }
                out.set(&[x as usize, y as usize, i], total).unwrap();
            }
        }
    }
    out
}

fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (p, q, r) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(&[p, r]);
    for i in 0..p {
        for j in 0..r {
            let mut acc = 0.0;
            for k in 0..q {
                acc += a.get(&[i, k]).unwrap() * b.get(&[k, j]).unwrap();
            }
            out.set(&[i, j], acc).unwrap();
        }
    }
    out
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn new_rejects_bad_length() {
    assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
    assert!(Tensor::<f64>::new(&[2, 0], vec![]).is_err());
}

#[test]
fn out_of_range_index_is_error() {
    let t = Tensor::<f64>::zeros(&[2, 3]);
    assert!(matches!(t.get(&[2, 0]), Err(Error::IndexOutOfRange { .. })));
    assert!(t.get(&[0]).is_err());
}

#[test]
fn conv_zero_kernel_gives_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = random(&[3, 4, 2], &mut rng);
    let u = Tensor::zeros(&[3, 3, 2, 2]);
    assert!(s.conv_same(&u).unwrap().data().iter().all(|&x| x == 0.0));
}

#[test]
fn conv_delta_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random(&[4, 5, 3], &mut rng);
    let u = KernelBank::delta(3, 3, 3).unwrap();
    assert_eq!(u.conv(&s).unwrap(), s);
}

#[test]
fn conv_all_ones_two_by_two() {
    let s = Tensor::<f64>::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let u = Tensor::ones(&[3, 3, 1, 1]);
    let expected = naive_conv(&u, &s);
    assert_eq!(expected.data(), &[10.0, 10.0, 10.0, 10.0]);
    assert_eq!(s.conv_same(&u).unwrap(), expected);
}

#[test]
fn conv_rejects_even_kernels_and_channel_mismatch() {
    let s = Tensor::<f64>::zeros(&[2, 2, 3]);
    assert!(matches!(s.conv_same(&Tensor::zeros(&[2, 3, 3, 3])), Err(Error::EvenKernel { .. })));
    assert!(matches!(s.conv_same(&Tensor::zeros(&[3, 3, 2, 2])), Err(Error::Shape { .. })));
    assert!(KernelBank::<f64>::zeros(4, 3, 2).is_err());
}

#[test]
fn kernel_bank_param_count() {
    let u = KernelBank::<f64>::zeros(3, 3, 5).unwrap();
    assert_eq!(u.param_count(), 3 * 3 * 5 * 5);
}

#[test]
fn conv_matches_naive_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let (w, n, m) = (rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=4));
        let s = random(&[w, n, m], &mut rng);
        let u = random(&[3, 3, m, m], &mut rng);
        assert!(max_diff(&s.conv_same(&u).unwrap(), &naive_conv(&u, &s)) < 1e-10);
    }
}

#[test]
fn conv_blocked_is_bit_compatible_with_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let (w, n, m) = (rng.gen_range(1..=6), rng.gen_range(1..=12), rng.gen_range(1..=20));
        let s = random(&[w, n, m], &mut rng);
        let u = random(&[3, 3, m, m], &mut rng);
        assert_eq!(s.conv_same(&u).unwrap(), s.conv_same_reference(&u).unwrap());
    }
}

#[test]
fn matmul_examples() {
    let a = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = Tensor::from_f64(&[2, 1], &[5.0, 6.0]).unwrap();
    assert_eq!(a.matmul(&b).unwrap().data(), &[17.0, 39.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = random(&[3, 4], &mut rng);
    assert_eq!(Tensor::identity(3).matmul(&b).unwrap(), b);

    let a = random(&[7, 5], &mut rng);
    let b = random(&[5, 3], &mut rng);
    assert!(max_diff(&a.matmul(&b).unwrap(), &naive_matmul(&a, &b)) < 1e-12);
    assert!(b.matmul(&a).is_err());
}

#[test]
fn linear_is_matmul_with_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[4, 6], &mut rng);
    let w = random(&[3, 6], &mut rng);
    let expected = naive_matmul(&x, &w.transpose2().unwrap());
    assert!(max_diff(&x.linear(&w).unwrap(), &expected) < 1e-12);
    let v = x.column_free_row(1);
    let y = v.linear(&w).unwrap();
    assert_eq!(y.shape(), &[3]);
    assert!((y.data()[2] - expected.get(&[1, 2]).unwrap()).abs() < 1e-12);
}

impl Tensor<f64> {
    fn column_free_row(&self, i: usize) -> Tensor<f64> {
        let q = self.shape()[1];
        Tensor::new(&[q], self.data()[i * q..(i + 1) * q].to_vec()).unwrap()
    }
}

#[test]
fn elementwise_examples() {
    let z = Tensor::<f64>::zeros(&[3]);
    assert_eq!(Tensor::elementwise(Elementwise::Sigmoid, &[&z]).unwrap().data(), &[0.5; 3]);
    assert_eq!(Tensor::elementwise(Elementwise::Tanh, &[&z]).unwrap().data(), &[0.0; 3]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = random(&[2, 3, 4], &mut rng);
    assert_eq!(s.mul(&Tensor::ones(&[2, 3, 4])).unwrap(), s);
    assert!(s.add(&Tensor::ones(&[3, 4])).is_err());
    assert!(Tensor::elementwise(Elementwise::Add, &[&s]).is_err());
}

#[test]
fn sigmoid_saturates_without_overflow() {
    let t = Tensor::<f64>::from_f64(&[4], &[30.0, -30.0, 700.0, -700.0]).unwrap().sigmoid();
    let d = t.data();
    assert!((d[0] - 1.0).abs() < 1e-12 && d[1].abs() < 1e-12);
    assert!(d.iter().all(|x| x.is_finite()));
    assert_eq!(d[2], 1.0);
    assert!(d[3] >= 0.0 && d[3] < 1e-300);
}

#[test]
fn add_bias_broadcasts_last_dim_only() {
    let x = Tensor::<f64>::zeros(&[2, 2, 3]);
    let b = Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
    let y = x.add_bias(&b).unwrap();
    assert_eq!(&y.data()[9..], &[1.0, 2.0, 3.0]);
    assert!(x.add_bias(&Tensor::zeros(&[2])).is_err());
}

#[test]
fn softmax_examples() {
    let t = Tensor::<f64>::full(&[4], 0.7).softmax().unwrap();
    assert_eq!(t.data(), &[0.25; 4]);
    let x = Tensor::<f64>::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
    let p = x.softmax().unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    for (i, v) in [1.0f64, 2.0, 3.0].iter().enumerate() {
        assert!((p.data()[i] - v.exp() / z).abs() < 1e-12);
    }
    let nan = Tensor::<f64>::from_f64(&[2], &[f64::NAN, 0.0]).unwrap();
    assert!(matches!(nan.softmax(), Err(Error::NonFinite { .. })));
}

#[test]
fn columns_round_trip_and_isolation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = random(&[3, 5, 4], &mut rng);
    let v = random(&[4], &mut rng);
    let mut t = s.clone();
    t.write_column(2, &v).unwrap();
    assert_eq!(t.column(2).unwrap(), v);
    for k in [0, 1, 3, 4] {
        assert_eq!(t.column(k).unwrap(), s.column(k).unwrap());
    }
    // other width rows untouched
    assert_eq!(&t.data()[20..], &s.data()[20..]);
    assert!(t.column(5).is_err());
    assert!(t.write_column(1, &Tensor::zeros(&[3])).is_err());
}

proptest! {
    #[test]
    fn conv_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, n, m) = (rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=4));
        let u = random(&[3, 3, m, m], &mut rng);
        let s1 = random(&[w, n, m], &mut rng);
        let s2 = random(&[w, n, m], &mut rng);
        let lhs = s1.scale(a).add(&s2.scale(b)).unwrap().conv_same(&u).unwrap();
        let rhs = s1.conv_same(&u).unwrap().scale(a).add(&s2.conv_same(&u).unwrap().scale(b)).unwrap();
        prop_assert!(max_diff(&lhs, &rhs) < 1e-10);
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(
        logits in proptest::collection::vec(-50.0f64..50.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let x = Tensor::<f64>::new(&[logits.len()], logits.clone()).unwrap();
        let p = x.softmax().unwrap();
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
        let q = x.map(|v| v + shift).softmax().unwrap();
        prop_assert!(max_diff(&p, &q) < 1e-12);
    }
}
