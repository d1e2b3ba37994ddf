use rayon::prelude::*;

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

// Below this many multiply-adds the rayon fork/join costs more than it saves.
const PAR_WORK: usize = 1 << 15;

fn for_rows<T: Scalar>(
    out: &mut [T],
    row_len: usize,
    work: usize,
    f: impl Fn(usize, &mut [T]) + Sync + Send,
) {
    if work >= PAR_WORK {
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    } else {
        out.chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`
pub(crate) fn gemm<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for_rows(out, n, m * k * n, |i, row| {
        row.iter_mut().for_each(|v| *v = T::zero());
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for_rows(out, n, m * k * n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *o = acc;
        }
    });
}

/// `out[k×n] = a[m×k]ᵀ · c[m×n]`
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], c: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(c.len(), m * n);
    for_rows(out, n, m * k * n, |p, row| {
        row.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..m {
            let av = a[i * k + p];
            let c_row = &c[i * n..(i + 1) * n];
            for (o, &cv) in row.iter_mut().zip(c_row) {
                *o += av * cv;
            }
        }
    });
}

/// Matrix product of two rank-2 tensors.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0) {
        return Err(Error::shape(format!(
            "matmul {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
    let mut out = vec![T::zero(); m * n];
    gemm(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new([m, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
        let mut out = Tensor::zeros([m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.get(&[i, p]) * b.get(&[p, j]);
                }
                out.set(&[i, j], acc);
            }
        }
        out
    }

    fn random(rng: &mut ChaCha8Rng, shape: [usize; 2]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_and_small_products() {
        let id = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new([2, 2], vec![1.5, -2.0, 3.0, 4.25]).unwrap();
        assert_eq!(matmul(&id, &m).unwrap(), m);

        let row = Tensor::new([1, 2], vec![1.0, 2.0]).unwrap();
        let col = Tensor::new([2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(matmul(&row, &col).unwrap().data(), &[11.0]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let a = Tensor::<f32>::zeros([2, 3]);
        let b = Tensor::<f32>::zeros([2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(m, k, n) in &[(5, 7, 3), (32, 32, 32), (1, 17, 9), (64, 40, 50)] {
            let a = random(&mut rng, [m, k]);
            let b = random(&mut rng, [k, n]);
            let fast = matmul(&a, &b).unwrap();
            let slow = naive(&a, &b);
            for (x, y) in fast.data().iter().zip(slow.data()) {
                assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn transposed_variants_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (m, k, n) = (6, 5, 4);
        let a = random(&mut rng, [m, k]);
        let b = random(&mut rng, [k, n]);
        let expected = naive(&a, &b);

        let bt = b.permute(&[1, 0]).unwrap();
        let mut out = vec![0.0; m * n];
        gemm_nt(a.data(), bt.data(), &mut out, m, k, n);
        assert!(
            Tensor::new([m, n], out)
                .unwrap()
                .max_abs_diff(&expected)
                .unwrap()
                < 1e-12
        );

        let at = a.permute(&[1, 0]).unwrap();
        let mut out = vec![0.0; m * n];
        gemm_tn(at.data(), b.data(), &mut out, k, m, n);
        assert!(
            Tensor::new([m, n], out)
                .unwrap()
                .max_abs_diff(&expected)
                .unwrap()
                < 1e-12
        );
    }
}
