use fcadapt::{Tape, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor::new(&[rows, cols], d).unwrap())
}

fn value(f: impl for<'t> Fn(&'t Tape) -> fcadapt::Result<fcadapt::Var<'t>>) -> Tensor {
    let tape = Tape::new();
    let out = f(&tape).unwrap();
    let v = out.value().clone();
    v
}

proptest! {
    #[test]
    fn matmul_is_associative(
        (a, b, c) in (1usize..5, 1usize..5, 1usize..5, 1usize..5)
            .prop_flat_map(|(m, k, n, p)| (matrix(m, k), matrix(k, n), matrix(n, p)))
    ) {
        let left = value(|t| t.constant(a.clone()).matmul(&t.constant(b.clone()))?.matmul(&t.constant(c.clone())));
        let right = value(|t| t.constant(a.clone()).matmul(&t.constant(b.clone()).matmul(&t.constant(c.clone()))?));
        prop_assert_eq!(left.shape(), right.shape());
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() < 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn softmax_rows_are_distributions(x in (1usize..5, 1usize..7).prop_flat_map(|(m, n)| matrix(m, n)), shift in -500.0f64..500.0) {
        let p = value(|t| t.constant(x.clone()).softmax_rows());
        let q = value(|t| t.constant(x.clone()).add_scalar(shift).softmax_rows());
        let (rows, _) = p.dims2().unwrap();
        for r in 0..rows {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.row(r).iter().all(|v| *v > 0.0));
        }
        for (a, b) in p.data().iter().zip(q.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_twice_is_identity(x in (1usize..5, 1usize..5).prop_flat_map(|(m, n)| matrix(m, n))) {
        let y = value(|t| t.constant(x.clone()).transpose()?.transpose());
        prop_assert_eq!(y, x);
    }

    #[test]
    fn layer_norm_rows_are_standardized(x in (1usize..4, 2usize..8).prop_flat_map(|(m, n)| matrix(m, n))) {
        let n = x.shape()[1];
        let y = value(|t| {
            let g = t.constant(Tensor::filled(&[n], 1.0));
            let b = t.constant(Tensor::zeros(&[n]));
            t.constant(x.clone()).layer_norm(&g, &b)
        });
        for r in 0..x.shape()[0] {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-9);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n as f64;
            prop_assert!(var <= 1.0 + 1e-9);
        }
    }
}
