//! Minimal reverse-mode differentiation over dense matrices, enough for the
//! configurator's policy network, plus a finite-difference checker and SGD.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_fraction, GradCheckReport, DEFAULT_FRACTION};
pub use graph::{softmax_values, Graph, Var, LOG_FLOOR};
pub use params::{ParameterStore, StepReport};
pub use tensor::Tensor;

pub(crate) use graph::sigmoid;

/// Inverse of softplus, used to initialise positive parameters.
pub fn softplus_inverse(y: f64) -> f64 {
    y.exp_m1().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::{Error, ShapeError};
    use proptest::prelude::*;

    fn store_with(entries: &[(&str, Tensor)]) -> ParameterStore {
        let mut s = ParameterStore::new(0);
        for (n, t) in entries {
            s.insert(n, t.clone());
        }
        s
    }

    #[test]
    fn attention_with_one_row_returns_value_row() {
        let mut g = Graph::new();
        let q = g.column(&[0.3, -1.2]);
        let k = g.constant(Tensor::new(1, 2, vec![2.0, 5.0]).unwrap());
        let v = g.constant(Tensor::new(1, 3, vec![7.0, -1.0, 0.5]).unwrap());
        let out = g.attention(q, k, v).unwrap();
        assert_eq!(g.value(out).data(), &[7.0, -1.0, 0.5]);
    }

    #[test]
    fn attention_matches_direct_formula() {
        let mut g = Graph::new();
        let q = g.column(&[1.0, 0.0]);
        let k = g.constant(Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let v = g.constant(Tensor::new(2, 1, vec![10.0, 20.0]).unwrap());
        let out = g.attention(q, k, v).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let w0 = s.exp() / (s.exp() + 1.0);
        let expected = 10.0 * w0 + 20.0 * (1.0 - w0);
        assert!((g.value(out).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn softmax_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.column(&[3.0; 5]);
        let y = g.softmax(x).unwrap();
        for p in g.value(y).data() {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_hand_product() {
        // [1 2 3; 4 5 6] × [7 8; 9 10; 11 12] = [58 64; 139 154]
        let a = Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a), g.constant(b));
        let c = g.matmul(va, vb).unwrap();
        assert_eq!(g.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = g.column(&[1.0, 2.0]);
        let b = g.column(&[1.0, 2.0, 3.0]);
        assert!(matches!(g.add(a, b), Err(ShapeError::Mismatch { .. })));
        assert!(matches!(g.matmul(a, b), Err(ShapeError::Mismatch { .. })));
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut store = store_with(&[("w", Tensor::new(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap())]);
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let loss = g.sum(w);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn sigmoid_chain_rule() {
        let (w0, c) = (0.7, 2.5);
        let mut store = store_with(&[("w", Tensor::scalar(w0))]);
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let s = g.sigmoid(w);
        let loss = g.scale(s, c);
        g.backward(loss, &mut store).unwrap();
        let sw = 1.0 / (1.0 + (-w0).exp());
        assert!((store.grad("w").unwrap().item() - c * sw * (1.0 - sw)).abs() < 1e-15);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut store = store_with(&[("w", Tensor::column(vec![1.0, 2.0]))]);
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        assert!(g.backward(w, &mut store).is_err());
    }

    #[test]
    fn quadratic_grad_check_is_tight() {
        let mut store = ParameterStore::new(9);
        store.init_uniform("w", 4, 5);
        let report = grad_check_fraction(
            |s, g| {
                let w = g.param(s, "w")?;
                let sq = g.mul(w, w)?;
                Ok(g.sum(sq))
            },
            &store,
            1e-5,
            1e-7,
            1,
            1.0,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.max_rel_err < 1e-7);
        assert_eq!(report.checked, 20);
    }

    #[test]
    fn dead_relu_has_matching_zero_grads() {
        let store = store_with(&[("w", Tensor::column(vec![-1.0, -2.0, -0.5]))]);
        let report = grad_check_fraction(
            |s, g| {
                let w = g.param(s, "w")?;
                let r = g.relu(w);
                Ok(g.sum(r))
            },
            &store,
            1e-5,
            1e-4,
            0,
            1.0,
        )
        .unwrap();
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn grad_check_rejects_non_finite() {
        let store = store_with(&[("w", Tensor::scalar(1.0))]);
        let res = grad_check(
            |s, g| {
                let w = g.param(s, "w")?;
                Ok(g.scale(w, f64::INFINITY))
            },
            &store,
            1e-5,
            1e-4,
            0,
        );
        assert!(matches!(res, Err(Error::Numerics(_))));
    }

    #[test]
    fn log_is_floored() {
        let mut g = Graph::new();
        let x = g.column(&[0.0, 1e-20, 1.0]);
        let y = g.log(x);
        let v = g.value(y).data();
        assert_eq!(v[0], LOG_FLOOR.ln());
        assert_eq!(v[1], LOG_FLOOR.ln());
        assert_eq!(v[2], 0.0);
    }

    /// Random composite exercising every differentiable op.
    fn composite(s: &ParameterStore, g: &mut Graph) -> Result<Var, Error> {
        let a = g.param(s, "a")?; // 3x4
        let x = g.param(s, "x")?; // 4x1
        let b = g.param(s, "b")?; // 3x1
        let k = g.param(s, "k")?; // 1x1
        let keys = g.param(s, "keys")?; // 2x3
        let vals = g.param(s, "vals")?; // 2x3
        let ax = g.matmul(a, x)?;
        let h = g.add(ax, b)?;
        let hs = g.scale_by(h, k)?;
        let sg = g.sigmoid(hs);
        let rl = g.relu(h);
        let sp = g.softplus(h);
        let m = g.mean(&[sg, rl, sp])?;
        let att = g.attention(m, keys, vals)?;
        let cat = g.concat(&[att, b])?;
        let sm = g.softmax(cat)?;
        let p = g.pick(sm, 1)?;
        let lp = g.log(p);
        let d = g.dot(att, m)?;
        let e = g.exp(d);
        let c = g.clamp(e, 0.0, 50.0);
        let top = g.rows(sm, 2)?;
        let ts = g.sum(top);
        let diff = g.sub(c, ts)?;
        let prod = g.mul(diff, lp)?;
        let xt = g.transpose(x);
        let xx = g.matmul(xt, x)?;
        let out = g.add(prod, xx)?;
        Ok(g.offset(out, 0.25))
    }

    fn composite_store(seed: u64) -> ParameterStore {
        let mut s = ParameterStore::new(seed);
        s.init_uniform("a", 3, 4);
        s.init_uniform("x", 4, 1);
        s.init_uniform("b", 3, 1);
        s.init_uniform("k", 1, 1);
        s.init_uniform("keys", 2, 3);
        s.init_uniform("vals", 2, 3);
        s
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn every_op_passes_grad_check(seed in 0u64..1_000_000) {
            let store = composite_store(seed);
            let report = grad_check_fraction(composite, &store, 1e-5, 1e-4, seed, 1.0).unwrap();
            prop_assert!(report.passed, "{:?}", report);
        }

        #[test]
        fn softmax_sums_to_one(values in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let mut g = Graph::new();
            let x = g.column(&values);
            let y = g.softmax(x).unwrap();
            let total: f64 = g.value(y).data().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn sigmoid_open_unit_interval(x in -30.0f64..30.0) {
            let s = sigmoid(x);
            prop_assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn repeated_backward_is_bit_identical() {
        let run = || {
            let mut store = composite_store(77);
            let mut g = Graph::new();
            let loss = composite(&store, &mut g).unwrap();
            g.backward(loss, &mut store).unwrap();
            store
                .names()
                .flat_map(|n| store.grad(n).unwrap().data().to_vec())
                .map(f64::to_bits)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn softplus_inverse_round_trip() {
        assert!((graph::softplus(softplus_inverse(1.0)) - 1.0).abs() < 1e-15);
    }
}
