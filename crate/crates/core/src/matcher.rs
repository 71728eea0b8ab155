//! Query-conditioned role to backbone matching inside the selected pool.

use serde::{Deserialize, Serialize};

use crate::catalog::BackboneProfile;
use crate::choice::Chooser;
use crate::diffcore::{Graph, ParameterStore, Tensor, Var};
use crate::embedding::EmbeddingStore;
use crate::error::{EmbeddingError, SelectError, ShapeError};

/// The three profile embeddings of one backbone, as `H × 1` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneEmbeddings {
    pub id: String,
    pub perf: Tensor,
    pub ptp: Tensor,
    pub ty: Tensor,
}

impl BackboneEmbeddings {
    pub fn from_profile(profile: &BackboneProfile, store: &EmbeddingStore) -> Result<Self, EmbeddingError> {
        let (perf, ptp, ty) = store.profile_embeddings(profile)?;
        Ok(Self {
            id: profile.id.clone(),
            perf: Tensor::column(perf.values().to_vec()),
            ptp: Tensor::column(ptp.values().to_vec()),
            ty: Tensor::column(ty.values().to_vec()),
        })
    }

    /// `[e_perf; e_ptp; e_type]`.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.perf.data().to_vec();
        v.extend_from_slice(self.ptp.data());
        v.extend_from_slice(self.ty.data());
        v
    }
}

/// Mean of the members' stacked profile embeddings.
pub fn pool_input(members: &[&BackboneEmbeddings]) -> Result<Tensor, SelectError> {
    let first = members.first().ok_or(SelectError::EmptyPool(0))?;
    let mut acc = first.stacked();
    for m in &members[1..] {
        let s = m.stacked();
        if s.len() != acc.len() {
            return Err(ShapeError::Mismatch {
                op: "pool_input",
                lhs: (acc.len(), 1),
                rhs: (s.len(), 1),
            }
            .into());
        }
        acc.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
    let n = members.len() as f64;
    Ok(Tensor::column(acc.into_iter().map(|x| x / n).collect()))
}

/// `u_m = w_u [e_perf; w_ct [e_ptp; e_type]]`.
pub fn backbone_repr(g: &mut Graph, params: &ParameterStore, b: &BackboneEmbeddings) -> Result<Var, ShapeError> {
    let w_ct = g.param(params, "w_ct")?;
    let w_u = g.param(params, "w_u")?;
    let perf = g.constant(b.perf.clone());
    let ptp = g.constant(b.ptp.clone());
    let ty = g.constant(b.ty.clone());
    let price_type = g.concat(&[ptp, ty])?;
    let ct = g.matmul(w_ct, price_type)?;
    let x = g.concat(&[perf, ct])?;
    g.matmul(w_u, x)
}

/// `v_i = w_v [r_i; q; g]` with `g` the projected pool context.
pub fn role_repr(g: &mut Graph, params: &ParameterStore, role: Var, query: Var, pool_ctx: Var) -> Result<Var, ShapeError> {
    let w_v = g.param(params, "w_v")?;
    let x = g.concat(&[role, query, pool_ctx])?;
    g.matmul(w_v, x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    /// Backbone id per role, in template order.
    pub assignment: Vec<String>,
    /// Chosen member index per role.
    pub choices: Vec<usize>,
    pub per_role_probs: Vec<Vec<f64>>,
    pub log_p_match: f64,
}

/// One categorical per role over `softmax_m ⟨v_i, u_m⟩`, drawn under label
/// `"match/<role_id>"`. Roles draw independently; a backbone may serve
/// several roles.
pub fn match_roles(
    g: &mut Graph,
    params: &ParameterStore,
    roles: &[(&str, Var)],
    members: &[&BackboneEmbeddings],
    query: Var,
    pool_ctx: Var,
    chooser: &mut dyn Chooser,
) -> Result<(MatchDecision, Var), SelectError> {
    if members.is_empty() {
        return Err(SelectError::EmptyPool(0));
    }
    if roles.is_empty() {
        return Err(SelectError::Invalid("no roles to match".into()));
    }
    let mut us = Vec::with_capacity(members.len());
    for m in members {
        us.push(backbone_repr(g, params, m)?);
    }
    let mut decision = MatchDecision {
        assignment: Vec::with_capacity(roles.len()),
        choices: Vec::with_capacity(roles.len()),
        per_role_probs: Vec::with_capacity(roles.len()),
        log_p_match: 0.0,
    };
    let mut log_terms = Vec::with_capacity(roles.len());
    for (role_id, r) in roles {
        let v = role_repr(g, params, *r, query, pool_ctx)?;
        let mut logits = Vec::with_capacity(us.len());
        for &u in &us {
            logits.push(g.dot(v, u)?);
        }
        let stacked = g.concat(&logits)?;
        let probs = g.softmax(stacked)?;
        let probs_vals = g.value(probs).data().to_vec();
        let k = chooser.categorical(&format!("match/{role_id}"), &probs_vals);
        let chosen = g.pick(probs, k)?;
        log_terms.push(g.log(chosen));
        decision.assignment.push(members[k].id.clone());
        decision.choices.push(k);
        decision.per_role_probs.push(probs_vals);
    }
    let all = g.concat(&log_terms)?;
    let log_p = g.sum(all);
    decision.log_p_match = g.scalar_value(log_p);
    Ok((decision, log_p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::{Greedy, Recorder, Replay, Sampler};
    use crate::diffcore::grad_check_fraction;
    use crate::error::Error;

    const H: usize = 2;
    const D: usize = 2;

    fn emb(id: &str, seed: f64) -> BackboneEmbeddings {
        let col = |k: f64| Tensor::column(vec![(seed * k).sin(), (seed * k + 1.0).cos()]);
        BackboneEmbeddings {
            id: id.into(),
            perf: col(1.0),
            ptp: col(2.0),
            ty: col(3.0),
        }
    }

    fn params(seed: u64) -> ParameterStore {
        let mut s = ParameterStore::new(seed);
        s.init_uniform("w_ct", H, 2 * H);
        s.init_uniform("w_u", D, 2 * H);
        s.init_uniform("w_v", D, 2 * H + D);
        s
    }

    fn zero_params() -> ParameterStore {
        let mut s = params(0);
        s.zero_values();
        s
    }

    #[test]
    fn zero_embeddings_give_zero_repr() {
        let z = BackboneEmbeddings {
            id: "z".into(),
            perf: Tensor::zeros(H, 1),
            ptp: Tensor::zeros(H, 1),
            ty: Tensor::zeros(H, 1),
        };
        let mut g = Graph::new();
        let u = backbone_repr(&mut g, &params(1), &z).unwrap();
        assert!(g.value(u).data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn backbone_repr_hand_arithmetic() {
        let mut s = ParameterStore::new(0);
        // w_ct = [1 0 0 1; 0 1 1 0], w_u = [1 1 0 0; 0 0 1 -1]
        s.insert("w_ct", Tensor::new(2, 4, vec![1., 0., 0., 1., 0., 1., 1., 0.]).unwrap());
        s.insert("w_u", Tensor::new(2, 4, vec![1., 1., 0., 0., 0., 0., 1., -1.]).unwrap());
        let b = BackboneEmbeddings {
            id: "b".into(),
            perf: Tensor::column(vec![2.0, 3.0]),
            ptp: Tensor::column(vec![5.0, 7.0]),
            ty: Tensor::column(vec![11.0, 13.0]),
        };
        let mut g = Graph::new();
        let u = backbone_repr(&mut g, &s, &b).unwrap();
        // ct = [5 + 13, 7 + 11] = [18, 18]; x = [2, 3, 18, 18]; u = [5, 0]
        assert_eq!(g.value(u).data(), &[5.0, 0.0]);
    }

    #[test]
    fn role_repr_two_member_pool_hand_arithmetic() {
        let a = BackboneEmbeddings {
            id: "a".into(),
            perf: Tensor::column(vec![1.0, 0.0]),
            ptp: Tensor::column(vec![0.0, 2.0]),
            ty: Tensor::column(vec![1.0, 1.0]),
        };
        let b = BackboneEmbeddings {
            id: "b".into(),
            perf: Tensor::column(vec![3.0, 0.0]),
            ptp: Tensor::column(vec![0.0, 4.0]),
            ty: Tensor::column(vec![1.0, -1.0]),
        };
        let mean = pool_input(&[&a, &b]).unwrap();
        assert_eq!(mean.data(), &[2.0, 0.0, 0.0, 3.0, 1.0, 0.0]);
        let mut s = ParameterStore::new(0);
        // projection sums the first and fourth entries into g_0, the fifth into g_1
        s.insert("w_pool_ctx", Tensor::new(2, 6, vec![1., 0., 0., 1., 0., 0., 0., 0., 0., 0., 1., 0.]).unwrap());
        s.insert("w_v", Tensor::new(2, 6, vec![1., 0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 1.]).unwrap());
        let mut g = Graph::new();
        let w_ctx = g.param(&s, "w_pool_ctx").unwrap();
        let m = g.constant(mean);
        let ctx = g.matmul(w_ctx, m).unwrap();
        assert_eq!(g.value(ctx).data(), &[5.0, 1.0]);
        let r = g.column(&[0.5, -0.5]);
        let q = g.column(&[2.0, 4.0]);
        let v = role_repr(&mut g, &s, r, q, ctx).unwrap();
        // v = [r0 + g0, q0 + g1] = [5.5, 3]
        assert_eq!(g.value(v).data(), &[5.5, 3.0]);
    }

    #[test]
    fn single_member_pool_mean_is_member() {
        let a = emb("a", 0.3);
        assert_eq!(pool_input(&[&a]).unwrap().data(), a.stacked().as_slice());
        assert!(matches!(pool_input(&[]), Err(SelectError::EmptyPool(_))));
    }

    fn run(
        store: &ParameterStore,
        chooser: &mut dyn Chooser,
        roles: usize,
        members: &[BackboneEmbeddings],
    ) -> Result<(MatchDecision, f64), Error> {
        let mut g = Graph::new();
        let refs: Vec<&BackboneEmbeddings> = members.iter().collect();
        let role_vars: Vec<Var> = (0..roles).map(|i| g.column(&[i as f64 * 0.4, 1.0 - i as f64])).collect();
        let names: Vec<String> = (0..roles).map(|i| format!("r{i}")).collect();
        let roles: Vec<(&str, Var)> = names.iter().map(String::as_str).zip(role_vars).collect();
        let q = g.column(&[0.2, -0.9]);
        let ctx = g.column(&[0.7, 0.1]);
        let (dec, lp) = match_roles(&mut g, store, &roles, &refs, q, ctx, chooser)?;
        Ok((dec, g.scalar_value(lp)))
    }

    #[test]
    fn zero_params_uniform_matching() {
        let members = vec![emb("a", 1.0), emb("b", 2.0), emb("c", 3.0)];
        let (dec, lp) = run(&zero_params(), &mut Sampler::new(4), 2, &members).unwrap();
        for probs in &dec.per_role_probs {
            assert!(probs.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        }
        assert!((lp - 2.0 * (1.0f64 / 3.0).ln()).abs() < 1e-12);
        let (dec, _) = run(&zero_params(), &mut Greedy, 1, &members[..2]).unwrap();
        assert_eq!(dec.per_role_probs[0], vec![0.5, 0.5]);
        assert_eq!(dec.choices, vec![0]);
    }

    #[test]
    fn joint_log_prob_recomputed_from_choices() {
        let members = vec![emb("a", 1.0), emb("b", 2.0), emb("c", 3.0)];
        let (dec, lp) = run(&params(8), &mut Sampler::new(21), 3, &members).unwrap();
        let recomputed: f64 = dec
            .per_role_probs
            .iter()
            .zip(&dec.choices)
            .map(|(p, &k)| p[k].ln())
            .sum();
        assert!((lp - recomputed).abs() < 1e-12);
        assert_eq!(dec.log_p_match, lp);
    }

    #[test]
    fn log_p_match_passes_grad_check() {
        let members = vec![emb("a", 1.0), emb("b", 2.0), emb("c", 3.0)];
        for seed in 0..5 {
            let store = params(seed);
            let mut rec = Recorder::new(Sampler::new(seed));
            run(&store, &mut rec, 3, &members).unwrap();
            let log = rec.log;
            let check = |s: &ParameterStore, g: &mut Graph| -> Result<Var, Error> {
                let refs: Vec<&BackboneEmbeddings> = members.iter().collect();
                let r: Vec<Var> = (0..3).map(|i| g.column(&[i as f64 * 0.4, 1.0 - i as f64])).collect();
                let roles = [("r0", r[0]), ("r1", r[1]), ("r2", r[2])];
                let q = g.column(&[0.2, -0.9]);
                let ctx = g.column(&[0.7, 0.1]);
                let mut rep = Replay::new(log.clone());
                Ok(match_roles(g, s, &roles, &refs, q, ctx, &mut rep)?.1)
            };
            let report = grad_check_fraction(check, &store, 1e-5, 1e-4, seed, 1.0).unwrap();
            assert!(report.passed, "{report:?}");
        }
    }

    #[test]
    fn shifting_logits_leaves_distribution() {
        let a = crate::diffcore::softmax_values(&[0.3, -1.0, 2.0]);
        let b = crate::diffcore::softmax_values(&[5.3, 4.0, 7.0]);
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn role_permutation_permutes_assignment() {
        let members = [emb("a", 1.0), emb("b", 2.0), emb("c", 3.0)];
        let store = params(3);
        let assign = |order: [usize; 3]| {
            let mut g = Graph::new();
            let refs: Vec<&BackboneEmbeddings> = members.iter().collect();
            let names = ["r0", "r1", "r2"];
            let roles: Vec<(&str, Var)> = order
                .iter()
                .map(|&i| (names[i], g.column(&[i as f64 * 0.4, 1.0 - i as f64])))
                .collect();
            let q = g.column(&[0.2, -0.9]);
            let ctx = g.column(&[0.7, 0.1]);
            let (dec, _) = match_roles(&mut g, &store, &roles, &refs, q, ctx, &mut Sampler::new(5)).unwrap();
            order.iter().copied().zip(dec.assignment).collect::<std::collections::BTreeMap<_, _>>()
        };
        assert_eq!(assign([0, 1, 2]), assign([2, 0, 1]));
    }
}
