//! Distance-based attention on the Lorentz manifold.
//!
//! Scores are softmax-normalized negative squared Lorentzian distances with
//! a learnable per-head temperature. Values are combined either by
//! exponential-map aggregation (weighted sum in the origin tangent space,
//! mapped back with the exponential map) or by centroid aggregation
//! (weighted ambient sum renormalized by its Lorentz norm). The centroid
//! path reports how many tokens hit its denominator floor so callers can
//! feed the stability watchdog.

use rand::Rng;

use crate::error::{HexError, Result};
use crate::layers::{lorentz_fc, merge_heads, split_heads};
use crate::lorentz::{
    exp_map_origin, log_map_origin, lorentz_inner_keepdim, sq_dist_keepdim, Curvature,
};
use crate::params::{ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// Default floor for the centroid-aggregation denominator.
pub const CENTROID_EPS_GUARD: f64 = 1e-8;

/// Value aggregation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    ExpAgg,
    Centroid,
}

impl std::str::FromStr for Aggregation {
    type Err = HexError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp_agg" | "expagg" | "exp" => Ok(Aggregation::ExpAgg),
            "centroid" => Ok(Aggregation::Centroid),
            other => Err(HexError::Config(format!("unknown aggregation '{other}'"))),
        }
    }
}

/// Register multi-head attention parameters under `prefix`: Q/K/V and
/// output LorentzFC layers plus per-head temperatures stored as
/// `log_tau` (τ = exp(log_tau) > 0, init 1). `lambda_v` scales the value
/// projection's time range; 1 is the standard setting.
pub fn init_attention<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    prefix: &str,
    ambient: usize,
    heads: usize,
    lambda_v: f64,
    rng: &mut R,
) {
    let n = ambient - 1;
    for (name, lambda) in [("q", 1.0), ("k", 1.0), ("v", lambda_v), ("out", 1.0)] {
        crate::layers::init_lorentz_fc(
            store,
            &format!("{prefix}.{name}"),
            ambient,
            n,
            lambda,
            rng,
        );
    }
    store.insert(
        &format!("{prefix}.log_tau"),
        vec![T::zero(); heads],
        &[heads],
        ParamKind::Euclidean,
    );
}

/// Attention weights: softmax over keys of `(−d²(Q, K)/sqrt(d_k))·τ`,
/// where `d_k` is the per-head space dimension. Q is [tq, d+1], K is
/// [tk, d+1]; the result is row-stochastic [tq, tk].
pub fn distance_scores<T: Scalar>(
    tape: &mut Tape<T>,
    q: &Tensor<T>,
    k: &Tensor<T>,
    tau: &Tensor<T>,
    curvature: Curvature,
) -> Result<Tensor<T>> {
    if q.ndim() != 2 || k.ndim() != 2 || q.shape()[1] != k.shape()[1] {
        return Err(HexError::ShapeMismatch {
            op: "distance_scores",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let d_k = q.shape()[1] - 1;
    let (tq, tk) = (q.shape()[0], k.shape()[0]);
    // pairwise squared distances via broadcast: [tq, 1, d+1] vs [1, tk, d+1]
    let q3 = tape.reshape(q, &[tq, 1, q.shape()[1]])?;
    let k3 = tape.reshape(k, &[1, tk, k.shape()[1]])?;
    let d_sq = sq_dist_keepdim(tape, &q3, &k3, curvature)?; // [tq, tk, 1]
    let d_sq = tape.reshape(&d_sq, &[tq, tk])?;
    if !d_sq.is_finite() {
        return Err(HexError::NonFinite {
            context: "attention distances".into(),
        });
    }
    let scaled = tape.mul_scalar(&d_sq, -T::one() / T::from_usize(d_k).sqrt());
    let logits = tape.mul(&scaled, tau)?;
    tape.softmax(&logits, 1)
}

/// Exponential-map aggregation: values are pulled to the origin tangent
/// space, combined as a weighted sum, and mapped back to the manifold.
pub fn exp_agg<T: Scalar>(
    tape: &mut Tape<T>,
    alpha: &Tensor<T>,
    v: &Tensor<T>,
    curvature: Curvature,
) -> Result<Tensor<T>> {
    let vt = log_map_origin(tape, v, curvature)?;
    let u = tape.matmul(alpha, &vt)?;
    exp_map_origin(tape, &u, curvature)
}

/// Centroid aggregation: the weighted ambient sum of values, renormalized
/// by `sqrt(-1/K)·sqrt(|⟨V̄, V̄⟩_L|)` with the denominator floored at
/// `eps_guard`. Returns the aggregate and the number of output tokens whose
/// denominator hit the floor (ill-conditioned aggregates that are no longer
/// guaranteed to lie on the manifold).
pub fn centroid_agg<T: Scalar>(
    tape: &mut Tape<T>,
    alpha: &Tensor<T>,
    v: &Tensor<T>,
    curvature: Curvature,
    eps_guard: f64,
) -> Result<(Tensor<T>, usize)> {
    let vbar = tape.matmul(alpha, v)?;
    let quad = lorentz_inner_keepdim(tape, &vbar, &vbar)?;
    let quad = tape.abs(&quad);
    let norm = tape.sqrt(&quad);
    let denom = tape.mul_scalar(&norm, T::from_f64(curvature.origin_time()));
    let floor = T::from_f64(eps_guard);
    let floored = denom.data().iter().filter(|d| **d < floor).count();
    let denom = tape.clamp_min(&denom, floor);
    let out = tape.div(&vbar, &denom)?;
    Ok((out, floored))
}

/// Full multi-head attention block: Q/K/V LorentzFC projections, per-head
/// distance scores, aggregation, merge, and output projection. Returns the
/// output sequence and the centroid floor-hit count (always 0 for ExpAgg).
/// Relative tolerance used to audit aggregated tokens against the manifold
/// constraint. Loose enough that healthy f32 arithmetic never trips it.
pub const AGG_AUDIT_TOL: f64 = 1e-2;

/// Stability counters from one multi-head attention pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AttnStats {
    /// Centroid denominators clamped by the guard floor.
    pub floor_hits: usize,
    /// Aggregated tokens that left the hyperboloid (audited at
    /// [`AGG_AUDIT_TOL`] relative tolerance).
    pub manifold_violations: usize,
}

pub fn hyperbolic_mha<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: &Tensor<T>,
    heads: usize,
    agg: Aggregation,
    curvature: Curvature,
) -> Result<(Tensor<T>, AttnStats)> {
    let q = lorentz_fc(tape, store, &format!("{prefix}.q"), x, curvature)?;
    let k = lorentz_fc(tape, store, &format!("{prefix}.k"), x, curvature)?;
    let v = lorentz_fc(tape, store, &format!("{prefix}.v"), x, curvature)?;
    let qh = split_heads(tape, &q, heads, curvature)?;
    let kh = split_heads(tape, &k, heads, curvature)?;
    let vh = split_heads(tape, &v, heads, curvature)?;
    let log_tau = store.fetch(tape, &format!("{prefix}.log_tau"))?;

    let mut outputs = Vec::with_capacity(heads);
    let mut stats = AttnStats::default();
    for h in 0..heads {
        let lt = tape.narrow(&log_tau, 0, h, 1)?;
        let tau = tape.exp(&lt);
        let alpha = distance_scores(tape, &qh[h], &kh[h], &tau, curvature)?;
        let out = match agg {
            Aggregation::ExpAgg => exp_agg(tape, &alpha, &vh[h], curvature)?,
            Aggregation::Centroid => {
                let (out, hits) =
                    centroid_agg(tape, &alpha, &vh[h], curvature, CENTROID_EPS_GUARD)?;
                stats.floor_hits += hits;
                out
            }
        };
        // The aggregate is the one place a head can silently leave the
        // hyperboloid (a cancelled quadratic form makes the centroid's
        // renormalization meaningless), so audit it here.
        stats.manifold_violations += crate::lorentz::validate_rows(&out, curvature, AGG_AUDIT_TOL)
            .iter()
            .filter(|r| !r.pass)
            .count();
        outputs.push(out);
    }
    let merged = merge_heads(tape, &outputs, curvature)?;
    let projected = lorentz_fc(tape, store, &format!("{prefix}.out"), &merged, curvature)?;
    Ok((projected, stats))
}
