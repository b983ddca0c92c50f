//! Lorentz building blocks: fully-connected layers that keep outputs on the
//! hyperboloid, multi-head split/merge with re-lifted time components, batch
//! normalization in the origin tangent space, space-only residuals, and the
//! patch embedding with positional terms and a CLS token.
//!
//! Every operation here preserves the manifold constraint: outputs satisfy
//! `⟨y, y⟩_L = 1/K` up to floating-point rounding.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{HexError, Result};
use crate::lorentz::{exp_map_origin, lift, log_map_origin, Curvature};
use crate::params::{ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// Floor applied to the squared space norm before `sqrt` when rescaling, so
/// the norm gradient stays finite; the norm itself is floored at
/// [`FC_NORM_GUARD`] so a zero projection cannot divide by zero.
const FC_NORM_SQ_GUARD: f64 = 1e-16;
pub const FC_NORM_GUARD: f64 = 1e-8;
/// Variance floor in batch normalization.
pub const BN_VAR_GUARD: f64 = 1e-5;

/// Time offset added to the sigmoid range in [`lorentz_fc`]: the origin's
/// time coordinate plus a fixed margin, so the output time component always
/// clears `sqrt(-1/K)` and the space rescale stays real.
pub fn fc_time_offset(curvature: Curvature) -> f64 {
    curvature.origin_time() + 0.1
}

// ---------------------------------------------------------------------------
// parameter initialization
// ---------------------------------------------------------------------------

/// Xavier-normal weights: zero-mean, variance 2/(fan_in + fan_out).
pub fn xavier_normal<T: Scalar, R: Rng>(rng: &mut R, fan_out: usize, fan_in: usize) -> Vec<T> {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    (0..fan_out * fan_in)
        .map(|_| T::from_f64(dist.sample(rng)))
        .collect()
}

/// Register the parameters of one Lorentz fully-connected layer under
/// `prefix`: weight `w` [out_space, in_ambient], time direction `v`
/// [in_ambient, 1], time bias `b`, and the range scale stored as
/// `log_lambda` so that λ = exp(log_lambda) stays positive.
pub fn init_lorentz_fc<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    prefix: &str,
    in_ambient: usize,
    out_space: usize,
    lambda_init: f64,
    rng: &mut R,
) {
    store.insert(
        &format!("{prefix}.w"),
        xavier_normal(rng, out_space, in_ambient),
        &[out_space, in_ambient],
        ParamKind::Euclidean,
    );
    store.insert(
        &format!("{prefix}.v"),
        xavier_normal(rng, in_ambient, 1),
        &[in_ambient, 1],
        ParamKind::Euclidean,
    );
    store.insert(
        &format!("{prefix}.b"),
        vec![T::zero()],
        &[1],
        ParamKind::Euclidean,
    );
    store.insert(
        &format!("{prefix}.log_lambda"),
        vec![T::from_f64(lambda_init.ln())],
        &[1],
        ParamKind::Euclidean,
    );
}

/// Register batch-norm parameters under `prefix` for `n` space features:
/// scale γ (init 1), shift (init 0), and running mean/variance buffers.
pub fn init_lorentz_bn<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, n: usize) {
    store.insert(
        &format!("{prefix}.gamma"),
        vec![T::one()],
        &[1],
        ParamKind::Euclidean,
    );
    store.insert(
        &format!("{prefix}.shift"),
        vec![T::zero(); n],
        &[n],
        ParamKind::Euclidean,
    );
    store.insert(
        &format!("{prefix}.running_mean"),
        vec![T::zero(); n],
        &[n],
        ParamKind::Buffer,
    );
    store.insert(
        &format!("{prefix}.running_var"),
        vec![T::one(); n],
        &[n],
        ParamKind::Buffer,
    );
}

// ---------------------------------------------------------------------------
// LorentzFC
// ---------------------------------------------------------------------------

/// Lorentz fully-connected layer. Input rows are ambient points
/// [tokens, in_ambient]; output rows are on-manifold points
/// [tokens, out_space + 1].
///
/// The time component is a bounded scalar `y0 = λ·σ(vᵀx + b) + ε` with
/// `ε = sqrt(-1/K) + 0.1`, and the space components are the linear image
/// `Wx` rescaled so `‖y_s‖² − y0² = 1/K` holds exactly.
pub fn lorentz_fc<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: &Tensor<T>,
    curvature: Curvature,
) -> Result<Tensor<T>> {
    let w = store.fetch(tape, &format!("{prefix}.w"))?;
    let v = store.fetch(tape, &format!("{prefix}.v"))?;
    let b = store.fetch(tape, &format!("{prefix}.b"))?;
    let log_lambda = store.fetch(tape, &format!("{prefix}.log_lambda"))?;
    let lambda = tape.exp(&log_lambda);

    // space pre-image: x Wᵀ -> [tokens, out_space]
    let wt = tape.transpose_last2(&w)?;
    let a = tape.matmul(x, &wt)?;

    // time component: λ σ(vᵀx + b) + ε
    let pre = tape.matmul(x, &v)?; // [tokens, 1]
    let pre = tape.add(&pre, &b)?;
    let sig = tape.sigmoid(&pre);
    let scaled = tape.mul(&lambda, &sig)?;
    let y0 = tape.add_scalar(&scaled, T::from_f64(fc_time_offset(curvature)));

    // rescale space so the constraint holds: ‖y_s‖² = y0² + 1/K
    let last = a.ndim() - 1;
    let sq = tape.mul(&a, &a)?;
    let norm_sq = tape.sum(&sq, last, true)?;
    let norm_sq = tape.clamp_min(&norm_sq, T::from_f64(FC_NORM_SQ_GUARD));
    let norm = tape.sqrt(&norm_sq);
    let norm = tape.clamp_min(&norm, T::from_f64(FC_NORM_GUARD));

    let y0_sq = tape.mul(&y0, &y0)?;
    // y0² + 1/K  (1/K < 0); positive because y0 > sqrt(-1/K)
    let target_sq = tape.add_scalar(&y0_sq, T::from_f64(-curvature.neg_inv()));
    let target = tape.sqrt(&target_sq);
    let scale = tape.div(&target, &norm)?;
    let space = tape.mul(&a, &scale)?;

    tape.concat(&[&y0, &space], last)
}

// ---------------------------------------------------------------------------
// multi-head split / merge
// ---------------------------------------------------------------------------

/// Split the space components of on-manifold rows [tokens, n+1] into `h`
/// chunks and re-lift each chunk onto the hyperboloid. Returns one
/// [tokens, n/h + 1] tensor per head.
pub fn split_heads<T: Scalar>(
    tape: &mut Tape<T>,
    x: &Tensor<T>,
    h: usize,
    curvature: Curvature,
) -> Result<Vec<Tensor<T>>> {
    let last = x.ndim() - 1;
    let n = x.shape()[last] - 1;
    if h == 0 || n % h != 0 {
        return Err(HexError::Invalid(format!(
            "space dimension {n} not divisible into {h} heads"
        )));
    }
    let dh = n / h;
    let mut heads = Vec::with_capacity(h);
    for i in 0..h {
        let chunk = tape.narrow(x, last, 1 + i * dh, dh)?;
        heads.push(lift(tape, &chunk, curvature)?);
    }
    Ok(heads)
}

/// Merge per-head on-manifold rows back into one sequence: space blocks are
/// concatenated after scaling by `scale` and the time component is recomputed
/// via lift. The standard merge uses `scale = 1/sqrt(h)` to keep the merged
/// space norm comparable to the per-head norms.
pub fn merge_heads_scaled<T: Scalar>(
    tape: &mut Tape<T>,
    heads: &[Tensor<T>],
    scale: T,
    curvature: Curvature,
) -> Result<Tensor<T>> {
    if heads.is_empty() {
        return Err(HexError::Invalid("merge of zero heads".into()));
    }
    let last = heads[0].ndim() - 1;
    let tokens = heads[0].shape()[..last].to_vec();
    let mut spaces = Vec::with_capacity(heads.len());
    for head in heads {
        if head.shape()[..head.ndim() - 1] != tokens[..] {
            return Err(HexError::ShapeMismatch {
                op: "merge_heads",
                lhs: heads[0].shape().to_vec(),
                rhs: head.shape().to_vec(),
            });
        }
        let n = head.shape()[head.ndim() - 1] - 1;
        let space = tape.narrow(head, head.ndim() - 1, 1, n)?;
        spaces.push(if scale == T::one() {
            space
        } else {
            tape.mul_scalar(&space, scale)
        });
    }
    let refs: Vec<&Tensor<T>> = spaces.iter().collect();
    let merged = tape.concat(&refs, last)?;
    lift(tape, &merged, curvature)
}

pub fn merge_heads<T: Scalar>(
    tape: &mut Tape<T>,
    heads: &[Tensor<T>],
    curvature: Curvature,
) -> Result<Tensor<T>> {
    let scale = T::one() / T::from_usize(heads.len()).sqrt();
    merge_heads_scaled(tape, heads, scale, curvature)
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

/// Lorentz batch normalization: tokens are pulled to the origin tangent
/// space with the logarithmic map, their space coordinates standardized
/// per feature over the token batch, scaled by γ and shifted, and mapped
/// back with the exponential map.
///
/// Statistics always come from the current token batch, so the layer is a
/// deterministic function of its input in both modes. The forward pass here
/// sees one image's token set at a time, and a model trained under
/// per-image statistics is not reproduced by frozen running averages (the
/// averages smooth away exactly the per-image whitening the weights learned
/// against). Running mean/variance buffers are still maintained with
/// `momentum` in training mode as telemetry for checkpoints and drift
/// inspection.
pub fn lorentz_batch_norm<T: Scalar>(
    tape: &mut Tape<T>,
    store: &mut ParamStore<T>,
    prefix: &str,
    x: &Tensor<T>,
    curvature: Curvature,
    training: bool,
    momentum: f64,
) -> Result<Tensor<T>> {
    let last = x.ndim() - 1;
    let n = x.shape()[last] - 1;
    let rows: usize = x.shape()[..last].iter().product();
    if training && rows < 2 {
        return Err(HexError::Invalid(
            "batch norm in training mode needs at least 2 points".into(),
        ));
    }

    let u = log_map_origin(tape, x, curvature)?;
    let us = tape.narrow(&u, last, 1, n)?;
    // flatten leading axes so statistics always reduce over one token axis
    let us = tape.reshape(&us, &[rows, n])?;

    let gamma = store.fetch(tape, &format!("{prefix}.gamma"))?;
    let shift = store.fetch(tape, &format!("{prefix}.shift"))?;

    let mean = tape.mean(&us, 0, true)?; // [1, n]
    let centered0 = tape.sub(&us, &mean)?;
    let sq = tape.mul(&centered0, &centered0)?;
    let var = tape.mean(&sq, 0, true)?; // [1, n]
    if training {
        let m = T::from_f64(momentum);
        let keep = T::one() - m;
        {
            let rm = store.get_mut(&format!("{prefix}.running_mean"))?;
            for (r, &b) in rm.data.iter_mut().zip(mean.data()) {
                *r = keep * *r + m * b;
            }
        }
        {
            let rv = store.get_mut(&format!("{prefix}.running_var"))?;
            for (r, &b) in rv.data.iter_mut().zip(var.data()) {
                *r = keep * *r + m * b;
            }
        }
    }

    let var = tape.add_scalar(&var, T::from_f64(BN_VAR_GUARD));
    let std = tape.sqrt(&var);
    let unit = tape.div(&centered0, &std)?;
    let scaled = tape.mul(&unit, &gamma)?;
    let shifted = tape.add(&scaled, &shift)?;

    // zero time component, back to the original leading shape, exp at origin
    let zeros = Tensor::from_vec(vec![T::zero(); rows], &[rows, 1])?;
    let tangent = tape.concat(&[&zeros, &shifted], 1)?;
    let tangent = tape.reshape(&tangent, x.shape())?;
    exp_map_origin(tape, &tangent, curvature)
}

// ---------------------------------------------------------------------------
// residuals and space-wise maps
// ---------------------------------------------------------------------------

/// Space-only residual: add the space components of `x` and `y`, recompute
/// the time component via lift.
pub fn space_residual<T: Scalar>(
    tape: &mut Tape<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    curvature: Curvature,
) -> Result<Tensor<T>> {
    if x.shape() != y.shape() {
        return Err(HexError::ShapeMismatch {
            op: "space_residual",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let last = x.ndim() - 1;
    let n = x.shape()[last] - 1;
    let xs = tape.narrow(x, last, 1, n)?;
    let ys = tape.narrow(y, last, 1, n)?;
    let sum = tape.add(&xs, &ys)?;
    lift(tape, &sum, curvature)
}

/// Apply an elementwise map to the space components and re-lift.
pub fn space_map<T: Scalar>(
    tape: &mut Tape<T>,
    x: &Tensor<T>,
    curvature: Curvature,
    f: impl FnOnce(&mut Tape<T>, &Tensor<T>) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let last = x.ndim() - 1;
    let n = x.shape()[last] - 1;
    let xs = tape.narrow(x, last, 1, n)?;
    let mapped = f(tape, &xs)?;
    lift(tape, &mapped, curvature)
}

// ---------------------------------------------------------------------------
// patch embedding
// ---------------------------------------------------------------------------

/// Register patch-embedding parameters: the patch projection, its LorentzFC,
/// learnable positional embeddings, and the CLS token (a manifold point).
pub fn init_patch_embed<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    prefix: &str,
    patch_dim: usize,
    embed_space: usize,
    num_patches: usize,
    curvature: Curvature,
    rng: &mut R,
) {
    store.insert(
        &format!("{prefix}.proj"),
        xavier_normal(rng, embed_space, patch_dim),
        &[patch_dim, embed_space],
        ParamKind::Euclidean,
    );
    store.insert(
        &format!("{prefix}.proj_bias"),
        vec![T::zero(); embed_space],
        &[embed_space],
        ParamKind::Euclidean,
    );
    init_lorentz_fc(
        store,
        &format!("{prefix}.fc"),
        embed_space + 1,
        embed_space,
        1.0,
        rng,
    );
    store.insert(
        &format!("{prefix}.pos"),
        xavier_normal(rng, num_patches, embed_space),
        &[num_patches, embed_space],
        ParamKind::Euclidean,
    );
    let cls_space: Vec<T> = xavier_normal(rng, 1, embed_space);
    let cls = crate::lorentz::lift_raw(&cls_space, curvature);
    store.insert(
        &format!("{prefix}.cls"),
        cls,
        &[1, embed_space + 1],
        ParamKind::Manifold,
    );
}

/// Cut an image [C, H, W] into non-overlapping P×P patches, flattened to
/// rows [num_patches, C·P·P].
pub fn extract_patches<T: Scalar>(image: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    if image.ndim() != 3 {
        return Err(HexError::Invalid(format!(
            "expected [C, H, W] image, got shape {:?}",
            image.shape()
        )));
    }
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(HexError::Invalid(format!(
            "image {h}x{w} not divisible by patch size {patch}"
        )));
    }
    let (ph, pw) = (h / patch, w / patch);
    let d = image.data();
    let mut out = vec![T::zero(); ph * pw * c * patch * patch];
    let mut idx = 0;
    for py in 0..ph {
        for px in 0..pw {
            for ch in 0..c {
                for dy in 0..patch {
                    for dx in 0..patch {
                        let y = py * patch + dy;
                        let x = px * patch + dx;
                        out[idx] = d[ch * h * w + y * w + x];
                        idx += 1;
                    }
                }
            }
        }
    }
    Tensor::from_vec(out, &[ph * pw, c * patch * patch])
}

/// Patch embedding: patches are linearly projected, lifted onto the
/// hyperboloid, passed through a LorentzFC, offset by learnable positional
/// embeddings on the space components (then re-lifted), and prefixed with
/// the CLS token. Output: [num_patches + 1, embed_space + 1].
pub fn patch_embed<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    image: &Tensor<T>,
    patch: usize,
    curvature: Curvature,
) -> Result<Tensor<T>> {
    let patches = extract_patches(image, patch)?;
    let proj = store.fetch(tape, &format!("{prefix}.proj"))?;
    let bias = store.fetch(tape, &format!("{prefix}.proj_bias"))?;
    let projected = tape.matmul(&patches, &proj)?;
    let projected = tape.add(&projected, &bias)?;
    let lifted = lift(tape, &projected, curvature)?;
    let tokens = lorentz_fc(tape, store, &format!("{prefix}.fc"), &lifted, curvature)?;

    let pos = store.fetch(tape, &format!("{prefix}.pos"))?;
    let with_pos = space_map(tape, &tokens, curvature, |tape, xs| tape.add(xs, &pos))?;

    let cls = store.fetch(tape, &format!("{prefix}.cls"))?;
    tape.concat(&[&cls, &with_pos], 0)
}

// ---------------------------------------------------------------------------
// Euclidean layer norm (baseline)
// ---------------------------------------------------------------------------

pub fn init_layer_norm<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, n: usize) {
    store.insert(
        &format!("{prefix}.gamma"),
        vec![T::one(); n],
        &[n],
        ParamKind::Euclidean,
    );
    store.insert(
        &format!("{prefix}.beta"),
        vec![T::zero(); n],
        &[n],
        ParamKind::Euclidean,
    );
}

/// Standard layer normalization over the last axis.
pub fn layer_norm<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let last = x.ndim() - 1;
    let mean = tape.mean(x, last, true)?;
    let centered = tape.sub(x, &mean)?;
    let sq = tape.mul(&centered, &centered)?;
    let var = tape.mean(&sq, last, true)?;
    let var = tape.add_scalar(&var, T::from_f64(BN_VAR_GUARD));
    let std = tape.sqrt(&var);
    let unit = tape.div(&centered, &std)?;
    let gamma = store.fetch(tape, &format!("{prefix}.gamma"))?;
    let beta = store.fetch(tape, &format!("{prefix}.beta"))?;
    let scaled = tape.mul(&unit, &gamma)?;
    tape.add(&scaled, &beta)
}
