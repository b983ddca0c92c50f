//! Model assembly: the hyperbolic vision transformer (Lorentz MLR head),
//! its hybrid variant (Euclidean head on the hyperbolic encoder), and a
//! standard pre-LN Euclidean ViT baseline with the same shapes and a
//! learnable attention temperature. All variants expose the same
//! image-in/logits-out contract so the training harness is variant-agnostic.

use rand::Rng;

use crate::attention::{hyperbolic_mha, Aggregation};
use crate::error::{HexError, Result};
use crate::layers::{
    extract_patches, init_layer_norm, init_lorentz_bn, init_lorentz_fc, init_patch_embed,
    layer_norm, lorentz_batch_norm, lorentz_fc, patch_embed, space_map, space_residual,
    xavier_normal,
};
use crate::lorentz::{log_map_origin, lorentz_inner_keepdim, Curvature};
use crate::params::{ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Euclidean,
    Hexformer,
    HexformerHybrid,
}

impl std::str::FromStr for Variant {
    type Err = HexError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Variant::Euclidean),
            "hexformer" => Ok(Variant::Hexformer),
            "hexformer_hybrid" | "hybrid" => Ok(Variant::HexformerHybrid),
            other => Err(HexError::Config(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    LeakyRelu,
}

impl std::str::FromStr for Activation {
    type Err = HexError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "leaky_relu" => Ok(Activation::LeakyRelu),
            other => Err(HexError::Config(format!(
                "unknown activation '{other}' (expected gelu or leaky_relu)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub aggregation: Aggregation,
    pub patch: usize,
    /// Embedding (space) dimension.
    pub embed: usize,
    /// Hidden (space) dimension of the feed-forward sublayer.
    pub mlp: usize,
    pub depth: usize,
    pub heads: usize,
    pub classes: usize,
    /// Curvature K < 0 (ignored by the Euclidean variant).
    pub curvature: f64,
    pub activation: Activation,
    pub channels: usize,
    pub image_size: usize,
    /// Initial range scale of the attention value projection. 1.0 is the
    /// standard setting; the stability lab raises it to widen the value
    /// spread and stress the aggregation step.
    #[serde(default = "default_lambda_v")]
    pub lambda_v: f64,
}

fn default_lambda_v() -> f64 {
    1.0
}

impl ModelConfig {
    /// Desk-scale default used throughout tests and acceptance runs.
    pub fn desk(variant: Variant, aggregation: Aggregation) -> Self {
        ModelConfig {
            variant,
            aggregation,
            patch: 4,
            embed: 32,
            mlp: 64,
            depth: 3,
            heads: 4,
            classes: 16,
            curvature: -1.0,
            activation: Activation::Gelu,
            channels: 1,
            image_size: 16,
            lambda_v: 1.0,
        }
    }

    /// Named reference presets (kept for completeness; not desk-scale).
    pub fn preset(name: &str, variant: Variant, aggregation: Aggregation) -> Result<Self> {
        let (patch, embed, mlp, depth, heads) = match name {
            "tiny" => (4, 192, 384, 9, 12),
            "small" => (4, 384, 768, 9, 12),
            "base" => (4, 768, 1536, 12, 12),
            other => return Err(HexError::Config(format!("unknown preset '{other}'"))),
        };
        Ok(ModelConfig {
            variant,
            aggregation,
            patch,
            embed,
            mlp,
            depth,
            heads,
            classes: 100,
            curvature: -1.0,
            activation: Activation::Gelu,
            channels: 3,
            image_size: 32,
            lambda_v: 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed % self.heads != 0 {
            return Err(HexError::Config(format!(
                "embed dim {} not divisible by {} heads",
                self.embed, self.heads
            )));
        }
        if self.depth == 0 {
            return Err(HexError::Config("depth must be >= 1".into()));
        }
        if self.image_size % self.patch != 0 {
            return Err(HexError::Config(format!(
                "image size {} not divisible by patch {}",
                self.image_size, self.patch
            )));
        }
        if self.variant != Variant::Euclidean && self.curvature >= 0.0 {
            return Err(HexError::Config(format!(
                "hyperbolic variant needs K < 0, got {}",
                self.curvature
            )));
        }
        Ok(())
    }

    pub fn curv(&self) -> Curvature {
        Curvature::new(self.curvature).unwrap_or_else(|_| Curvature::new(-1.0).unwrap())
    }

    pub fn num_patches(&self) -> usize {
        let per_side = self.image_size / self.patch;
        per_side * per_side
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }
}

/// Per-forward diagnostics consumed by the stability watchdog.
#[derive(Debug, Default, Clone, Copy)]
pub struct ForwardStats {
    /// Output tokens whose centroid-aggregation denominator hit its floor.
    pub centroid_floor_hits: usize,
    /// Aggregated tokens that left the hyperboloid.
    pub manifold_violations: usize,
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

pub fn init_model<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    match cfg.variant {
        Variant::Euclidean => init_euclidean(store, cfg, rng),
        Variant::Hexformer | Variant::HexformerHybrid => init_hyperbolic(store, cfg, rng),
    }
    Ok(())
}

fn init_hyperbolic<T: Scalar, R: Rng>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) {
    let curv = cfg.curv();
    let ambient = cfg.embed + 1;
    init_patch_embed(
        store,
        "embed",
        cfg.patch_dim(),
        cfg.embed,
        cfg.num_patches(),
        curv,
        rng,
    );
    for i in 0..cfg.depth {
        init_lorentz_bn(store, &format!("block{i}.bn1"), cfg.embed);
        crate::attention::init_attention(
            store,
            &format!("block{i}.attn"),
            ambient,
            cfg.heads,
            cfg.lambda_v,
            rng,
        );
        init_lorentz_bn(store, &format!("block{i}.bn2"), cfg.embed);
        init_lorentz_fc(store, &format!("block{i}.ffn1"), ambient, cfg.mlp, 1.0, rng);
        init_lorentz_fc(store, &format!("block{i}.ffn2"), cfg.mlp + 1, cfg.embed, 1.0, rng);
    }
    init_lorentz_bn(store, "final_bn", cfg.embed);
    match cfg.variant {
        Variant::Hexformer => {
            store.insert(
                "head.w",
                xavier_normal(rng, cfg.classes, ambient),
                &[cfg.classes, ambient],
                ParamKind::Euclidean,
            );
            store.insert(
                "head.b",
                vec![T::zero(); cfg.classes],
                &[cfg.classes],
                ParamKind::Euclidean,
            );
            store.insert("head.beta", vec![T::one()], &[1], ParamKind::Euclidean);
        }
        _ => {
            store.insert(
                "head.w",
                xavier_normal(rng, cfg.embed, cfg.classes),
                &[cfg.embed, cfg.classes],
                ParamKind::Euclidean,
            );
            store.insert(
                "head.b",
                vec![T::zero(); cfg.classes],
                &[cfg.classes],
                ParamKind::Euclidean,
            );
        }
    }
}

fn init_euclidean<T: Scalar, R: Rng>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) {
    let d = cfg.embed;
    store.insert(
        "embed.proj",
        xavier_normal(rng, cfg.patch_dim(), d),
        &[cfg.patch_dim(), d],
        ParamKind::Euclidean,
    );
    store.insert(
        "embed.proj_bias",
        vec![T::zero(); d],
        &[d],
        ParamKind::Euclidean,
    );
    store.insert(
        "embed.pos",
        xavier_normal(rng, cfg.num_patches(), d),
        &[cfg.num_patches(), d],
        ParamKind::Euclidean,
    );
    store.insert(
        "embed.cls",
        xavier_normal(rng, 1, d),
        &[1, d],
        ParamKind::Euclidean,
    );
    for i in 0..cfg.depth {
        init_layer_norm(store, &format!("block{i}.ln1"), d);
        for name in ["q", "k", "v", "out"] {
            store.insert(
                &format!("block{i}.attn.{name}.w"),
                xavier_normal(rng, d, d),
                &[d, d],
                ParamKind::Euclidean,
            );
            store.insert(
                &format!("block{i}.attn.{name}.b"),
                vec![T::zero(); d],
                &[d],
                ParamKind::Euclidean,
            );
        }
        store.insert(
            &format!("block{i}.attn.log_tau"),
            vec![T::zero(); cfg.heads],
            &[cfg.heads],
            ParamKind::Euclidean,
        );
        init_layer_norm(store, &format!("block{i}.ln2"), d);
        store.insert(
            &format!("block{i}.mlp.w1"),
            xavier_normal(rng, d, cfg.mlp),
            &[d, cfg.mlp],
            ParamKind::Euclidean,
        );
        store.insert(
            &format!("block{i}.mlp.b1"),
            vec![T::zero(); cfg.mlp],
            &[cfg.mlp],
            ParamKind::Euclidean,
        );
        store.insert(
            &format!("block{i}.mlp.w2"),
            xavier_normal(rng, cfg.mlp, d),
            &[cfg.mlp, d],
            ParamKind::Euclidean,
        );
        store.insert(
            &format!("block{i}.mlp.b2"),
            vec![T::zero(); d],
            &[d],
            ParamKind::Euclidean,
        );
    }
    init_layer_norm(store, "final_ln", d);
    store.insert(
        "head.w",
        xavier_normal(rng, d, cfg.classes),
        &[d, cfg.classes],
        ParamKind::Euclidean,
    );
    store.insert(
        "head.b",
        vec![T::zero(); cfg.classes],
        &[cfg.classes],
        ParamKind::Euclidean,
    );
}

// ---------------------------------------------------------------------------
// hyperbolic encoder
// ---------------------------------------------------------------------------

fn activation_map<T: Scalar>(
    tape: &mut Tape<T>,
    x: &Tensor<T>,
    act: Activation,
) -> Tensor<T> {
    match act {
        Activation::Gelu => tape.gelu(x),
        Activation::LeakyRelu => tape.leaky_relu(x, 0.01),
    }
}

/// One encoder block: norm → attention → space residual; norm → FFN →
/// space residual. Outputs stay on the manifold.
pub fn encoder_block<T: Scalar>(
    tape: &mut Tape<T>,
    store: &mut ParamStore<T>,
    prefix: &str,
    x: &Tensor<T>,
    cfg: &ModelConfig,
    training: bool,
) -> Result<(Tensor<T>, ForwardStats)> {
    let curv = cfg.curv();
    let mut stats = ForwardStats::default();

    let h = lorentz_batch_norm(
        tape,
        store,
        &format!("{prefix}.bn1"),
        x,
        curv,
        training,
        BN_MOMENTUM,
    )?;
    let (attn, attn_stats) = hyperbolic_mha(
        tape,
        store,
        &format!("{prefix}.attn"),
        &h,
        cfg.heads,
        cfg.aggregation,
        curv,
    )?;
    stats.centroid_floor_hits += attn_stats.floor_hits;
    stats.manifold_violations += attn_stats.manifold_violations;
    let x = space_residual(tape, x, &attn, curv)?;

    let h = lorentz_batch_norm(
        tape,
        store,
        &format!("{prefix}.bn2"),
        &x,
        curv,
        training,
        BN_MOMENTUM,
    )?;
    let h = lorentz_fc(tape, store, &format!("{prefix}.ffn1"), &h, curv)?;
    let h = space_map(tape, &h, curv, |tape, xs| {
        Ok(activation_map(tape, xs, cfg.activation))
    })?;
    let h = lorentz_fc(tape, store, &format!("{prefix}.ffn2"), &h, curv)?;
    let x = space_residual(tape, &x, &h, curv)?;
    Ok((x, stats))
}

/// Lorentz multinomial logistic regression: per-class signed Lorentzian
/// inner product against a learnable hyperplane normal, scaled and biased.
pub fn lorentz_mlr<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cls: &Tensor<T>,
) -> Result<Tensor<T>> {
    let w = store.fetch(tape, "head.w")?; // [classes, n+1]
    let b = store.fetch(tape, "head.b")?;
    let beta = store.fetch(tape, "head.beta")?;
    let inner = lorentz_inner_keepdim(tape, cls, &w)?; // [classes, 1]
    let classes = w.shape()[0];
    let inner = tape.reshape(&inner, &[classes])?;
    let scaled = tape.mul(&beta, &inner)?;
    tape.add(&scaled, &b)
}

/// Euclidean classification head on the origin-tangent projection of the
/// CLS token.
pub fn euclidean_head<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cls: &Tensor<T>,
    curvature: Curvature,
) -> Result<Tensor<T>> {
    let u = log_map_origin(tape, cls, curvature)?;
    let n = u.shape()[u.ndim() - 1] - 1;
    let us = tape.narrow(&u, u.ndim() - 1, 1, n)?;
    let w = store.fetch(tape, "head.w")?;
    let b = store.fetch(tape, "head.b")?;
    let logits = tape.matmul(&us, &w)?;
    let logits = tape.add(&logits, &b)?;
    let classes = w.shape()[1];
    tape.reshape(&logits, &[classes])
}

fn forward_hyperbolic<T: Scalar>(
    tape: &mut Tape<T>,
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    image: &Tensor<T>,
    training: bool,
) -> Result<(Tensor<T>, ForwardStats)> {
    let curv = cfg.curv();
    let mut x = patch_embed(tape, store, "embed", image, cfg.patch, curv)?;
    let mut stats = ForwardStats::default();
    for i in 0..cfg.depth {
        let (next, s) = encoder_block(tape, store, &format!("block{i}"), &x, cfg, training)?;
        x = next;
        stats.centroid_floor_hits += s.centroid_floor_hits;
        stats.manifold_violations += s.manifold_violations;
    }
    let x = lorentz_batch_norm(tape, store, "final_bn", &x, curv, training, BN_MOMENTUM)?;
    let cls = tape.narrow(&x, 0, 0, 1)?;
    let logits = match cfg.variant {
        Variant::Hexformer => lorentz_mlr(tape, store, &cls)?,
        _ => euclidean_head(tape, store, &cls, curv)?,
    };
    Ok((logits, stats))
}

// ---------------------------------------------------------------------------
// Euclidean baseline (pre-LN ViT with attention temperature)
// ---------------------------------------------------------------------------

fn euclidean_attention<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: &Tensor<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    let d = x.shape()[1];
    let dh = d / heads;
    let proj = |tape: &mut Tape<T>, name: &str| -> Result<Tensor<T>> {
        let w = store.fetch(tape, &format!("{prefix}.{name}.w"))?;
        let b = store.fetch(tape, &format!("{prefix}.{name}.b"))?;
        let y = tape.matmul(x, &w)?;
        tape.add(&y, &b)
    };
    let q = proj(tape, "q")?;
    let k = proj(tape, "k")?;
    let v = proj(tape, "v")?;
    let log_tau = store.fetch(tape, &format!("{prefix}.log_tau"))?;

    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.narrow(&q, 1, h * dh, dh)?;
        let kh = tape.narrow(&k, 1, h * dh, dh)?;
        let vh = tape.narrow(&v, 1, h * dh, dh)?;
        let kt = tape.transpose_last2(&kh)?;
        let scores = tape.matmul(&qh, &kt)?;
        let scores = tape.mul_scalar(&scores, T::one() / T::from_usize(dh).sqrt());
        let lt = tape.narrow(&log_tau, 0, h, 1)?;
        let tau = tape.exp(&lt);
        let scores = tape.mul(&scores, &tau)?;
        let alpha = tape.softmax(&scores, 1)?;
        outs.push(tape.matmul(&alpha, &vh)?);
    }
    let refs: Vec<&Tensor<T>> = outs.iter().collect();
    let merged = tape.concat(&refs, 1)?;
    let wo = store.fetch(tape, &format!("{prefix}.out.w"))?;
    let bo = store.fetch(tape, &format!("{prefix}.out.b"))?;
    let y = tape.matmul(&merged, &wo)?;
    tape.add(&y, &bo)
}

fn forward_euclidean<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    image: &Tensor<T>,
) -> Result<Tensor<T>> {
    let patches = extract_patches(image, cfg.patch)?;
    let proj = store.fetch(tape, "embed.proj")?;
    let bias = store.fetch(tape, "embed.proj_bias")?;
    let tokens = tape.matmul(&patches, &proj)?;
    let tokens = tape.add(&tokens, &bias)?;
    let pos = store.fetch(tape, "embed.pos")?;
    let tokens = tape.add(&tokens, &pos)?;
    let cls = store.fetch(tape, "embed.cls")?;
    let mut x = tape.concat(&[&cls, &tokens], 0)?;

    for i in 0..cfg.depth {
        let prefix = format!("block{i}");
        let h = layer_norm(tape, store, &format!("{prefix}.ln1"), &x)?;
        let attn = euclidean_attention(tape, store, &format!("{prefix}.attn"), &h, cfg.heads)?;
        x = tape.add(&x, &attn)?;
        let h = layer_norm(tape, store, &format!("{prefix}.ln2"), &x)?;
        let w1 = store.fetch(tape, &format!("{prefix}.mlp.w1"))?;
        let b1 = store.fetch(tape, &format!("{prefix}.mlp.b1"))?;
        let w2 = store.fetch(tape, &format!("{prefix}.mlp.w2"))?;
        let b2 = store.fetch(tape, &format!("{prefix}.mlp.b2"))?;
        let m = tape.matmul(&h, &w1)?;
        let m = tape.add(&m, &b1)?;
        let m = activation_map(tape, &m, cfg.activation);
        let m = tape.matmul(&m, &w2)?;
        let m = tape.add(&m, &b2)?;
        x = tape.add(&x, &m)?;
    }
    let x = layer_norm(tape, store, "final_ln", &x)?;
    let cls = tape.narrow(&x, 0, 0, 1)?;
    let w = store.fetch(tape, "head.w")?;
    let b = store.fetch(tape, "head.b")?;
    let logits = tape.matmul(&cls, &w)?;
    let logits = tape.add(&logits, &b)?;
    tape.reshape(&logits, &[cfg.classes])
}

/// Forward pass for one image [C, H, W]; returns logits [classes].
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    image: &Tensor<T>,
    training: bool,
) -> Result<(Tensor<T>, ForwardStats)> {
    match cfg.variant {
        Variant::Euclidean => {
            let logits = forward_euclidean(tape, store, cfg, image)?;
            Ok((logits, ForwardStats::default()))
        }
        _ => forward_hyperbolic(tape, store, cfg, image, training),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorentz::validate_rows;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn micro(variant: Variant, agg: Aggregation) -> ModelConfig {
        ModelConfig {
            variant,
            aggregation: agg,
            patch: 4,
            embed: 4,
            mlp: 8,
            depth: 1,
            heads: 1,
            classes: 3,
            curvature: -1.0,
            activation: Activation::Gelu,
            channels: 1,
            image_size: 8,
            lambda_v: 1.0,
        }
    }

    fn random_image(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Tensor<f64> {
        let n = cfg.channels * cfg.image_size * cfg.image_size;
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(data, &[cfg.channels, cfg.image_size, cfg.image_size]).unwrap()
    }

    #[test]
    fn logits_shape_matches_classes_for_all_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for variant in [Variant::Euclidean, Variant::Hexformer, Variant::HexformerHybrid] {
            let cfg = micro(variant, Aggregation::ExpAgg);
            let mut store: ParamStore<f64> = ParamStore::new();
            init_model(&mut store, &cfg, &mut rng).unwrap();
            let image = random_image(&mut rng, &cfg);
            let mut tape = Tape::new();
            let (logits, _) = forward(&mut tape, &mut store, &cfg, &image, true).unwrap();
            assert_eq!(logits.shape(), &[3], "{variant:?}");
        }
    }

    #[test]
    fn hexformer_and_hybrid_share_encoder_activations() {
        let cfg_h = micro(Variant::Hexformer, Aggregation::ExpAgg);
        let cfg_y = micro(Variant::HexformerHybrid, Aggregation::ExpAgg);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store: ParamStore<f64> = ParamStore::new();
        init_model(&mut store, &cfg_h, &mut rng).unwrap();
        let image = random_image(&mut rng, &cfg_h);

        // identical params up to the head: compare the CLS token feeding it
        let run = |cfg: &ModelConfig, store: &mut ParamStore<f64>| -> Vec<f64> {
            let mut tape = Tape::new();
            let curv = cfg.curv();
            let mut x = patch_embed(&mut tape, store, "embed", &image, cfg.patch, curv).unwrap();
            for i in 0..cfg.depth {
                let (n, _) =
                    encoder_block(&mut tape, store, &format!("block{i}"), &x, cfg, false)
                        .unwrap();
                x = n;
            }
            x.data().to_vec()
        };
        let a = run(&cfg_h, &mut store.clone());
        let b = run(&cfg_y, &mut store.clone());
        assert_eq!(a, b);
    }

    #[test]
    fn encoder_block_keeps_tokens_on_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = micro(Variant::Hexformer, Aggregation::ExpAgg);
        let mut store: ParamStore<f64> = ParamStore::new();
        init_model(&mut store, &cfg, &mut rng).unwrap();
        let image = random_image(&mut rng, &cfg);
        let mut tape = Tape::new();
        let x = patch_embed(&mut tape, &store, "embed", &image, cfg.patch, cfg.curv()).unwrap();
        let (y, _) = encoder_block(&mut tape, &mut store, "block0", &x, &cfg, true).unwrap();
        for r in validate_rows(&y.detach(), cfg.curv(), 1e-9) {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn zero_output_projection_makes_attention_sublayer_identity_on_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = micro(Variant::Hexformer, Aggregation::ExpAgg);
        let mut store: ParamStore<f64> = ParamStore::new();
        init_model(&mut store, &cfg, &mut rng).unwrap();
        let w = store.get_mut("block0.attn.out.w").unwrap();
        w.data.iter_mut().for_each(|v| *v = 0.0);

        let image = random_image(&mut rng, &cfg);
        let mut tape = Tape::new();
        let curv = cfg.curv();
        let x = patch_embed(&mut tape, &store, "embed", &image, cfg.patch, curv).unwrap();
        let h = lorentz_batch_norm(&mut tape, &mut store, "block0.bn1", &x, curv, true, 0.1)
            .unwrap();
        let (attn, _) =
            hyperbolic_mha(&mut tape, &store, "block0.attn", &h, 1, Aggregation::ExpAgg, curv)
                .unwrap();
        let y = space_residual(&mut tape, &x, &attn, curv).unwrap();
        let n = cfg.embed + 1;
        for r in 0..x.shape()[0] {
            for i in 1..n {
                let (a, b) = (y.data()[r * n + i], x.data()[r * n + i]);
                assert!((a - b).abs() < 1e-12, "row {r} comp {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn mlr_with_zero_weights_returns_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = micro(Variant::Hexformer, Aggregation::ExpAgg);
        let mut store: ParamStore<f64> = ParamStore::new();
        init_model(&mut store, &cfg, &mut rng).unwrap();
        store.get_mut("head.w").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        store.get_mut("head.b").unwrap().data = vec![0.5, -1.0, 2.0];
        let cls = crate::lorentz::origin_rows::<f64>(1, cfg.embed, cfg.curv());
        let mut tape = Tape::new();
        let logits = lorentz_mlr(&mut tape, &store, &cls).unwrap();
        assert_eq!(logits.data(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn mlr_argmax_stable_under_beta_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = micro(Variant::Hexformer, Aggregation::ExpAgg);
        let mut store: ParamStore<f64> = ParamStore::new();
        init_model(&mut store, &cfg, &mut rng).unwrap();
        store.get_mut("head.b").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        let mut tape: Tape<f64> = Tape::new();
        let space = Tensor::from_vec(vec![0.3, -0.7, 0.2, 0.9], &[1, 4]).unwrap();
        let cls = crate::lorentz::lift(&mut tape, &space, cfg.curv()).unwrap().detach();
        let argmax = |store: &ParamStore<f64>| {
            let mut tape = Tape::new();
            let logits = lorentz_mlr(&mut tape, store, &cls).unwrap();
            logits
                .data()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        let base = argmax(&store);
        store.get_mut("head.beta").unwrap().data = vec![7.3];
        assert_eq!(argmax(&store), base);
    }

    #[test]
    fn euclidean_head_at_origin_returns_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = micro(Variant::HexformerHybrid, Aggregation::ExpAgg);
        let mut store: ParamStore<f64> = ParamStore::new();
        init_model(&mut store, &cfg, &mut rng).unwrap();
        store.get_mut("head.b").unwrap().data = vec![1.0, 2.0, 3.0];
        let cls = crate::lorentz::origin_rows::<f64>(1, cfg.embed, cfg.curv());
        let mut tape = Tape::new();
        let logits = euclidean_head(&mut tape, &store, &cls, cfg.curv()).unwrap();
        for (a, b) in logits.data().iter().zip(&[1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic_per_seed() {
        let cfg = micro(Variant::Hexformer, Aggregation::ExpAgg);
        let image = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            random_image(&mut rng, &cfg)
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let mut store: ParamStore<f64> = ParamStore::new();
            init_model(&mut store, &cfg, &mut rng).unwrap();
            let mut tape = Tape::new();
            let (logits, _) = forward(&mut tape, &mut store, &cfg, &image, true).unwrap();
            logits.data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let mut cfg = micro(Variant::Hexformer, Aggregation::ExpAgg);
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = micro(Variant::Hexformer, Aggregation::ExpAgg);
        cfg.curvature = 0.5;
        assert!(cfg.validate().is_err());
        let mut cfg = micro(Variant::Euclidean, Aggregation::ExpAgg);
        cfg.curvature = 0.5;
        assert!(cfg.validate().is_ok());
    }
}
