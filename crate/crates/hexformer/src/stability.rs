//! Numerical-stability instrumentation: gradient-magnitude histograms, a
//! non-finite watchdog, a precision-collapse reproduction for the centroid
//! aggregator in f32, and an A/B stability comparison between aggregators.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Number of log-spaced magnitude bins in a gradient histogram.
pub const HIST_BINS: usize = 64;
/// Lower edge of the binned range (log10 = -12).
pub const HIST_LO_LOG10: f64 = -12.0;
/// Upper edge of the binned range (log10 = 4).
pub const HIST_HI_LOG10: f64 = 4.0;

/// Histogram of |gradient| over all trainable parameters at one iteration.
///
/// Invariant: `bins.sum() + underflow + overflow + zeros + nonfinite == total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradHistogramRecord {
    pub iteration: usize,
    /// Counts for 64 equal bins of log10|g| over [-12, 4).
    pub bins: Vec<u64>,
    /// Nonzero magnitudes below 1e-12.
    pub underflow: u64,
    /// Magnitudes at or above 1e4.
    pub overflow: u64,
    pub zeros: u64,
    pub nonfinite: u64,
    pub total: u64,
}

impl GradHistogramRecord {
    /// Check the conservation invariant: every scalar lands in exactly one
    /// bucket.
    pub fn is_conserved(&self) -> bool {
        self.bins.iter().sum::<u64>() + self.underflow + self.overflow + self.zeros
            + self.nonfinite
            == self.total
    }
}

/// Bin the gradient magnitudes of all trainable parameters.
pub fn record_grad_histogram<T: Scalar>(
    store: &ParamStore<T>,
    iteration: usize,
) -> GradHistogramRecord {
    let mut rec = GradHistogramRecord {
        iteration,
        bins: vec![0; HIST_BINS],
        underflow: 0,
        overflow: 0,
        zeros: 0,
        nonfinite: 0,
        total: 0,
    };
    let width = (HIST_HI_LOG10 - HIST_LO_LOG10) / HIST_BINS as f64;
    for p in store.trainable() {
        for &g in &p.grad {
            rec.total += 1;
            let g = g.as_f64();
            if !g.is_finite() {
                rec.nonfinite += 1;
            } else if g == 0.0 {
                rec.zeros += 1;
            } else {
                let lg = g.abs().log10();
                if lg < HIST_LO_LOG10 {
                    rec.underflow += 1;
                } else if lg >= HIST_HI_LOG10 {
                    rec.overflow += 1;
                } else {
                    let idx = ((lg - HIST_LO_LOG10) / width) as usize;
                    rec.bins[idx.min(HIST_BINS - 1)] += 1;
                }
            }
        }
    }
    rec
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatchdogPolicy {
    /// Record the event and keep training.
    Continue,
    /// Record the event and request a halt at the next step boundary.
    Halt,
}

/// A detected numerical incident: non-finite values or a degenerate guard
/// activation, tagged with where it happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatchdogEvent {
    pub iteration: usize,
    /// The operation that produced the values (e.g. "forward", "backward",
    /// "centroid_agg").
    pub op: String,
    /// The tensor role within that operation (e.g. "logits", a parameter
    /// name, "denominator floor").
    pub role: String,
    /// How many scalars were affected.
    pub count: usize,
    /// Largest finite magnitude seen alongside the incident, if any.
    pub max_finite: Option<f64>,
}

/// Scans tensors for non-finite values and collects [`WatchdogEvent`]s.
#[derive(Debug, Clone)]
pub struct Watchdog {
    policy: WatchdogPolicy,
    events: Vec<WatchdogEvent>,
    halt: bool,
}

impl Watchdog {
    pub fn new(policy: WatchdogPolicy) -> Self {
        Watchdog {
            policy,
            events: Vec::new(),
            halt: false,
        }
    }

    /// Scan `data` for NaN/Inf; record an event if any are present.
    /// Returns true if an event was recorded.
    pub fn check<T: Scalar>(&mut self, iteration: usize, op: &str, role: &str, data: &[T]) -> bool {
        let mut count = 0usize;
        let mut max_finite: Option<f64> = None;
        for &v in data {
            let v = v.as_f64();
            if v.is_finite() {
                let a = v.abs();
                max_finite = Some(max_finite.map_or(a, |m: f64| m.max(a)));
            } else {
                count += 1;
            }
        }
        if count == 0 {
            return false;
        }
        self.push(WatchdogEvent {
            iteration,
            op: op.into(),
            role: role.into(),
            count,
            max_finite,
        });
        true
    }

    /// Record a degenerate-but-finite incident (e.g. a guard floor firing).
    pub fn record_degenerate(&mut self, iteration: usize, op: &str, role: &str, count: usize) {
        if count == 0 {
            return;
        }
        self.push(WatchdogEvent {
            iteration,
            op: op.into(),
            role: role.into(),
            count,
            max_finite: None,
        });
    }

    fn push(&mut self, event: WatchdogEvent) {
        self.events.push(event);
        if self.policy == WatchdogPolicy::Halt {
            self.halt = true;
        }
    }

    pub fn events(&self) -> &[WatchdogEvent] {
        &self.events
    }

    pub fn should_halt(&self) -> bool {
        self.halt
    }
}

/// One verified fact in the f32 centroid-collapse walkthrough.
#[derive(Debug, Clone, Serialize)]
pub struct StepCheck {
    pub name: String,
    pub detail: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CollapseReport {
    pub steps: Vec<StepCheck>,
    /// The same quadratic form evaluated in f64 for contrast.
    pub f64_quad_form: f64,
}

impl CollapseReport {
    pub fn passes(&self) -> bool {
        self.steps.iter().all(|s| s.pass)
    }
}

/// Reproduce, step by step in f32, how the centroid aggregator collapses on
/// large-magnitude hyperboloid points while the exponential-map aggregator
/// stays finite.
///
/// Setup (curvature -1, one space dimension): token A has space coordinate
/// 1e8 so its time coordinate is sqrt(1e16 + 1); token B is the origin
/// (1, 0). Attention weights are (0.5, 0.5).
pub fn centroid_collapse_repro() -> CollapseReport {
    use crate::attention::{centroid_agg, exp_agg};
    use crate::lorentz::{validate_rows, Curvature};
    use crate::tensor::{Tape, Tensor};

    let mut steps = Vec::new();
    let mut check = |name: &str, detail: String, pass: bool| {
        steps.push(StepCheck {
            name: name.into(),
            detail,
            pass,
        });
    };

    // Step 1: the time-coordinate lift absorbs the +1 entirely in f32.
    let x_t = (1e16f32 + 1.0).sqrt();
    check(
        "lift_absorbs_curvature_term",
        format!("fl32(sqrt(1e16 + 1)) = {x_t:e}, expected exactly 1e8"),
        x_t == 1e8,
    );

    // Step 2: averaging with the origin loses the origin's contribution to
    // the time coordinate: fl32(0.5 * 1e8 + 0.5 * 1) = 5e7 exactly.
    let vbar_t = 0.5f32 * x_t + 0.5f32 * 1.0f32;
    check(
        "mean_time_coordinate_rounds",
        format!("fl32(0.5*1e8 + 0.5) = {vbar_t:e}, expected exactly 5e7"),
        vbar_t == 5e7,
    );

    // Step 3: the Minkowski quadratic form of the mean cancels to exactly 0
    // in f32 (the true value is about -5e7).
    let vbar_s = 0.5f32 * 1e8;
    let quad_f32 = -(vbar_t * vbar_t) + vbar_s * vbar_s;
    check(
        "quadratic_form_cancels_to_zero",
        format!("fl32(-vt^2 + vs^2) = {quad_f32:e}, expected exactly 0"),
        quad_f32 == 0.0,
    );

    // Step 4: the guarded centroid division then inflates the output to a
    // physically meaningless magnitude >= 1e15.
    let v = Tensor::from_vec(vec![x_t, 1e8f32, 1.0, 0.0], &[2, 2]).unwrap();
    let alpha = Tensor::from_vec(vec![0.5f32, 0.5], &[1, 2]).unwrap();
    let curv = Curvature::new(-1.0).unwrap();
    let mut tape: Tape<f32> = Tape::new();
    let centroid = centroid_agg(&mut tape, &alpha, &v, curv, 1e-8);
    let (floor_pass, mag) = match &centroid {
        Ok((out, hits)) => {
            let mag = out
                .data()
                .iter()
                .fold(0.0f32, |m, v| m.max(v.abs()));
            (*hits >= 1 && mag >= 1e15, mag)
        }
        Err(_) => (false, 0.0),
    };
    check(
        "floored_centroid_explodes",
        format!("guard floor fired and |centroid| = {mag:e} >= 1e15"),
        floor_pass,
    );

    // Step 5: the exponential-map aggregator on the same inputs is finite
    // and stays on the hyperboloid.
    let mut tape: Tape<f32> = Tape::new();
    let (exp_pass, detail) = match exp_agg(&mut tape, &alpha, &v, curv) {
        Ok(out) => {
            let finite = out.data().iter().all(|v| v.is_finite());
            let reports = validate_rows(&out, curv, 1e-2);
            let on_manifold = reports.iter().all(|r| r.pass);
            (
                finite && on_manifold,
                format!(
                    "exp-map aggregate = {:?}, finite = {finite}, on-manifold = {on_manifold}",
                    out.data()
                ),
            )
        }
        Err(e) => (false, format!("exp-map aggregation failed: {e}")),
    };
    check("exp_map_aggregate_stays_on_manifold", detail, exp_pass);

    // The honest f64 value of the same quadratic form, for contrast.
    let x_t64 = (1e16f64 + 1.0).sqrt();
    let vt64 = 0.5 * x_t64 + 0.5;
    let f64_quad_form = -(vt64 * vt64) + 5e7f64 * 5e7f64;

    CollapseReport {
        steps,
        f64_quad_form,
    }
}

/// Outcome of one seed in an aggregator stability comparison.
#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub exp_agg_events: usize,
    pub centroid_events: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub per_seed: Vec<SeedOutcome>,
}

impl StabilityReport {
    /// The pass condition: the exponential-map aggregator produces no
    /// watchdog events, and never more than the centroid aggregator.
    pub fn passes(&self) -> bool {
        self.per_seed
            .iter()
            .all(|s| s.exp_agg_events == 0 && s.exp_agg_events <= s.centroid_events)
    }
}

/// Train the same configuration with both aggregators across several seeds
/// and compare watchdog event counts. The caller chooses how adversarial the
/// base config is (input scale, value-projection gain, precision).
pub fn stability_compare(
    base: &crate::harness::TrainConfig,
    seeds: &[u64],
) -> Result<StabilityReport> {
    use crate::attention::Aggregation;

    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let run = |agg: Aggregation| -> Result<usize> {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.model.aggregation = agg;
            let events = match cfg.precision {
                crate::scalar::Precision::F32 => {
                    crate::harness::train::<f32>(&cfg)?.summary.watchdog_events
                }
                crate::scalar::Precision::F64 => {
                    crate::harness::train::<f64>(&cfg)?.summary.watchdog_events
                }
            };
            Ok(events)
        };
        per_seed.push(SeedOutcome {
            seed,
            exp_agg_events: run(Aggregation::ExpAgg)?,
            centroid_events: run(Aggregation::Centroid)?,
        });
    }
    Ok(StabilityReport { per_seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;

    #[test]
    fn histogram_conserves_counts_and_bins_correctly() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("w", vec![0.0; 8], &[8], ParamKind::Euclidean);
        store.get_mut("w").unwrap().grad = vec![
            0.0,
            1e-15,         // underflow
            1e5,           // overflow
            f64::NAN,      // nonfinite
            f64::INFINITY, // nonfinite
            1.0,           // log10 = 0 -> bin 48
            1e-12,         // exactly the lower edge -> bin 0
            9.9e3,         // just under the upper edge -> last bin
        ];
        let rec = record_grad_histogram(&store, 7);
        assert_eq!(rec.iteration, 7);
        assert_eq!(rec.total, 8);
        assert_eq!(rec.zeros, 1);
        assert_eq!(rec.underflow, 1);
        assert_eq!(rec.overflow, 1);
        assert_eq!(rec.nonfinite, 2);
        assert!(rec.is_conserved());
        assert_eq!(rec.bins[0], 1); // 1e-12
        assert_eq!(rec.bins[48], 1); // 1.0
        assert_eq!(rec.bins[HIST_BINS - 1], 1); // 9.9e3
    }

    #[test]
    fn histogram_ignores_buffers() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("running", vec![0.0; 4], &[4], ParamKind::Buffer);
        store.get_mut("running").unwrap().grad = vec![f64::NAN; 4];
        let rec = record_grad_histogram(&store, 0);
        assert_eq!(rec.total, 0);
        assert!(rec.is_conserved());
    }

    #[test]
    fn watchdog_records_nonfinite_and_halts_under_halt_policy() {
        let mut wd = Watchdog::new(WatchdogPolicy::Halt);
        assert!(!wd.check(0, "forward", "logits", &[1.0f64, 2.0]));
        assert!(!wd.should_halt());
        assert!(wd.check(1, "forward", "logits", &[1.0f64, f64::NAN, -3.0]));
        assert!(wd.should_halt());
        let e = &wd.events()[0];
        assert_eq!(e.iteration, 1);
        assert_eq!(e.count, 1);
        assert_eq!(e.max_finite, Some(3.0));
    }

    #[test]
    fn watchdog_continue_policy_never_halts() {
        let mut wd = Watchdog::new(WatchdogPolicy::Continue);
        wd.check(0, "backward", "w", &[f64::INFINITY]);
        wd.record_degenerate(1, "centroid_agg", "denominator floor", 3);
        wd.record_degenerate(2, "centroid_agg", "denominator floor", 0); // ignored
        assert_eq!(wd.events().len(), 2);
        assert!(!wd.should_halt());
    }

    #[test]
    fn watchdog_events_serialize_to_json() {
        let mut wd = Watchdog::new(WatchdogPolicy::Continue);
        wd.check(3, "forward", "logits", &[f64::NAN]);
        let line = serde_json::to_string(&wd.events()[0]).unwrap();
        assert!(line.contains("\"iteration\":3"));
    }

    #[test]
    fn collapse_repro_passes_and_f64_disagrees() {
        let report = centroid_collapse_repro();
        for s in &report.steps {
            assert!(s.pass, "step {} failed: {}", s.name, s.detail);
        }
        assert_eq!(report.steps.len(), 5);
        // f64 sees a decisively negative quadratic form where f32 saw zero.
        assert!((report.f64_quad_form + 5e7).abs() < 1.0, "{}", report.f64_quad_form);
    }
}
