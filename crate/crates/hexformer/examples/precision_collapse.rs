//! Walk through, in single precision, how the normalized-centroid aggregator
//! destroys information on large-magnitude hyperboloid points while the
//! exponential-map aggregator survives.
//!
//! Run with: cargo run --example precision_collapse

use hexformer::stability::centroid_collapse_repro;

fn main() {
    println!("setup: curvature -1, one space dimension.");
    println!("token A: space coordinate 1e8, time coordinate sqrt(1e16 + 1)");
    println!("token B: the origin (1, 0); attention weights (0.5, 0.5)\n");

    let report = centroid_collapse_repro();
    for (i, s) in report.steps.iter().enumerate() {
        println!("step {} [{}] {}", i + 1, if s.pass { "PASS" } else { "FAIL" }, s.name);
        println!("        {}", s.detail);
    }
    println!(
        "\nin f64 the same quadratic form is {:.1} - a decisively negative value\n\
         that f32 rounds to exactly zero, which is what sends the guarded\n\
         centroid division to ~1e15.",
        report.f64_quad_form
    );
    std::process::exit(if report.passes() { 0 } else { 1 });
}
