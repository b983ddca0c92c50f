//! A tour of the Lorentz-model primitives: lifting space coordinates onto
//! the hyperboloid, exponential/logarithmic maps, and geodesic distances.
//!
//! Run with: cargo run --example geometry_tour

use hexformer::lorentz::{validate_rows, Curvature};
use hexformer::tensor::{Tape, Tensor};

fn main() -> hexformer::Result<()> {
    let curv = Curvature::new(-1.0)?;
    let mut tape: Tape<f64> = Tape::new();

    // Lift: given space coordinates, solve for the time coordinate that
    // puts the point on the hyperboloid <x,x> = 1/K.
    let space = Tensor::from_vec(vec![0.3, -0.4, 0.5, 1.2, 0.0, -0.7], &[2, 3])?;
    let x = hexformer::lorentz::lift(&mut tape, &space, curv)?;
    println!("lifted points (time coordinate first):");
    for row in 0..2 {
        println!("  {:?}", &x.data()[row * 4..(row + 1) * 4]);
    }
    let reports = validate_rows(&x, curv, 1e-12);
    println!(
        "on-manifold check at 1e-12: {}",
        if reports.iter().all(|r| r.pass) { "pass" } else { "FAIL" }
    );

    // log followed by exp is the identity on the manifold.
    let v = hexformer::lorentz::log_map_origin(&mut tape, &x, curv)?;
    let back = hexformer::lorentz::exp_map_origin(&mut tape, &v, curv)?;
    let max_err = x
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("exp(log(x)) round-trip max abs error: {max_err:.3e}");

    // Geodesic distance: symmetric, zero on the diagonal, and matches the
    // closed form for points a known arclength from the origin.
    let o = hexformer::lorentz::origin_rows(1, 3, curv);
    let p = Tensor::from_vec(vec![1.0f64.cosh(), 1.0f64.sinh(), 0.0, 0.0], &[1, 4])?;
    let d2 = hexformer::lorentz::sq_dist(&mut tape, &o, &p, curv)?;
    println!(
        "squared distance from origin to a point at arclength 1: {:.12} (2cosh(1) - 2 = {:.12})",
        d2.item(),
        2.0 * 1.0f64.cosh() - 2.0
    );

    // Distances are differentiable end to end.
    let s = tape.leaf(&Tensor::from_vec(vec![0.5f64, -0.2, 0.1], &[1, 3])?);
    let q = hexformer::lorentz::lift(&mut tape, &s, curv)?;
    let d2q = hexformer::lorentz::sq_dist(&mut tape, &q, &p, curv)?;
    tape.backward(&d2q)?;
    println!(
        "gradient of squared distance w.r.t. space coordinates: {:?}",
        tape.grad(&s).unwrap()
    );
    Ok(())
}
