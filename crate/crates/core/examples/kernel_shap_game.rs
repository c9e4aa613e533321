//! Kernel SHAP on a plain cooperative game, no model involved. Shows the
//! coalition-value callback and compares against enumerated Shapley values.
//!
//! ```text
//! cargo run --example kernel_shap_game
//! ```

use salientseq::saliency::{kernel_shap, kernel_shap_sampling, shapley_values};

/// A glove game with an interaction bonus: left gloves are players 0..3,
/// right gloves 3..6, and player 6 pays out when present with any pair.
fn game(present: &[bool]) -> f64 {
    let left = present[..3].iter().filter(|&&b| b).count();
    let right = present[3..6].iter().filter(|&&b| b).count();
    let pairs = left.min(right) as f64;
    pairs + if present[6] && pairs > 0.0 { 0.5 } else { 0.0 }
}

fn main() -> salientseq::Result<()> {
    let m = 7;
    let table: Vec<f64> = (0..1usize << m)
        .map(|bits| game(&(0..m).map(|i| bits >> i & 1 == 1).collect::<Vec<_>>()))
        .collect();
    let exact = shapley_values(m, &table)?;

    let eval = |masks: &[Vec<bool>]| Ok(masks.iter().map(|mk| game(mk)).collect());
    // a budget of 2^m - 2 covers every proper coalition, so this enumerates
    let full = kernel_shap(m, (1 << m) - 2, 0, eval)?;
    let sampled = kernel_shap_sampling(m, 40, 0, eval)?;

    println!("player   exact  enumerated  sampled(40)");
    for i in 0..m {
        println!(
            "{i:>6}  {:>6.3}  {:>10.3}  {:>11.3}",
            exact[i], full.phi[i], sampled.phi[i]
        );
    }
    println!(
        "enumerated: {} ({} evaluations); sampled used {} evaluations",
        full.enumerated, full.evaluations, sampled.evaluations
    );
    println!(
        "efficiency: sum phi = {:.6}, v(N) - v(0) = {:.6}",
        sampled.phi.iter().sum::<f64>(),
        sampled.full_value - sampled.base_value
    );
    Ok(())
}
