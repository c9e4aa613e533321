//! Grouped top-θ overlap on synthetic saliencies: two "explainers" that are
//! noisy copies of a reference, one noisier than the other.
//!
//! ```text
//! cargo run --example overlap
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use salientseq::evaluate::{overlap, overlap_eval, MethodSaliencies};

fn main() -> salientseq::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples: Vec<MethodSaliencies> = (0..200)
        .map(|i| {
            let len = rng.gen_range(5..15);
            let shap: Vec<f64> = (0..len).map(|_| rng.gen::<f64>()).collect();
            let mut noisy = |scale: f64| -> Vec<f64> { shap.iter().map(|v| v + scale * rng.gen::<f64>()).collect() };
            let masking = noisy(1.0);
            let s2s = noisy(0.3);
            MethodSaliencies {
                id: format!("s{i}"),
                shap,
                masking,
                s2s,
            }
        })
        .collect();

    let first = &samples[0];
    println!(
        "sample 0: {} tokens, overlap masking/shap = {}, s2s/shap = {}",
        first.shap.len(),
        overlap(&first.masking, &first.shap, 0.3)?,
        overlap(&first.s2s, &first.shap, 0.3)?
    );

    let report = overlap_eval(&samples, 4, 50, 0.3, Some(17))?;
    print!("{}", report.to_table());
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
