//! Render token saliencies as an HTML page and as an ANSI-colored line.
//!
//! ```text
//! cargo run --example heatmap > /tmp/heat.html
//! ```

use salientseq::evaluate::{render_heatmap, HeatMap, RenderFormat};
use salientseq::saliency::minmax_normalize;

fn main() -> salientseq::Result<()> {
    let tokens: Vec<String> = "the plot was zark & dull".split(' ').map(String::from).collect();
    let raw = [0.01, 0.05, -0.02, 0.61, 0.0, 0.12];
    let (norm, _) = minmax_normalize(&raw)?;
    let map = HeatMap::new(tokens, norm, Some("class 0".into()))?;

    eprint!("{}", render_heatmap(&map, RenderFormat::Ansi));
    print!("{}", render_heatmap(&map, RenderFormat::Html));
    Ok(())
}
