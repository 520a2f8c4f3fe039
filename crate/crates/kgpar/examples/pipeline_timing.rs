//! Scratch: time the exact train_and_evaluate path the acceptance suite uses.

use kgpar::dataio::{generate_synthetic, Dataset, SyntheticSpec};
use kgpar::model::ModelConfig;
use kgpar::pipeline::train_and_evaluate;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec {
        n_images: 300,
        m_attrs: 6,
        d: 32,
        grid_rows: 8,
        grid_cols: 4,
        seed: 7,
        decodability: 0.8,
    };
    let data = generate_synthetic(&spec)?;
    let dataset = Dataset {
        labels: data.labels,
        patches: data.patches,
        text: data.text,
        regions: data.regions,
    };
    let epochs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(120);
    let config = ModelConfig {
        d: 32,
        epochs,
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let (_, _, report) = train_and_evaluate(&dataset, &config, 200, 7, false).unwrap();
    println!(
        "full model, {epochs} epochs: mA {:.4} Acc {:.4} F1 {:.4} in {:.1?}",
        report.ma, report.acc, report.f1, start.elapsed()
    );

    let baseline = ModelConfig {
        use_local_hg: false,
        use_global_hg: false,
        ..config
    };
    let start = std::time::Instant::now();
    let (_, _, base) = train_and_evaluate(&dataset, &baseline, 200, 7, false).unwrap();
    println!(
        "baseline (no hypergraphs): mA {:.4} Acc {:.4} F1 {:.4} in {:.1?}",
        base.ma, base.acc, base.f1, start.elapsed()
    );
    Ok(())
}
