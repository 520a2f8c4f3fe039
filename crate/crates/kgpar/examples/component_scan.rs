//! Scratch: component scan for the hypergraph blocks.

use kgpar::dataio::{generate_synthetic, Dataset, SyntheticSpec};
use kgpar::encoders::EncoderVariant;
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
        .unwrap_or(60);
    let base = ModelConfig {
        d: 32,
        epochs,
        ..Default::default()
    };
    let cases = [
        ("baseline (none)", false, false, EncoderVariant::UniGcn2),
        ("local only", true, false, EncoderVariant::UniGcn2),
        ("global only", false, true, EncoderVariant::UniGcn2),
        ("full gcn2", true, true, EncoderVariant::UniGcn2),
        ("full unigin", true, true, EncoderVariant::UniGin),
        ("full unigcn", true, true, EncoderVariant::UniGcn),
    ];
    for (name, local, global, variant) in cases {
        let config = ModelConfig {
            use_local_hg: local,
            use_global_hg: global,
            variant,
            ..base.clone()
        };
        let start = std::time::Instant::now();
        let (_, _, r) = train_and_evaluate(&dataset, &config, 200, 7, false).unwrap();
        println!(
            "{name:<18} mA {:.4} Acc {:.4} F1 {:.4}  ({:.0?})",
            r.ma,
            r.acc,
            r.f1,
            start.elapsed()
        );
    }
    Ok(())
}
