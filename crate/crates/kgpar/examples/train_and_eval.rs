//! Train the full model on synthetic data and report held-out metrics.
//!
//! Run with: cargo run --release --example train_and_eval

use kgpar::dataio::{generate_synthetic, Dataset, SyntheticSpec};
use kgpar::metrics::compute_metrics;
use kgpar::model::{evaluate_scores, train_epoch, Model, ModelConfig, PreparedData, Trainer};
use kgpar::pipeline::SCORE_THRESHOLD;

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
    let train_count = 200;
    let data = generate_synthetic(&spec)?;
    let dataset = Dataset {
        labels: data.labels,
        patches: data.patches,
        text: data.text,
        regions: data.regions,
    };

    let config = ModelConfig {
        d: spec.d,
        epochs: 120,
        ..Default::default()
    };
    let cls = kgpar::dataio::pooled_image_cls(&dataset.patches)?;
    let train_labels = dataset.labels.slice(0, train_count)?;
    let cls_train = kgpar::dataio::EmbeddingTable::new(
        train_labels.image_ids.clone(),
        kgpar::dataio::EmbeddingKind::ImageCls,
        None,
        kgpar::tensor::Tensor::new(
            train_count,
            cls.dim(),
            cls.data().data()[..train_count * cls.dim()].to_vec(),
        )?,
    )?;
    let kg = kgpar::kgraph::build_kg(
        &train_labels,
        &dataset.text,
        &cls_train,
        &dataset.regions,
        config.context_samples,
    )?;

    let train_data = PreparedData::prepare(&dataset, &kg, 0, train_count, false)?;
    let eval_data = PreparedData::prepare(&dataset, &kg, train_count, spec.n_images, false)?;

    let mut model = Model::new(config.clone(), train_data.patch_blocks[0].rows(), 1)?;
    let mut trainer = Trainer::new(&model, 2, false);

    let start = std::time::Instant::now();
    for epoch in 0..config.epochs {
        let stats = train_epoch(&mut model, &train_data, &mut trainer, epoch)?;
        if epoch % 10 == 0 || epoch + 1 == config.epochs {
            let scores = evaluate_scores(&model, &eval_data, false)?;
            let report = compute_metrics(&scores, &eval_data.label_rows, SCORE_THRESHOLD)?;
            let train_scores = evaluate_scores(&model, &train_data, false)?;
            let train_report =
                compute_metrics(&train_scores, &train_data.label_rows, SCORE_THRESHOLD)?;
            println!(
                "epoch {:>3}  loss {:.4}  train mA {:.4}  test mA {:.4}  F1 {:.4}  ({:.1?} elapsed)",
                epoch,
                stats.mean_loss,
                train_report.ma,
                report.ma,
                report.f1,
                start.elapsed()
            );
        }
    }

    let scores = evaluate_scores(&model, &eval_data, false)?;
    let report = compute_metrics(&scores, &eval_data.label_rows, SCORE_THRESHOLD)?;
    println!(
        "final: mA {:.4}  Acc {:.4}  Prec {:.4}  Rec {:.4}  F1 {:.4}",
        report.ma, report.acc, report.prec, report.rec, report.f1
    );
    Ok(())
}
