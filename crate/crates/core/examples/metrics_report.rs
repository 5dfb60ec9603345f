//! Confusion-matrix metrics, rank AUC and the error-rate report.

use mmfusion::metrics::{confusion_matrix, roc_auc, Metrics};
use mmfusion::report::{Report, ReportEntry};
use mmfusion::task::Task;

fn main() -> mmfusion::Result<()> {
    let scores = [0.9, 0.8, 0.35, 0.6, 0.2, 0.1, 0.55, 0.7];
    let labels = [1u8, 1, 1, 1, 0, 0, 0, 0];
    let auc = roc_auc(&scores, &labels)?;
    let pairs = scores
        .iter()
        .zip(labels)
        .map(|(&s, l)| (l as usize, usize::from(s >= 0.5)));
    let binary = Metrics::from_confusion(confusion_matrix(pairs, 2), Some(auc))?;
    println!(
        "binary: acc {:.3} sen {:.3} spe {:.3} auc {:.4}",
        binary.acc, binary.sen, binary.spe, auc
    );

    let four = Metrics::from_confusion(
        vec![vec![9, 1, 0, 0], vec![2, 6, 2, 0], vec![0, 2, 7, 1], vec![0, 0, 1, 9]],
        None,
    )?;

    let mut report = Report::default();
    report.push(ReportEntry {
        task: Task::AdNc,
        provider: "mock".into(),
        shots: 5,
        metrics: binary.clone(),
    });
    report.push(ReportEntry {
        task: Task::AdNc,
        provider: "mock".into(),
        shots: 0,
        metrics: binary,
    });
    report.push(ReportEntry {
        task: Task::FourWay,
        provider: "mock".into(),
        shots: 5,
        metrics: four,
    });
    print!("{}", report.render_text());
    println!(
        "\n{}",
        serde_json::to_string_pretty(&report.to_json()).unwrap_or_default()
    );
    Ok(())
}
