use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{HarnessError, Result};
use crate::features::EmotionLabel;
use crate::fusion::FusionPolicy;

const K: usize = EmotionLabel::COUNT;

/// Counts indexed `[actual][predicted]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn add(&mut self, actual: EmotionLabel, predicted: EmotionLabel) {
        self.counts[actual.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`, zero for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    pub fn row_sums(&self) -> [u64; K] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self
            .counts
            .iter_mut()
            .flatten()
            .zip(other.counts.iter().flatten())
        {
            *a += b;
        }
    }

    /// Header row of class names, then one row of counts per actual class.
    pub fn to_csv(&self) -> String {
        let mut out = EmotionLabel::ALL.map(|l| l.name()).join(",");
        out.push('\n');
        for row in &self.counts {
            out.push_str(&row.map(|c| c.to_string()).join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentMode {
    Individual,
    Centralized,
    Federated,
}

impl ExperimentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentMode::Individual => "individual",
            ExperimentMode::Centralized => "centralized",
            ExperimentMode::Federated => "federated",
        }
    }
}

impl FromStr for ExperimentMode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "individual" => Ok(ExperimentMode::Individual),
            "centralized" => Ok(ExperimentMode::Centralized),
            "federated" => Ok(ExperimentMode::Federated),
            _ => Err(HarnessError::UnknownMode(s.to_string())),
        }
    }
}

/// One epoch (individual, centralized) or one round (federated).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub index: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub mode: ExperimentMode,
    pub wall_clock_s: f64,
    /// Federation rounds; zero outside federated mode.
    pub rounds: usize,
    /// Local epochs per round, or total epochs outside federated mode.
    pub epochs: usize,
    pub clients: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub fusion: FusionPolicy,
    pub curve: Vec<CurvePoint>,
    pub confusion_physio: ConfusionMatrix,
    pub confusion_visual: ConfusionMatrix,
    pub confusion_fused: ConfusionMatrix,
}

impl ExperimentReport {
    pub fn accuracy_physio(&self) -> f64 {
        self.confusion_physio.accuracy()
    }

    pub fn accuracy_visual(&self) -> f64 {
        self.confusion_visual.accuracy()
    }

    pub fn accuracy_fused(&self) -> f64 {
        self.confusion_fused.accuracy()
    }

    /// Per-round (or per-epoch) wall-clock times.
    pub fn step_times(&self) -> Vec<f64> {
        self.curve.iter().map(|p| p.wall_clock_s).collect()
    }

    /// The report with every timing field zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_clock_s = 0.0;
        r.curve.iter_mut().for_each(|p| p.wall_clock_s = 0.0);
        r
    }

    pub fn metrics_csv(&self) -> String {
        curve_csv(&self.curve)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode: {}", self.mode.as_str());
        let _ = writeln!(s, "clients: {}", self.clients);
        let _ = writeln!(s, "rounds: {}", self.rounds);
        let _ = writeln!(s, "epochs: {}", self.epochs);
        let _ = writeln!(s, "train_samples: {}", self.train_samples);
        let _ = writeln!(s, "test_samples: {}", self.test_samples);
        let _ = writeln!(s, "fusion: {}", self.fusion.as_str());
        let _ = writeln!(s, "accuracy_physio: {:.6}", self.accuracy_physio());
        let _ = writeln!(s, "accuracy_visual: {:.6}", self.accuracy_visual());
        let _ = writeln!(s, "accuracy_fused: {:.6}", self.accuracy_fused());
        let _ = writeln!(s, "wall_clock_s: {:.3}", self.wall_clock_s);
        s
    }
}

/// `index,loss,accuracy,test_loss,test_accuracy,wall_clock_s` rows; missing
/// test metrics are empty cells.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut out = String::from("index,loss,accuracy,test_loss,test_accuracy,wall_clock_s\n");
    for p in curve {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{},{:.6}",
            p.index,
            p.loss,
            p.accuracy,
            opt(p.test_loss),
            opt(p.test_accuracy),
            p.wall_clock_s
        );
    }
    out
}

/// Writes the three confusion matrices, `metrics.csv` and `summary.txt`
/// into `dir`, creating it if needed. Returns the paths written.
pub fn export_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |e: std::io::Error| HarnessError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let files = [
        ("confusion_physio.csv", report.confusion_physio.to_csv()),
        ("confusion_visual.csv", report.confusion_visual.to_csv()),
        ("confusion_fused.csv", report.confusion_fused.to_csv()),
        ("metrics.csv", report.metrics_csv()),
        ("summary.txt", report.summary()),
    ];
    files
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(io)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn diagonal_report() -> ExperimentReport {
        let mut cm = ConfusionMatrix::default();
        for l in EmotionLabel::ALL {
            for _ in 0..=l.index() {
                cm.add(l, l);
            }
        }
        ExperimentReport {
            mode: ExperimentMode::Individual,
            wall_clock_s: 1.5,
            rounds: 0,
            epochs: 4,
            clients: 1,
            train_samples: 10,
            test_samples: 28,
            fusion: FusionPolicy::default(),
            curve: vec![CurvePoint {
                index: 0,
                loss: 1.0,
                accuracy: 0.5,
                test_loss: None,
                test_accuracy: Some(1.0),
                wall_clock_s: 1.5,
            }],
            confusion_physio: cm,
            confusion_visual: cm,
            confusion_fused: cm,
        }
    }

    #[test]
    fn matrix_counts() {
        let mut cm = ConfusionMatrix::default();
        cm.add(EmotionLabel::Sad, EmotionLabel::Sad);
        cm.add(EmotionLabel::Sad, EmotionLabel::Fear);
        cm.add(EmotionLabel::Happy, EmotionLabel::Happy);
        assert_eq!((cm.total(), cm.trace()), (3, 2));
        assert_eq!(cm.accuracy(), 2.0 / 3.0);
        assert_eq!(cm.row_sums()[EmotionLabel::Sad.index()], 2);
        assert_eq!(ConfusionMatrix::default().accuracy(), 0.0);
    }

    #[test]
    fn diagonal_csv_has_zero_off_diagonal() {
        let csv = diagonal_report().confusion_fused.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "Angry,Disgust,Fear,Happy,Sad,Surprise,Neutral"
        );
        for (i, line) in lines.enumerate() {
            let cells: Vec<u64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            assert_eq!(cells.len(), 7);
            for (j, c) in cells.into_iter().enumerate() {
                assert_eq!(c, if i == j { i as u64 + 1 } else { 0 });
            }
        }
    }

    #[test]
    fn export_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let r = diagonal_report();
        let pa = export_report(&r, &a).unwrap();
        let pb = export_report(&r, &b).unwrap();
        assert_eq!(pa.len(), 5);
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }

    #[test]
    fn modes_parse() {
        assert_eq!(
            "federated".parse::<ExperimentMode>().unwrap(),
            ExperimentMode::Federated
        );
        assert!("hybrid".parse::<ExperimentMode>().is_err());
    }
}
