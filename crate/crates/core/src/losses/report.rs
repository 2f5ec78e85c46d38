use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result};
use crate::model::{DecoderKind, Teacher};

/// Loss components of one decoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecoderLosses {
    pub nll: f64,
    pub outcome_kd: f64,
    pub hint_kd: f64,
    pub total: f64,
}

impl DecoderLosses {
    pub fn new(nll: f64, outcome_kd: f64, hint_kd: f64) -> Self {
        DecoderLosses {
            nll,
            outcome_kd,
            hint_kd,
            total: nll + outcome_kd + hint_kd,
        }
    }

    fn check(&self, decoder: DecoderKind) -> Result<()> {
        for (name, v) in [
            ("nll", self.nll),
            ("outcome_kd", self.outcome_kd),
            ("hint_kd", self.hint_kd),
            ("total", self.total),
        ] {
            ensure_finite(&format!("{decoder} {name}"), v)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscLoss {
    pub teacher: Teacher,
    /// Zero-based layer.
    pub layer: usize,
    pub loss: f64,
}

/// All losses of one optimization step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub p1: DecoderLosses,
    pub p2: DecoderLosses,
    pub s: DecoderLosses,
    pub discriminators: Vec<DiscLoss>,
}

/// Builds a report from per-decoder components ordered `[P1, P2, S]`,
/// rejecting any non-finite value by name.
pub fn total_losses(nll: [f64; 3], outcome: [f64; 3], hint: [f64; 3]) -> Result<LossReport> {
    let report = LossReport {
        p1: DecoderLosses::new(nll[0], outcome[0], hint[0]),
        p2: DecoderLosses::new(nll[1], outcome[1], hint[1]),
        s: DecoderLosses::new(nll[2], outcome[2], hint[2]),
        discriminators: Vec::new(),
    };
    report.validate()?;
    Ok(report)
}

/// One line of the per-step loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub phase: String,
    pub decoder: String,
    pub nll: Option<f64>,
    pub outcome_kd: Option<f64>,
    pub hint_kd: Option<f64>,
    pub total: f64,
    pub disc_losses: Vec<f64>,
}

impl LossReport {
    pub fn decoder(&self, kind: DecoderKind) -> &DecoderLosses {
        match kind {
            DecoderKind::P1 => &self.p1,
            DecoderKind::P2 => &self.p2,
            DecoderKind::S => &self.s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.p1.check(DecoderKind::P1)?;
        self.p2.check(DecoderKind::P2)?;
        self.s.check(DecoderKind::S)?;
        for d in &self.discriminators {
            ensure_finite(&format!("discriminator {:?} layer {}", d.teacher, d.layer + 1), d.loss)?;
        }
        Ok(())
    }

    /// Four records: P1 and P2 (generator phase), S (student phase) and the
    /// discriminator bank (listing P1 layers first, then P2).
    pub fn records(&self, step: u64) -> Vec<LossRecord> {
        let gen = |phase: &str, kind: DecoderKind| {
            let l = self.decoder(kind);
            LossRecord {
                step,
                phase: phase.into(),
                decoder: kind.to_string(),
                nll: Some(l.nll),
                outcome_kd: Some(l.outcome_kd),
                hint_kd: Some(l.hint_kd),
                total: l.total,
                disc_losses: Vec::new(),
            }
        };
        let disc: Vec<f64> = self.discriminators.iter().map(|d| d.loss).collect();
        vec![
            gen("generators", DecoderKind::P1),
            gen("generators", DecoderKind::P2),
            gen("student", DecoderKind::S),
            LossRecord {
                step,
                phase: "discriminators".into(),
                decoder: "D".into(),
                nll: None,
                outcome_kd: None,
                hint_kd: None,
                total: disc.iter().sum(),
                disc_losses: disc,
            },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn totals_are_sums() {
        let r = total_losses([1.0, 2.0, 3.0], [0.1, 0.2, 0.3], [-0.5, -0.25, -1.0]).unwrap();
        assert!((r.p1.total - 0.6).abs() < 1e-12);
        assert!((r.p2.total - 1.95).abs() < 1e-12);
        assert!((r.s.total - 2.3).abs() < 1e-12);
        let plain = total_losses([1.0, 2.0, 3.0], [0.0; 3], [0.0; 3]).unwrap();
        assert_eq!((plain.p1.total, plain.p2.total, plain.s.total), (1.0, 2.0, 3.0));
    }

    #[test]
    fn non_finite_component_is_named() {
        let err = total_losses([1.0, 2.0, 3.0], [0.0, f64::NAN, 0.0], [0.0; 3]).unwrap_err();
        match err {
            Error::Numeric { component } => assert_eq!(component, "P2 outcome_kd"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn records_serialize_as_json_lines() {
        let mut r = total_losses([1.0, 2.0, 3.0], [0.0; 3], [0.0; 3]).unwrap();
        r.discriminators.push(DiscLoss {
            teacher: Teacher::P1,
            layer: 0,
            loss: 1.5,
        });
        let recs = r.records(7);
        assert_eq!(recs.len(), 4);
        let line = serde_json::to_string(&recs[3]).unwrap();
        assert!(line.contains("\"phase\":\"discriminators\""));
        assert!(line.contains("\"disc_losses\":[1.5]"));
        let back: LossRecord = serde_json::from_str(&serde_json::to_string(&recs[0]).unwrap()).unwrap();
        assert_eq!(back, recs[0]);
        assert_eq!(back.step, 7);
    }
}
