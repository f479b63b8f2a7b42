//! Inference job records exchanged with the annotation service.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Infer,
    SrInfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRecord {
    pub job_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub inputs: Vec<String>,
    pub result: Option<String>,
    pub error: Option<String>,
    /// PSNR against a ground-truth image with the same reference, when one exists.
    #[serde(default)]
    pub psnr_db: Option<f64>,
}

impl JobRecord {
    pub fn queued(job_id: impl Into<String>, kind: JobKind, inputs: Vec<String>) -> Self {
        JobRecord {
            job_id: job_id.into(),
            kind,
            state: JobState::Queued,
            inputs,
            result: None,
            error: None,
            psnr_db: None,
        }
    }

    fn advance(&mut self, from: JobState, to: JobState) -> Result<()> {
        if self.state != from {
            return Err(Error::Parameter(format!(
                "job {} cannot move from {:?} to {to:?}",
                self.job_id, self.state
            )));
        }
        self.state = to;
        Ok(())
    }

    pub fn start(&mut self) -> Result<()> {
        self.advance(JobState::Queued, JobState::Running)
    }

    pub fn finish(&mut self, result: impl Into<String>, psnr_db: Option<f64>) -> Result<()> {
        self.advance(JobState::Running, JobState::Done)?;
        self.result = Some(result.into());
        self.psnr_db = psnr_db;
        Ok(())
    }

    pub fn fail(&mut self, message: impl Into<String>) -> Result<()> {
        self.advance(JobState::Running, JobState::Failed)?;
        self.error = Some(message.into());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifecycle() {
        let mut j = JobRecord::queued("job-000001", JobKind::Infer, vec!["a.png".into()]);
        assert!(j.finish("x", None).is_err());
        j.start().unwrap();
        assert!(j.start().is_err());
        j.finish("results/job-000001.png", Some(21.5)).unwrap();
        assert!(j.state.is_terminal());
        assert!(j.fail("late").is_err());
        assert_eq!(j.state, JobState::Done);
    }

    #[test]
    fn wire_format() {
        let mut j = JobRecord::queued("j1", JobKind::SrInfer, vec![]);
        j.start().unwrap();
        j.fail("boom").unwrap();
        let v: serde_json::Value = serde_json::to_value(&j).unwrap();
        assert_eq!(v["kind"], "sr_infer");
        assert_eq!(v["state"], "failed");
        assert_eq!(v["error"], "boom");
        assert!(v["result"].is_null());
        let back: JobRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, j);
    }
}
