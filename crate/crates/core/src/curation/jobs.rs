//! Teacher jobs and the instruction records built from their answers.

use serde::{Deserialize, Serialize};

use crate::domain::{ImageRef, ImageTextPair, Metric, QualityScore};
use crate::error::{Error, Result};
use crate::scorer::{parse_score, PromptMode, PromptTemplate, TeacherPath, DENSE_CAPTION_PROMPT};

/// Placeholder left in text-only prompts whose dense caption is not yet
/// available.
pub const DENSE_CAPTION_PLACEHOLDER: &str = "{dense_caption}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    DenseCaption,
    Scoring,
}

/// A request for the teacher model. Serializes as the scoring wire request
/// plus `kind`, `path` and `pending`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherJob {
    pub kind: JobKind,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    pub prompt: String,
    pub image: ImageRef,
    pub max_new_tokens: u32,
    pub path: TeacherPath,
    /// Waiting on the pair's dense-caption job; `prompt` still holds the
    /// placeholder.
    #[serde(default)]
    pub pending: bool,
}

impl TeacherJob {
    /// Substitutes the dense caption into a pending job's prompt.
    pub fn resolve(&self, dense_caption: &str) -> TeacherJob {
        let mut job = self.clone();
        if job.pending {
            job.prompt = job.prompt.replacen(DENSE_CAPTION_PLACEHOLDER, dense_caption, 1);
            job.pending = false;
        }
        job
    }
}

#[derive(Debug, Clone)]
pub struct JobOptions {
    pub metrics: Vec<Metric>,
    pub path: TeacherPath,
    pub mode: PromptMode,
    /// Teachers write full rationales, so this is much larger than the
    /// scoring default.
    pub max_new_tokens: u32,
}

impl Default for JobOptions {
    fn default() -> Self {
        JobOptions {
            metrics: Metric::ALL.to_vec(),
            path: TeacherPath::Vision,
            mode: PromptMode::Rationalization,
            max_new_tokens: 512,
        }
    }
}

fn jobs_for_pair(pair: &ImageTextPair, opts: &JobOptions) -> Vec<TeacherJob> {
    let mut jobs = Vec::with_capacity(opts.metrics.len() + 1);
    let needs_caption = opts.path == TeacherPath::TextOnly && pair.dense_caption.is_none();
    if needs_caption {
        jobs.push(TeacherJob {
            kind: JobKind::DenseCaption,
            id: pair.id.clone(),
            metric: None,
            prompt: DENSE_CAPTION_PROMPT.to_owned(),
            image: pair.image_ref.clone(),
            max_new_tokens: opts.max_new_tokens,
            path: TeacherPath::Vision,
            pending: false,
        });
    }
    for &m in &opts.metrics {
        let template = PromptTemplate::new(m, opts.mode);
        let prompt = match opts.path {
            TeacherPath::Vision => template.render(&pair.caption, None),
            TeacherPath::TextOnly => template.render(
                &pair.caption,
                Some(pair.dense_caption.as_deref().unwrap_or(DENSE_CAPTION_PLACEHOLDER)),
            ),
        };
        jobs.push(TeacherJob {
            kind: JobKind::Scoring,
            id: pair.id.clone(),
            metric: Some(m),
            prompt,
            // The text-only teacher never sees pixels.
            image: match opts.path {
                TeacherPath::Vision => pair.image_ref.clone(),
                TeacherPath::TextOnly => ImageRef::None,
            },
            max_new_tokens: opts.max_new_tokens,
            path: opts.path,
            pending: needs_caption,
        });
    }
    jobs
}

/// One scoring job per (pair, metric). On the text-only path a pair without
/// a dense caption first gets a captioning job, and its scoring jobs are
/// marked pending.
pub fn emit_teacher_jobs<'a, I>(pairs: I, opts: &'a JobOptions) -> impl Iterator<Item = Result<TeacherJob>> + 'a
where
    I: IntoIterator<Item = Result<ImageTextPair>>,
    I::IntoIter: 'a,
{
    pairs.into_iter().flat_map(move |p| match p {
        Ok(pair) => jobs_for_pair(&pair, opts).into_iter().map(Ok).collect::<Vec<_>>(),
        Err(e) => vec![Err(e)],
    })
}

/// A `User: {prompt} Assistant: {output}` training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub prompt: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<QualityScore>,
    pub source: String,
}

impl InstructionRecord {
    /// A general (non-scoring) instruction.
    pub fn task(prompt: impl Into<String>, output: impl Into<String>, source: impl Into<String>) -> Self {
        InstructionRecord {
            prompt: prompt.into(),
            output: output.into(),
            metric: None,
            score: None,
            source: source.into(),
        }
    }

    /// Builds a scoring instruction from a teacher's answer to `job`,
    /// parsing the score out of the answer.
    pub fn from_teacher(job: &TeacherJob, output: &str, mode: PromptMode) -> Result<Self> {
        let metric = match (job.kind, job.metric) {
            (JobKind::Scoring, Some(m)) => m,
            _ => return Err(Error::InvalidSpec(format!("job for `{}` is not a scoring job", job.id))),
        };
        if job.pending {
            return Err(Error::MissingDenseCaption(job.id.clone()));
        }
        let score = parse_score(output, mode)?;
        Ok(InstructionRecord {
            prompt: job.prompt.clone(),
            output: output.to_owned(),
            metric: Some(metric),
            score: Some(score),
            source: format!("{metric}_scoring"),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.metric.is_some() && self.score.is_none() {
            return Err(Error::InvalidSpec("scoring instruction without a score".into()));
        }
        Ok(())
    }

    pub fn conversation(&self) -> String {
        format!("User: {} Assistant: {}", self.prompt, self.output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(n: usize) -> Vec<Result<ImageTextPair>> {
        (0..n)
            .map(|i| Ok(ImageTextPair::new(format!("p{i}"), "a red bus")))
            .collect()
    }

    #[test]
    fn vision_jobs_are_a_product() {
        let opts = JobOptions::default();
        let jobs: Vec<_> = emit_teacher_jobs(pairs(3), &opts).collect::<Result<_>>().unwrap();
        assert_eq!(jobs.len(), 12);
        assert!(jobs.iter().all(|j| j.kind == JobKind::Scoring && !j.pending));
    }

    #[test]
    fn text_only_without_caption_gets_prerequisite() {
        let opts = JobOptions {
            path: TeacherPath::TextOnly,
            ..JobOptions::default()
        };
        let jobs: Vec<_> = emit_teacher_jobs(pairs(1), &opts).collect::<Result<_>>().unwrap();
        assert_eq!(jobs.len(), 5);
        assert_eq!(jobs[0].kind, JobKind::DenseCaption);
        assert_eq!(jobs[0].prompt, DENSE_CAPTION_PROMPT);
        assert!(jobs[1..]
            .iter()
            .all(|j| j.pending && j.prompt.contains(DENSE_CAPTION_PLACEHOLDER)));

        let resolved = jobs[1].resolve("A red double-decker bus on a street.");
        assert!(!resolved.pending);
        assert!(resolved
            .prompt
            .contains("Image Description: A red double-decker bus on a street."));
    }

    #[test]
    fn text_only_with_caption_embeds_it() {
        let opts = JobOptions {
            path: TeacherPath::TextOnly,
            ..JobOptions::default()
        };
        let pair = ImageTextPair::new("p", "a bus").with_dense_caption("A bus.");
        let jobs: Vec<_> = emit_teacher_jobs([Ok(pair)], &opts).collect::<Result<_>>().unwrap();
        assert_eq!(jobs.len(), 4);
        assert!(jobs
            .iter()
            .all(|j| !j.pending && j.prompt.contains("Image Description: A bus.")));
    }

    #[test]
    fn job_json_shape() {
        let opts = JobOptions {
            metrics: vec![Metric::Ctq],
            ..JobOptions::default()
        };
        let job = emit_teacher_jobs(pairs(1), &opts).next().unwrap().unwrap();
        let v: serde_json::Value = serde_json::to_value(&job).unwrap();
        assert_eq!(v["kind"], "scoring");
        assert_eq!(v["metric"], "ctq");
        assert_eq!(v["path"], "vision");
        assert_eq!(v["max_new_tokens"], 512);
        assert_eq!(v["image"]["kind"], "none");
    }

    #[test]
    fn instruction_from_teacher() {
        let opts = JobOptions {
            metrics: vec![Metric::Itm],
            ..JobOptions::default()
        };
        let job = emit_teacher_jobs(pairs(1), &opts).next().unwrap().unwrap();
        let rec = InstructionRecord::from_teacher(&job, "78\nMostly accurate.", PromptMode::Rationalization).unwrap();
        assert_eq!(rec.score.unwrap().value(), 78);
        assert_eq!(rec.metric, Some(Metric::Itm));
        assert_eq!(rec.source, "itm_scoring");
        assert!(rec.conversation().starts_with("User: Please evaluate"));
        assert!(rec.conversation().ends_with("Assistant: 78\nMostly accurate."));
        assert!(InstructionRecord::from_teacher(&job, "no score", PromptMode::Rationalization).is_err());

        let bad = InstructionRecord { score: None, ..rec };
        assert!(bad.validate().is_err());
        let json = serde_json::to_string(&InstructionRecord::task("q", "a", "sharegpt")).unwrap();
        assert_eq!(json, r#"{"prompt":"q","output":"a","source":"sharegpt"}"#);
    }
}
