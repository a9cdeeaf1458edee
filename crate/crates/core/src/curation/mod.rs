//! Building the instruction-tuning set for a scoring model: diversity
//! selection, teacher jobs, bucket-balanced sampling and task mixing.

mod jobs;
mod kmeans;
mod mixture;
mod sampler;

pub use jobs::{emit_teacher_jobs, InstructionRecord, JobKind, JobOptions, TeacherJob, DENSE_CAPTION_PLACEHOLDER};
pub use kmeans::{cluster_representatives, kmeans, squared_distance, ClusterConfig, Clustering, KMeansAlgorithm};
pub use mixture::{assemble_mixture, MixtureSource, MixtureSpec};
pub use sampler::{balanced_sample, bucket_index, SampleOutcome, SamplerConfig};

use serde::{Deserialize, Serialize};

/// Summary written by the cluster step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub iterations: usize,
    pub objective: f64,
    pub representatives: Vec<String>,
}

impl ClusterReport {
    pub fn new(clustering: &Clustering, ids: &[String]) -> Self {
        ClusterReport {
            k: clustering.centroids.len(),
            iterations: clustering.iterations(),
            objective: clustering.objective(),
            representatives: clustering.representatives.iter().map(|&i| ids[i].clone()).collect(),
        }
    }
}
