//! Multi-seed sweeps of the detection pipeline over synthetic scenes.

use std::time::Instant;

use planemerge_core::{generate_scene, run_pipeline, PipelineConfig, SceneSpec};
use rayon::prelude::*;

/// Outcome of one pipeline run on one generated scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub seed: u64,
    pub ground_truth_planes: usize,
    /// `Err` holds the stage-tagged failure message.
    pub result: Result<RunMetrics, String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub classification_error: f64,
    pub detected_planes: usize,
}

/// Runs every scene in parallel. Scene `i` is seeded from its spec, and the
/// pipeline from the same seed, so results do not depend on scheduling.
pub fn sweep(specs: &[SceneSpec], cfg: &PipelineConfig) -> Vec<SweepRun> {
    specs
        .par_iter()
        .map(|spec| {
            let start = Instant::now();
            let result = generate_scene(spec).map_err(|e| e.to_string()).and_then(|scene| {
                run_pipeline(&scene.matches, &scene.intrinsics, &cfg.clone().with_seed(spec.seed))
                    .map_err(|e| e.to_string())
                    .map(|out| {
                        let e = out.eval.expect("generated scenes carry ground truth");
                        RunMetrics {
                            classification_error: e.classification_error,
                            detected_planes: e.detected_planes,
                        }
                    })
            });
            SweepRun {
                seed: spec.seed,
                ground_truth_planes: spec.planes.len(),
                result,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

/// Preset scenes for `seeds`.
pub fn preset_specs(preset: &str, seeds: impl IntoIterator<Item = u64>) -> Result<Vec<SceneSpec>, String> {
    seeds
        .into_iter()
        .map(|s| SceneSpec::preset(preset, s).map_err(|e| e.to_string()))
        .collect()
}

/// Mean accuracy in percent; failed runs count as 0 %.
pub fn mean_accuracy(runs: &[SweepRun]) -> f64 {
    if runs.is_empty() {
        return 0.0;
    }
    let total: f64 = runs
        .iter()
        .map(|r| r.result.as_ref().map_or(0.0, |m| 100.0 - m.classification_error))
        .sum();
    total / runs.len() as f64
}
