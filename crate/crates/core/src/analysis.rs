//! Characterisation experiments: latent localisation in the second-last
//! layer, per-epoch M profiles, seed-variation statistics, and the
//! influence/memorisation correlation.

use crate::canary::{PatchKind, ProbeTriple};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Mode, Model};
use crate::score::{m_score, MScoreResult, ScoreMeta, TTestKind};
use crate::stats::pearson_r;
use crate::trainer::RunArtifacts;
use serde::{Deserialize, Serialize};

/// Per-unit activation-frequency mask for the second-last layer, averaged
/// over an ensemble and normalised to max 1.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActivationMask {
    pub values: Vec<f64>,
    pub model_count: usize,
    pub kind: String,
}

impl ActivationMask {
    pub fn kind(&self) -> PatchKind {
        if self.kind == "unique" {
            PatchKind::Unique
        } else {
            PatchKind::Random
        }
    }
}

/// Per-epoch (epoch, M, p-value) series for one canary run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MProfile {
    pub entries: Vec<MProfileEntry>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MProfileEntry {
    pub epoch: usize,
    pub m: f64,
    pub p_value: f64,
}

/// Units excited by a patch but not by the clean twin, marginalised over an
/// ensemble of same-architecture models.
///
/// Model `i` is probed with image pair `i`: record second-last-layer (last
/// hidden ReLU) activations for the patched image and its clean counterpart,
/// binarise (nonzero to one), subtract clean from patched, re-binarise
/// (negatives to zero). The per-model maps are averaged and the average is
/// normalised so its maximum is 1.
pub fn latent_localisation(
    models: &[Model<f32>],
    patched: &Dataset,
    clean: &Dataset,
    kind: PatchKind,
) -> Result<ActivationMask> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models given".into()));
    }
    if patched.len() != models.len() || clean.len() != models.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} models need {} image pairs, got {} patched / {} clean",
            models.len(),
            models.len(),
            patched.len(),
            clean.len()
        )));
    }
    let capture = models[0]
        .last_hidden_relu()
        .ok_or_else(|| Error::InvalidArgument("model has no hidden relu layer".into()))?;
    let width: usize = models[0].layer_out_shape(capture).iter().product();
    for m in models {
        if m.last_hidden_relu() != Some(capture)
            || m.layer_out_shape(capture).iter().product::<usize>() != width
        {
            return Err(Error::ShapeMismatch(
                "ensemble models disagree on architecture".into(),
            ));
        }
        if m.mode() != Mode::Eval {
            return Err(Error::InvalidArgument(
                "latent localisation requires eval-mode models".into(),
            ));
        }
    }
    let mut sums = vec![0.0f64; width];
    for (i, model) in models.iter().enumerate() {
        let patched_batch = patched.gather_batch(&[i]);
        let clean_batch = clean.gather_batch(&[i]);
        let (_, act_p) = model.forward_capture(&patched_batch, capture)?;
        let (_, act_c) = model.forward_capture(&clean_batch, capture)?;
        for u in 0..width {
            let fired_patched = act_p.data()[u] > 0.0;
            let fired_clean = act_c.data()[u] > 0.0;
            // binarise, subtract, re-binarise: 1 only when patched fires and
            // clean does not.
            if fired_patched && !fired_clean {
                sums[u] += 1.0;
            }
        }
    }
    let n = models.len() as f64;
    for v in &mut sums {
        *v /= n;
    }
    let max = sums.iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in &mut sums {
            *v /= max;
        }
    }
    Ok(ActivationMask {
        values: sums,
        model_count: models.len(),
        kind: match kind {
            PatchKind::Unique => "unique".into(),
            PatchKind::Random => "random".into(),
        },
    })
}

/// Evaluate the M score at every stored checkpoint of a run.
pub fn m_profile(
    run: &RunArtifacts,
    triple: &ProbeTriple,
    t_test: TTestKind,
    meta: &ScoreMeta,
) -> Result<MProfile> {
    if run.checkpoints.is_empty() {
        return Err(Error::InvalidArgument(
            "run stored no checkpoints; profile needs per-epoch snapshots".into(),
        ));
    }
    let mut scratch = run.model.clone();
    scratch.set_mode(Mode::Eval);
    let mut entries = Vec::with_capacity(run.checkpoints.len());
    for ck in &run.checkpoints {
        scratch.load_tensors(&ck.weights)?;
        let r = m_score(&scratch, triple, t_test, meta.clone())?;
        entries.push(MProfileEntry {
            epoch: ck.epoch,
            m: r.m,
            p_value: r.p_value,
        });
    }
    Ok(MProfile { entries })
}

/// Seed-variation summary for one canary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedVariationRow {
    pub canary_id: String,
    pub runs: usize,
    pub min: f64,
    pub max: f64,
    pub range: f64,
    pub positive: usize,
    pub negative: usize,
    pub spans_zero: bool,
}

/// Group results by canary and summarise the spread of M across seeds.
pub fn seed_variation_report(results: &[MScoreResult]) -> Result<Vec<SeedVariationRow>> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in results {
        groups
            .entry(r.meta.canary_id.clone())
            .or_default()
            .push(r.m);
    }
    let mut rows = Vec::new();
    for (canary_id, ms) in groups {
        if ms.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "canary {canary_id} has {} run(s); the seed report needs at least 2",
                ms.len()
            )));
        }
        let min = ms.iter().copied().fold(f64::INFINITY, f64::min);
        let max = ms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let positive = ms.iter().filter(|m| **m > 0.0).count();
        let negative = ms.iter().filter(|m| **m < 0.0).count();
        rows.push(SeedVariationRow {
            canary_id,
            runs: ms.len(),
            min,
            max,
            range: max - min,
            positive,
            negative,
            spans_zero: min < 0.0 && max > 0.0,
        });
    }
    Ok(rows)
}

/// Pearson correlation between self-influence and memorisation scores.
pub fn influence_memorisation_correlation(influences: &[f64], m_scores: &[f64]) -> Result<f64> {
    pearson_r(influences, m_scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canary::render_glyph;
    use crate::data::{synth, Split};
    use crate::nn::LayerDescriptor;
    use crate::score::TTestKind;

    #[test]
    fn identical_pairs_give_all_zero_mask() {
        let models: Vec<Model<f32>> = (0..3)
            .map(|s| {
                crate::nn::build_model(crate::nn::Arch::Mlp1, 10, Default::default(), s).unwrap()
            })
            .collect();
        let imgs = synth::glyph_classification(3, 1, 28, 28, 1, Split::Train).unwrap();
        let mask = latent_localisation(&models, &imgs, &imgs, PatchKind::Unique).unwrap();
        assert_eq!(mask.values.len(), 128);
        assert!(mask.values.iter().all(|v| *v == 0.0));
    }

    /// Two-unit toy network: unit 0 sums the patch region minus a threshold,
    /// unit 1 watches a pixel outside the region.
    fn toy_model() -> Model<f32> {
        let mut model: Model<f32> = Model::custom(
            "toy",
            (28, 28, 1),
            vec![
                LayerDescriptor::Flatten,
                LayerDescriptor::Dense { units: 2 },
                LayerDescriptor::Relu,
                LayerDescriptor::Dense { units: 2 },
                LayerDescriptor::Softmax,
            ],
            0,
        )
        .unwrap();
        for (name, t) in model.trainable_mut() {
            match name.as_str() {
                "layer01.w" => {
                    for v in t.data_mut().iter_mut() {
                        *v = 0.0;
                    }
                    for y in 1..6 {
                        for x in 1..6 {
                            t.data_mut()[(y * 28 + x) * 2] = 1.0; // unit 0
                        }
                    }
                    t.data_mut()[(10 * 28 + 10) * 2 + 1] = 1.0; // unit 1
                }
                "layer01.b" => {
                    t.data_mut()[0] = -0.5;
                    t.data_mut()[1] = -0.5;
                }
                _ => {}
            }
        }
        model
    }

    #[test]
    fn toy_network_isolates_patch_unit() {
        let model = toy_model();
        // Clean: a bright pixel at (10,10) only. Patched: same plus glyph.
        let mut clean_img = vec![0.0f32; 28 * 28];
        clean_img[10 * 28 + 10] = 1.0;
        let patched_img =
            crate::canary::inject(&clean_img, 28, 28, 1, &render_glyph('A').unwrap()).unwrap();
        let clean = Dataset::new("c", Split::Probe, 28, 28, 1, clean_img, None).unwrap();
        let patched = Dataset::new("p", Split::Probe, 28, 28, 1, patched_img, None).unwrap();
        let mask =
            latent_localisation(&[model], &patched, &clean, PatchKind::Unique).unwrap();
        assert_eq!(mask.values, vec![1.0, 0.0]);
    }

    #[test]
    fn mask_is_model_order_invariant() {
        let models: Vec<Model<f32>> = (0..4)
            .map(|s| {
                crate::nn::build_model(crate::nn::Arch::Mlp1, 10, Default::default(), s).unwrap()
            })
            .collect();
        let clean = synth::texture_probe_source(4, 2, 28, 28, 1).unwrap();
        let z = render_glyph('A').unwrap();
        let patched = {
            let mut p = clean.clone();
            for i in 0..p.len() {
                crate::canary::inject_into(p.image_mut(i), 28, 28, 1, &z).unwrap();
            }
            p
        };
        let a = latent_localisation(&models, &patched, &clean, PatchKind::Unique).unwrap();
        let rev_models: Vec<Model<f32>> = models.iter().rev().cloned().collect();
        let rev: Vec<usize> = (0..4).rev().collect();
        let b = latent_localisation(
            &rev_models,
            &patched.subset(&rev, "p"),
            &clean.subset(&rev, "c"),
            PatchKind::Unique,
        )
        .unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn profile_length_matches_checkpoints_and_final_entry_matches_m_score() {
        let data = synth::glyph_classification(200, 6, 28, 28, 1, Split::Train).unwrap();
        let mut cfg = crate::trainer::TrainConfig::for_arch(crate::nn::Arch::Mlp1);
        cfg.dataset = "synth".into();
        cfg.max_epochs = 3;
        cfg.batch_size = 32;
        cfg.seed = 4;
        let run = crate::trainer::train(&cfg, &data).unwrap();
        let ood = synth::texture_probe_source(20, 1, 28, 28, 1).unwrap();
        let triple = crate::canary::build_probe_triple(&ood, &render_glyph('A').unwrap(), 9).unwrap();
        let meta = ScoreMeta::default();
        let profile = m_profile(&run, &triple, TTestKind::Welch, &meta).unwrap();
        assert_eq!(profile.entries.len(), run.checkpoints.len());
        // The best-epoch profile entry equals the standalone score of the
        // restored final model exactly.
        let standalone = m_score(&run.model, &triple, TTestKind::Welch, meta).unwrap();
        let best_entry = profile
            .entries
            .iter()
            .find(|e| e.epoch == run.best_epoch)
            .unwrap();
        assert_eq!(best_entry.m, standalone.m);
        assert_eq!(best_entry.p_value, standalone.p_value);
    }

    fn result_with(canary: &str, m: f64) -> MScoreResult {
        MScoreResult {
            x_u: vec![],
            x_r: vec![],
            m,
            t_stat: 0.0,
            p_value: 0.5,
            n: 0,
            t_test: TTestKind::Welch,
            meta: ScoreMeta {
                canary_id: canary.into(),
                ..Default::default()
            },
        }
    }

    #[test]
    fn seed_report_ranges_and_sign_flags() {
        let results = vec![
            result_with("a", 0.02),
            result_with("a", -0.01),
            result_with("b", 0.05),
            result_with("b", 0.05),
        ];
        let rows = seed_variation_report(&results).unwrap();
        assert_eq!(rows.len(), 2);
        let a = &rows[0];
        assert_eq!(a.canary_id, "a");
        assert!(a.spans_zero);
        assert!((a.range - 0.03).abs() < 1e-12);
        assert_eq!((a.positive, a.negative), (1, 1));
        let b = &rows[1];
        assert!(!b.spans_zero);
        assert_eq!(b.range, 0.0);
    }

    #[test]
    fn correlation_delegates_to_pearson() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((influence_memorisation_correlation(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((influence_memorisation_correlation(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    }
}
