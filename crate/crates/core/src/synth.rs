//! Planted retrieval fixtures.
//!
//! Every vector is a unit-normalized draw from a seeded spherical Gaussian.
//! The retained / deleted guidance texts are noisy copies of two distinct
//! patches so that selection weights carry signal, and each target embedding
//! is a known weighted mix of the selected visual features and the two
//! texts, plus Gaussian noise.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::manifest::{write_manifest, GalleryRecord, SampleRecord};
use crate::io::tensor::write_tensor;
use crate::kernels::{norm, FeatureVector};
use crate::selection::{select_instance_feature, select_patch_feature};
use crate::types::{InstanceSet, PatchSet, Split};

/// Mixing weights of the target embedding over (patch selection, instance
/// selection, modification text, target text).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plant {
    Equal,
    Skewed,
}

impl Plant {
    pub fn weights(self) -> [f64; 4] {
        match self {
            Plant::Equal => [0.25; 4],
            Plant::Skewed => [0.7, 0.1, 0.1, 0.1],
        }
    }
}

impl FromStr for Plant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(Plant::Equal),
            "skewed" => Ok(Plant::Skewed),
            other => Err(Error::InvalidConfig(format!(
                "unknown plant `{other}` (expected equal or skewed)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub dim: usize,
    pub train_n: usize,
    pub eval_n: usize,
    pub gallery_extra: usize,
    pub patches: usize,
    pub instances: usize,
    pub noise: f64,
    pub plant: Plant,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 124,
            dim: 64,
            train_n: 256,
            eval_n: 64,
            gallery_extra: 64,
            patches: 8,
            instances: 4,
            noise: 0.05,
            plant: Plant::Equal,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidConfig("synth needs dim >= 2".into()));
        }
        if self.train_n == 0 || self.eval_n == 0 {
            return Err(Error::InvalidConfig("synth needs at least one train and one eval sample".into()));
        }
        if self.patches < 2 {
            return Err(Error::InvalidConfig(
                "synth needs >= 2 patches to plant distinct retained/deleted patches".into(),
            ));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::InvalidConfig("noise must be finite and >= 0".into()));
        }
        Ok(())
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    dim: usize,
}

/// Stored tensors are f32, so every generated vector is rounded through f32
/// before it is used to plant anything.
fn through_f32(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| f64::from(x as f32)).collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

impl Sampler {
    fn gaussian(&mut self) -> Vec<f64> {
        (0..self.dim).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    fn unit(&mut self) -> Vec<f64> {
        through_f32(normalized(self.gaussian()))
    }

    /// `normalize(base + 0.1·g)`.
    fn near(&mut self, base: &[f64]) -> Vec<f64> {
        let g = self.gaussian();
        through_f32(normalized(base.iter().zip(g).map(|(b, n)| b + 0.1 * n).collect()))
    }
}

fn fv(v: &[f64]) -> Result<FeatureVector> {
    FeatureVector::new(v.to_vec())
}

/// Writes a planted dataset (`manifest.jsonl`, `gallery.jsonl`, `tensors/`)
/// into `out_dir`. Train samples use split `train`, held-out samples `test`.
pub fn synth_dataset(config: &SynthConfig, out_dir: &Path) -> Result<()> {
    config.validate()?;
    let tensor_dir = out_dir.join("tensors");
    fs::create_dir_all(&tensor_dir).map_err(|e| Error::io(&tensor_dir, e))?;
    let d = config.dim;
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        dim: d,
    };
    let w = config.plant.weights();

    let put = |name: String, values: &[f64], dims: &[usize]| -> Result<String> {
        let rel = format!("tensors/{name}.mvst");
        write_tensor(out_dir.join(&rel), values, dims)?;
        Ok(rel)
    };

    let mut samples = Vec::with_capacity(config.train_n + config.eval_n);
    let mut gallery = Vec::with_capacity(config.train_n + config.eval_n + config.gallery_extra);
    let splits = std::iter::repeat_n(Split::Train, config.train_n)
        .enumerate()
        .chain(std::iter::repeat_n(Split::Test, config.eval_n).enumerate());
    for (i, split) in splits {
        let id = format!("{split}-{i:05}");
        let patches: Vec<Vec<f64>> = (0..config.patches).map(|_| s.unit()).collect();
        let cls = s.unit();
        let instances: Vec<Vec<f64>> = (0..config.instances).map(|_| s.unit()).collect();
        let mod_text = s.unit();
        let target_text = s.unit();
        let j1 = s.rng.random_range(0..config.patches);
        let mut j2 = s.rng.random_range(0..config.patches - 1);
        if j2 >= j1 {
            j2 += 1;
        }
        let retained_text = s.near(&patches[j1]);
        let deleted_text = s.near(&patches[j2]);

        let patch_set = PatchSet::new(fv(&cls)?, patches.iter().map(|p| fv(p)).collect::<Result<_>>()?)?;
        let instance_set = InstanceSet::new(d, instances.iter().map(|v| fv(v)).collect::<Result<_>>()?)?;
        let (rt, dt) = (fv(&retained_text)?, fv(&deleted_text)?);
        let patch_feature = select_patch_feature(&patch_set, &rt, &dt)?;
        let instance_feature = select_instance_feature(&instance_set, &rt, &dt)?;
        let noise = s.gaussian();
        let target: Vec<f64> = (0..d)
            .map(|k| {
                w[0] * patch_feature.as_slice()[k]
                    + w[1] * instance_feature.as_slice()[k]
                    + w[2] * mod_text[k]
                    + w[3] * target_text[k]
                    + config.noise * noise[k]
            })
            .collect();
        let target = through_f32(normalized(target));

        let flat = |rows: &[Vec<f64>]| rows.concat();
        let target_id = format!("target-{id}");
        samples.push(SampleRecord {
            patches: put(format!("{id}.patches"), &flat(&patches), &[config.patches, d])?,
            cls: put(format!("{id}.cls"), &cls, &[d])?,
            instances: if config.instances == 0 {
                None
            } else {
                Some(put(format!("{id}.instances"), &flat(&instances), &[config.instances, d])?)
            },
            text_mod: put(format!("{id}.text_mod"), &mod_text, &[d])?,
            text_retained: put(format!("{id}.text_retained"), &retained_text, &[d])?,
            text_deleted: put(format!("{id}.text_deleted"), &deleted_text, &[d])?,
            text_target: put(format!("{id}.text_target"), &target_text, &[d])?,
            target_id: target_id.clone(),
            id,
            split,
        });
        gallery.push(GalleryRecord {
            embedding: put(target_id.clone(), &target, &[d])?,
            id: target_id,
        });
    }
    for i in 0..config.gallery_extra {
        let id = format!("distractor-{i:05}");
        let v = s.unit();
        gallery.push(GalleryRecord {
            embedding: put(id.clone(), &v, &[d])?,
            id,
        });
    }
    write_manifest(out_dir, &samples, &gallery)
}
