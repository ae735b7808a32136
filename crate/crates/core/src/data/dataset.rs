use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image_io::{is_supported, load_image};
use super::resample::Degradation;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// An HR image, its synthesized LR counterpart and the factor between them.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    /// `[C, H, W]` in `[0, 1]`.
    pub hr: Tensor,
    /// `[C, H / scale, W / scale]` in `[0, 1]`.
    pub lr: Tensor,
    pub scale: usize,
}

/// One HR patch with its degradation pyramid: `levels[j]` is the patch
/// degraded by `2^j`, so `levels[0]` is the HR patch itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub levels: Vec<Tensor>,
}

impl Sample {
    pub fn hr(&self) -> &Tensor {
        &self.levels[0]
    }

    /// The pair relating the HR patch to its `2^level` degradation.
    pub fn pair(&self, level: usize) -> Result<ImagePair> {
        let lr = self
            .levels
            .get(level)
            .ok_or_else(|| Error::Config(format!("sample has {} levels, asked for {level}", self.levels.len())))?;
        Ok(ImagePair {
            id: self.id.clone(),
            hr: self.levels[0].clone(),
            lr: lr.clone(),
            scale: 1 << level,
        })
    }
}

/// A mini-batch: `levels[j]` stacks the samples' level-`j` tensors into `[N, C, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub levels: Vec<Tensor>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct PatchRef {
    image: usize,
    y: usize,
    x: usize,
}

/// Images cut into a non-overlapping grid of square HR patches. Each patch
/// is degraded on demand to every level up to `2^max_level`.
#[derive(Clone, Debug)]
pub struct Dataset {
    images: Vec<(String, Tensor)>,
    patches: Vec<PatchRef>,
    patch_size: usize,
    max_level: usize,
    degradation: Degradation,
}

impl Dataset {
    /// Build from in-memory `[C, H, W]` images. `patch_size` must be
    /// divisible by `2^max_level`; images smaller than a patch are skipped.
    pub fn from_images(
        images: Vec<(String, Tensor)>,
        patch_size: usize,
        max_level: usize,
        degradation: Degradation,
    ) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Data("no images in corpus".into()));
        }
        let r = 1usize
            .checked_shl(max_level as u32)
            .ok_or_else(|| Error::Config(format!("degradation level {max_level} is too large")))?;
        if patch_size == 0 || !patch_size.is_multiple_of(r) {
            return Err(Error::Config(format!("patch size {patch_size} is not divisible by scale {r}")));
        }
        let channels = images[0].1.dims3("dataset")?[0];
        let mut patches = Vec::new();
        for (i, (id, img)) in images.iter().enumerate() {
            let [c, h, w] = img.dims3("dataset")?;
            if c != channels {
                return Err(Error::Data(format!("{id}: {c} channels, corpus has {channels}")));
            }
            for y in (0..h / patch_size).map(|k| k * patch_size) {
                for x in (0..w / patch_size).map(|k| k * patch_size) {
                    patches.push(PatchRef { image: i, y, x });
                }
            }
        }
        if patches.is_empty() {
            return Err(Error::Data(format!("no image is at least {patch_size}x{patch_size}")));
        }
        Ok(Self {
            images,
            patches,
            patch_size,
            max_level,
            degradation,
        })
    }

    /// Load every supported image in `dir` (not recursive), in file-name order.
    pub fn from_dir(dir: &Path, patch_size: usize, max_level: usize, degradation: Degradation) -> Result<Self> {
        let images = load_dir(dir)?;
        Self::from_images(images, patch_size, max_level, degradation)
    }

    /// Number of patches.
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images[0].1.shape()[0]
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn degradation(&self) -> Degradation {
        self.degradation
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn num_images(&self) -> usize {
        self.images.len()
    }

    /// Split by image so no source image contributes to both sides: the
    /// last `held_out` images go to the second dataset.
    pub fn split(&self, held_out: usize) -> Result<(Dataset, Dataset)> {
        if held_out == 0 || held_out >= self.images.len() {
            return Err(Error::Config(format!(
                "cannot hold out {held_out} of {} images",
                self.images.len()
            )));
        }
        let cut = self.images.len() - held_out;
        let part = |range: std::ops::Range<usize>| {
            Dataset::from_images(self.images[range].to_vec(), self.patch_size, self.max_level, self.degradation)
        };
        Ok((part(0..cut)?, part(cut..self.images.len())?))
    }

    /// Patch `index` with its full pyramid.
    pub fn sample(&self, index: usize) -> Result<Sample> {
        let p = *self
            .patches
            .get(index)
            .ok_or_else(|| Error::Config(format!("patch {index} out of range for {}", self.len())))?;
        let (id, img) = &self.images[p.image];
        let [c, _, w] = img.dims3("dataset")?;
        let s = self.patch_size;
        let plane = img.shape()[1] * w;
        let hr = Tensor::from_fn([c, s, s], |i| {
            let (ch, r) = (i / (s * s), i % (s * s));
            img.data()[ch * plane + (p.y + r / s) * w + p.x + r % s]
        });
        let mut levels = Vec::with_capacity(self.max_level + 1);
        for j in 1..=self.max_level {
            levels.push(self.degradation.apply(&hr, 1 << j)?);
        }
        levels.insert(0, hr);
        Ok(Sample {
            id: format!("{id}@{},{}", p.y, p.x),
            levels,
        })
    }

    /// Samples `indices` stacked level by level.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let samples = indices.iter().map(|&i| self.sample(i)).collect::<Result<Vec<_>>>()?;
        let levels = (0..=self.max_level)
            .map(|j| Tensor::stack(&samples.iter().map(|s| s.levels[j].clone()).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            ids: samples.into_iter().map(|s| s.id).collect(),
            levels,
        })
    }

    /// An endless shuffled pass over the patches starting at epoch 0.
    pub fn stream(&self, seed: u64) -> PatchStream<'_> {
        PatchStream::resume(self, seed, StreamState::default())
    }
}

/// Supported images in `dir` sorted by file name, with the file stem as id.
pub fn load_dir(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_supported(&path) {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::Data(format!("{}: no PNG/PGM/PPM images", dir.display())));
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            Ok((id, load_image(p)?))
        })
        .collect()
}

/// Position in an endless stream; enough to resume it exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StreamState {
    pub epoch: u64,
    pub position: usize,
}

/// Deterministic patch order: every epoch is a permutation drawn from
/// `(seed, epoch)` alone, so a stream resumed from its state continues
/// exactly as the uninterrupted one would.
#[derive(Clone, Debug)]
pub struct PatchStream<'a> {
    dataset: &'a Dataset,
    seed: u64,
    state: StreamState,
    order: Vec<usize>,
}

impl<'a> PatchStream<'a> {
    pub fn resume(dataset: &'a Dataset, seed: u64, state: StreamState) -> Self {
        let order = epoch_order(dataset.len(), seed, state.epoch);
        Self {
            dataset,
            seed,
            state,
            order,
        }
    }

    pub fn state(&self) -> StreamState {
        self.state
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    fn next_index(&mut self) -> usize {
        if self.state.position >= self.order.len() {
            self.state = StreamState {
                epoch: self.state.epoch + 1,
                position: 0,
            };
            self.order = epoch_order(self.dataset.len(), self.seed, self.state.epoch);
        }
        let i = self.order[self.state.position];
        self.state.position += 1;
        i
    }

    pub fn next_sample(&mut self) -> Result<Sample> {
        let i = self.next_index();
        self.dataset.sample(i)
    }

    /// The next `size` samples, crossing epoch boundaries as needed.
    pub fn next_batch(&mut self, size: usize) -> Result<Batch> {
        if size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        let indices: Vec<usize> = (0..size).map(|_| self.next_index()).collect();
        self.dataset.batch(&indices)
    }

    /// Endless `(HR, HR / 2^level)` pairs.
    pub fn pairs(mut self, level: usize) -> impl Iterator<Item = Result<ImagePair>> + 'a {
        std::iter::from_fn(move || Some(self.next_sample().and_then(|s| s.pair(level))))
    }
}

fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{degrade, synthetic_corpus, DegradeMode};

    fn small() -> Dataset {
        Dataset::from_images(synthetic_corpus(6, 32, 0), 16, 2, Degradation::default()).unwrap()
    }

    #[test]
    fn grid_covers_each_image_without_overlap() {
        let ds = small();
        assert_eq!(ds.len(), 6 * 4);
        let s = ds.sample(3).unwrap();
        assert_eq!(s.id, "synth_000@16,16");
        let shapes: Vec<_> = s.levels.iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![1, 16, 16], vec![1, 8, 8], vec![1, 4, 4]]);
        let img = &synthetic_corpus(1, 32, 0)[0].1;
        assert_eq!(s.hr().data()[0], img.data()[16 * 32 + 16]);
    }

    #[test]
    fn levels_match_direct_degradation() {
        let ds = small();
        let s = ds.sample(5).unwrap();
        assert_eq!(s.levels[2], degrade(s.hr(), 4, DegradeMode::default()).unwrap());
        let pair = s.pair(1).unwrap();
        assert_eq!((pair.scale, pair.lr.shape()), (2, &[1usize, 8, 8][..]));
    }

    #[test]
    fn same_seed_same_order_and_epochs_differ() {
        let ds = small();
        let ids = |seed| {
            let mut st = ds.stream(seed);
            (0..100).map(|_| st.next_sample().unwrap().id).collect::<Vec<_>>()
        };
        assert_eq!(ids(4), ids(4));
        assert_ne!(ids(4), ids(5));
        let first = ids(4);
        let n = ds.len();
        assert_ne!(first[..n], first[n..2 * n]);
        let mut epoch: Vec<_> = first[..n].to_vec();
        epoch.sort();
        epoch.dedup();
        assert_eq!(epoch.len(), n);
    }

    #[test]
    fn resumed_stream_continues_identically() {
        let ds = small();
        let mut a = ds.stream(9);
        for _ in 0..7 {
            a.next_batch(5).unwrap();
        }
        let mut b = PatchStream::resume(&ds, 9, a.state());
        assert_eq!(a.next_batch(5).unwrap(), b.next_batch(5).unwrap());
    }

    #[test]
    fn batches_stack_levels() {
        let ds = small();
        let b = ds.stream(0).next_batch(3).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.levels[0].shape(), &[3, 1, 16, 16]);
        assert_eq!(b.levels[2].shape(), &[3, 1, 4, 4]);
    }

    #[test]
    fn bad_corpora_are_rejected() {
        let imgs = || synthetic_corpus(2, 8, 0);
        assert!(matches!(Dataset::from_images(imgs(), 16, 1, Degradation::default()), Err(Error::Data(_))));
        assert!(matches!(Dataset::from_images(imgs(), 6, 2, Degradation::default()), Err(Error::Config(_))));
        assert!(matches!(Dataset::from_images(vec![], 8, 1, Degradation::default()), Err(Error::Data(_))));
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Dataset::from_dir(dir.path(), 8, 1, Degradation::default()), Err(Error::Data(_))));
    }

    #[test]
    fn split_is_by_image() {
        let (train, test) = small().split(2).unwrap();
        assert_eq!((train.num_images(), test.num_images()), (4, 2));
        assert!(test.sample(0).unwrap().id.starts_with("synth_004"));
    }
}
