//! Procedural multi-object datasets.
//!
//! Each sample is a 32x32 grayscale image with randomly placed outlined
//! shapes (and optionally a resized digit), plus a per-pixel multi-label
//! bitmask so overlapping regions can be excluded from evaluation. Sample
//! `index` under dataset `seed` is fully deterministic and independent of
//! generation order, so generation parallelizes freely.

pub mod format;
pub mod mnist;
pub mod shapes;

use rayon::prelude::*;

use crate::error::{CaeError, Result};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::tensor::RealTensor;
use mnist::MnistStore;
use rand::Rng;
use shapes::{rasterize, Canvas, ShapeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn tag(&self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CaeError::InvalidArgument(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Default image counts: 50,000 train, 10,000 validation and test.
    pub fn default_count(&self) -> usize {
        match self {
            Split::Train => 50_000,
            _ => 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetVariant {
    /// Square + upward triangle.
    TwoShapes,
    /// Square + both triangle orientations.
    ThreeShapes,
    /// One resized digit + square or downward triangle.
    MnistAndShape,
    /// TwoShapes over a per-image random background in [0, 0.75).
    TwoShapesRandBg,
    /// Two downward triangles.
    TwoTriangles,
    /// ThreeShapes + small circle.
    FourShapes,
    /// Two shapes sampled without replacement from five kinds.
    TwoOfFiveShapes,
    /// Square + two downward triangles (generalization test set).
    MoreThanTwoShapes,
    /// One to three objects from the ThreeShapes set.
    UpToThreeShapes,
}

pub const ALL_VARIANTS: [DatasetVariant; 9] = [
    DatasetVariant::TwoShapes,
    DatasetVariant::ThreeShapes,
    DatasetVariant::MnistAndShape,
    DatasetVariant::TwoShapesRandBg,
    DatasetVariant::TwoTriangles,
    DatasetVariant::FourShapes,
    DatasetVariant::TwoOfFiveShapes,
    DatasetVariant::MoreThanTwoShapes,
    DatasetVariant::UpToThreeShapes,
];

impl DatasetVariant {
    pub fn id(&self) -> u32 {
        ALL_VARIANTS.iter().position(|v| v == self).unwrap() as u32
    }

    pub fn from_id(id: u32) -> Result<Self> {
        ALL_VARIANTS
            .get(id as usize)
            .copied()
            .ok_or_else(|| CaeError::Format(format!("unknown dataset variant id {id}")))
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetVariant::TwoShapes => "2shapes",
            DatasetVariant::ThreeShapes => "3shapes",
            DatasetVariant::MnistAndShape => "mnist-shape",
            DatasetVariant::TwoShapesRandBg => "2shapes-randbg",
            DatasetVariant::TwoTriangles => "2triangles",
            DatasetVariant::FourShapes => "4shapes",
            DatasetVariant::TwoOfFiveShapes => "2of5shapes",
            DatasetVariant::MoreThanTwoShapes => "more-than-2shapes",
            DatasetVariant::UpToThreeShapes => "up-to-3shapes",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ALL_VARIANTS
            .iter()
            .find(|v| v.name() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = ALL_VARIANTS.iter().map(|v| v.name()).collect();
                CaeError::InvalidArgument(format!(
                    "unknown dataset variant {s:?} (expected one of {})",
                    names.join(", ")
                ))
            })
    }

    pub fn needs_digits(&self) -> bool {
        matches!(self, DatasetVariant::MnistAndShape)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DatasetSpec {
    pub variant: DatasetVariant,
    pub split: Split,
    pub count: usize,
    pub seed: u64,
    pub image_size: usize,
}

impl DatasetSpec {
    pub fn new(variant: DatasetVariant, split: Split, seed: u64) -> Self {
        DatasetSpec {
            variant,
            split,
            count: split.default_count(),
            seed,
            image_size: 32,
        }
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = count;
        self
    }
}

/// One generated sample: image in [0, 1], per-pixel object-id bitmask,
/// object count, background value. A set bit i marks object i; more than one
/// set bit marks an overlap pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub image: RealTensor,
    pub labels: Vec<u8>,
    pub n_objects: usize,
    pub background: f64,
}

impl SampleRecord {
    pub fn overlap_count(&self) -> usize {
        self.labels.iter().filter(|l| l.count_ones() > 1).count()
    }
}

/// Quantize through f32 so in-memory samples round-trip bit-exactly through
/// the on-disk f32 format.
fn q32(v: f64) -> f64 {
    v as f32 as f64
}

fn place(rng: &mut impl Rng, size: usize, kind: ShapeKind) -> (usize, usize) {
    let (bw, bh) = kind.bbox(size);
    let x = rng.gen_range(0..=size - bw);
    let y = rng.gen_range(0..=size - bh);
    (x, y)
}

fn pick_without_replacement(
    rng: &mut impl Rng,
    pool: &[ShapeKind],
    k: usize,
) -> Vec<ShapeKind> {
    let mut remaining = pool.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let j = rng.gen_range(0..remaining.len());
        out.push(remaining.remove(j));
    }
    out
}

/// Deterministically generate sample `index` of a dataset.
pub fn generate_sample(
    spec: &DatasetSpec,
    index: u64,
    digits: Option<&MnistStore>,
) -> Result<SampleRecord> {
    let size = spec.image_size;
    let eff_seed = derive_seed(spec.seed, spec.split.tag());
    let mut rng = stream_rng(eff_seed, Stream::DataGen, index);

    let mut background = 0.0;
    if spec.variant == DatasetVariant::TwoShapesRandBg {
        background = q32(rng.gen_range(0.0..0.75));
    }
    let mut canvas = Canvas::new(size, background);

    use DatasetVariant::*;
    use ShapeKind::*;
    let shape_list: Vec<ShapeKind> = match spec.variant {
        TwoShapes | TwoShapesRandBg => vec![Square13, TriUp],
        ThreeShapes => vec![Square13, TriUp, TriDown],
        TwoTriangles => vec![TriDown, TriDown],
        FourShapes => vec![Square13, TriUp, TriDown, Circle6],
        TwoOfFiveShapes => pick_without_replacement(
            &mut rng,
            &[Square13, TriUp, TriDown, Circle6, Circle10],
            2,
        ),
        MoreThanTwoShapes => vec![Square13, TriDown, TriDown],
        UpToThreeShapes => {
            let n = rng.gen_range(1..=3usize);
            pick_without_replacement(&mut rng, &[Square13, TriUp, TriDown], n)
        }
        MnistAndShape => {
            let store = digits.ok_or_else(|| {
                CaeError::InvalidArgument("mnist-shape generation needs a digit store".into())
            })?;
            let pool = store.pool(spec.split)?;
            let digit_index = pool.start + rng.gen_range(0..pool.len());
            let shape = if rng.gen_range(0..2u8) == 0 { Square13 } else { TriDown };
            rasterize(MnistDigit(digit_index), (0, 0), &mut canvas, 0, Some(store))?;
            let pos = place(&mut rng, size, shape);
            rasterize(shape, pos, &mut canvas, 1, None)?;
            let image = RealTensor::from_vec(&[1, size, size], canvas.image)?;
            return Ok(SampleRecord {
                image,
                labels: canvas.labels,
                n_objects: 2,
                background,
            });
        }
    };

    let n_objects = shape_list.len();
    for (id, kind) in shape_list.into_iter().enumerate() {
        let pos = place(&mut rng, size, kind);
        rasterize(kind, pos, &mut canvas, id as u8, None)?;
    }
    let image = RealTensor::from_vec(&[1, size, size], canvas.image)?;
    Ok(SampleRecord {
        image,
        labels: canvas.labels,
        n_objects,
        background,
    })
}

/// A generated dataset held compactly in memory (f32 image planes).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub variant: DatasetVariant,
    pub image_size: usize,
    pub seed: u64,
    images: Vec<f32>,
    labels: Vec<u8>,
    n_objects: Vec<u8>,
    backgrounds: Vec<f32>,
}

impl Dataset {
    /// Generate all samples of a spec (parallel over indices).
    pub fn generate(spec: &DatasetSpec, digits: Option<&MnistStore>) -> Result<Dataset> {
        let records: Result<Vec<SampleRecord>> = (0..spec.count as u64)
            .into_par_iter()
            .map(|i| generate_sample(spec, i, digits))
            .collect();
        let records = records?;
        let hw = spec.image_size * spec.image_size;
        let mut out = Dataset {
            variant: spec.variant,
            image_size: spec.image_size,
            seed: spec.seed,
            images: Vec::with_capacity(records.len() * hw),
            labels: Vec::with_capacity(records.len() * hw),
            n_objects: Vec::with_capacity(records.len()),
            backgrounds: Vec::with_capacity(records.len()),
        };
        for r in records {
            out.images.extend(r.image.iter().map(|&v| v as f32));
            out.labels.extend_from_slice(&r.labels);
            out.n_objects.push(r.n_objects as u8);
            out.backgrounds.push(r.background as f32);
        }
        Ok(out)
    }

    pub fn from_parts(
        variant: DatasetVariant,
        image_size: usize,
        seed: u64,
        images: Vec<f32>,
        labels: Vec<u8>,
        n_objects: Vec<u8>,
        backgrounds: Vec<f32>,
    ) -> Self {
        Dataset {
            variant,
            image_size,
            seed,
            images,
            labels,
            n_objects,
            backgrounds,
        }
    }

    pub fn len(&self) -> usize {
        self.n_objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_objects.is_empty()
    }

    fn hw(&self) -> usize {
        self.image_size * self.image_size
    }

    pub fn image(&self, i: usize) -> RealTensor {
        let hw = self.hw();
        RealTensor::from_vec(
            &[1, self.image_size, self.image_size],
            self.images[i * hw..(i + 1) * hw].iter().map(|&v| v as f64).collect(),
        )
        .expect("stored image shape")
    }

    /// Images `indices` stacked into a `[n, 1, h, w]` batch.
    pub fn batch(&self, indices: &[usize]) -> RealTensor {
        let hw = self.hw();
        let mut data = Vec::with_capacity(indices.len() * hw);
        for &i in indices {
            data.extend(self.images[i * hw..(i + 1) * hw].iter().map(|&v| v as f64));
        }
        RealTensor::from_vec(&[indices.len(), 1, self.image_size, self.image_size], data)
            .expect("batch shape")
    }

    pub fn labels(&self, i: usize) -> &[u8] {
        let hw = self.hw();
        &self.labels[i * hw..(i + 1) * hw]
    }

    pub fn n_objects(&self, i: usize) -> usize {
        self.n_objects[i] as usize
    }

    pub fn background(&self, i: usize) -> f64 {
        self.backgrounds[i] as f64
    }

    pub fn record(&self, i: usize) -> SampleRecord {
        SampleRecord {
            image: self.image(i),
            labels: self.labels(i).to_vec(),
            n_objects: self.n_objects(i),
            background: self.background(i),
        }
    }

    pub(crate) fn raw_parts(&self) -> (&[f32], &[u8], &[u8], &[f32]) {
        (&self.images, &self.labels, &self.n_objects, &self.backgrounds)
    }
}
