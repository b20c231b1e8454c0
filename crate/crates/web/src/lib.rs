//! Browser bindings for the interactive demo in `www/`.
//!
//! A [`Demo`] holds a source/destination pair of synthetic images and a
//! small teacher fitted to the labeled source. The page asks it for RGBA
//! buffers: superpixel boundaries, the teacher's entropy, and a displaced
//! mixture.

use ucad::data::{generate_sample, Dataset, DatasetSpec, UnlabeledSplit};
use ucad::displacement::{
    entropy_map, Direction, DisplacementConfig, MixedSample, PairView, RegionCount, Selection, SuperpixelDisplacer,
};
use ucad::displacement::Displacer;
use ucad::grid::{argmax_labels, Grid2D, LabelMap, ProbMap};
use ucad::model::{forward, ModelParams};
use ucad::rng::RngStream;
use ucad::superpixel::{slic_partition, SlicParams, SuperpixelPartition};
use ucad::train::{train, TrainConfig};
use wasm_bindgen::prelude::*;

const TEACHER_STEPS: usize = 150;

#[wasm_bindgen]
pub struct Demo {
    size: usize,
    x_src: Grid2D,
    y_src: LabelMap,
    x_dst: Grid2D,
    y_dst: LabelMap,
    p_src: ProbMap,
    last_regions: usize,
}

fn err(e: ucad::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn gray(v: f64) -> [u8; 4] {
    let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [g, g, g, 255]
}

fn rgba(img: &Grid2D) -> Vec<u8> {
    img.values().iter().flat_map(|&v| gray(v)).collect()
}

/// Pixels whose right or lower neighbour lies in another region.
fn boundaries(ids: &[u32], h: usize, w: usize) -> Vec<bool> {
    (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            (c + 1 < w && ids[i + 1] != ids[i]) || (r + 1 < h && ids[i + w] != ids[i])
        })
        .collect()
}

fn paint(buf: &mut [u8], mask: &[bool], color: [u8; 4]) {
    for (px, _) in buf.chunks_exact_mut(4).zip(mask).filter(|(_, &m)| m) {
        px.copy_from_slice(&color);
    }
}

#[wasm_bindgen]
impl Demo {
    /// Draws a labeled source and an unlabeled destination image of
    /// `size`×`size` pixels, then fits the teacher on the source.
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, seed: u64) -> Result<Demo, JsError> {
        let size = size.clamp(16, 128);
        let scale = size as f64 / 64.0;
        let spec = DatasetSpec {
            height: size,
            width: size,
            radius_min: 6.0 * scale,
            radius_max: 14.0 * scale,
            waviness: 3.0 * scale,
            ..DatasetSpec::default()
        };
        spec.validate().map_err(err)?;
        let mut rng = RngStream::new(seed);
        let (x_src, y_src) = generate_sample(&spec, &mut rng);
        let (x_dst, y_dst) = generate_sample(&spec, &mut rng);
        let data = Dataset {
            labeled: vec![(x_src.clone(), y_src.clone())],
            unlabeled: UnlabeledSplit::new(vec![x_dst.clone()], vec![y_dst.clone()]).map_err(err)?,
            validation: Vec::new(),
        };
        let cfg = TrainConfig {
            hidden: 8,
            warmup_steps: TEACHER_STEPS,
            total_steps: 0,
            seed,
            ..TrainConfig::default()
        };
        let teacher: ModelParams = train(&cfg, &data, &SuperpixelDisplacer::default()).map_err(err)?.teacher;
        let (_, p_src) = forward(&teacher, &x_src).map_err(err)?;
        Ok(Demo {
            size,
            x_src,
            y_src,
            x_dst,
            y_dst,
            p_src,
            last_regions: 0,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn source_rgba(&self) -> Vec<u8> {
        rgba(&self.x_src)
    }

    pub fn destination_rgba(&self) -> Vec<u8> {
        rgba(&self.x_dst)
    }

    /// Teacher entropy on the source, black (certain) to yellow (uncertain),
    /// scaled so `ln C` is full brightness.
    pub fn entropy_rgba(&self) -> Vec<u8> {
        let h = entropy_map(&self.p_src);
        let top = (self.p_src.num_classes() as f64).ln();
        h.values()
            .iter()
            .flat_map(|&v| {
                let t = (v / top).clamp(0.0, 1.0);
                [(255.0 * t.sqrt()).round() as u8, (220.0 * t).round() as u8, 0, 255]
            })
            .collect()
    }

    /// Teacher prediction on the source, one gray level per class.
    pub fn prediction_rgba(&self) -> Vec<u8> {
        let labels = argmax_labels(&self.p_src);
        let top = (labels.num_classes() - 1).max(1) as f64;
        labels.labels().iter().flat_map(|&l| gray(l as f64 / top)).collect()
    }

    /// Source image with the SLIC boundaries for these settings in red.
    pub fn superpixels_rgba(&mut self, k_target: usize, compactness: f64) -> Result<Vec<u8>, JsError> {
        let part = self.partition(k_target, compactness)?;
        let mut buf = rgba(&self.x_src);
        paint(&mut buf, &boundaries(part.region_ids(), self.size, self.size), [230, 40, 40, 255]);
        Ok(buf)
    }

    /// Number of regions in the most recent partition.
    pub fn region_count(&self) -> usize {
        self.last_regions
    }

    /// Pastes `regions` source superpixels into the destination and returns
    /// the mixed image with the pasted area outlined in cyan. With
    /// `uncertainty` off, regions are chosen uniformly.
    pub fn displace_rgba(
        &mut self,
        k_target: usize,
        compactness: f64,
        temperature: f64,
        regions: usize,
        uncertainty: bool,
        seed: u64,
    ) -> Result<Vec<u8>, JsError> {
        let cfg = DisplacementConfig {
            slic: SlicParams {
                k_target: k_target.max(1),
                compactness,
                ..SlicParams::default()
            },
            temperature,
            regions: RegionCount::Fixed(regions),
            selection: if uncertainty { Selection::Uncertainty } else { Selection::Uniform },
        };
        let pair = PairView {
            x_src: &self.x_src,
            y_src: &self.y_src,
            x_dst: &self.x_dst,
            y_dst: &self.y_dst,
            p_src: &self.p_src,
        };
        let mixed: MixedSample = SuperpixelDisplacer::new(cfg)
            .displace(pair, Direction::UnlabeledIntoLabeled, &mut RngStream::new(seed))
            .map_err(err)?;
        self.last_regions = slic_partition(&self.x_src, &cfg.slic).map_err(err)?.num_regions();
        let ids: Vec<u32> = mixed.mask.bits().iter().map(|&b| b as u32).collect();
        let mut buf = rgba(&mixed.image);
        paint(&mut buf, &boundaries(&ids, self.size, self.size), [40, 200, 230, 255]);
        Ok(buf)
    }
}

impl Demo {
    fn partition(&mut self, k_target: usize, compactness: f64) -> Result<SuperpixelPartition, JsError> {
        let params = SlicParams {
            k_target: k_target.max(1),
            compactness,
            ..SlicParams::default()
        };
        let part = slic_partition(&self.x_src, &params).map_err(err)?;
        self.last_regions = part.num_regions();
        Ok(part)
    }
}
