//! Inference wrapper: arbitrary-size images in, full-resolution heatmaps and descriptor maps out.

use crate::classical::HeatMap;
use crate::error::Result;
use crate::imaging::ImageGray;
use crate::neural::arch::{ArchConfig, ParamStore, CELL};
use crate::neural::decode::{descriptor_sample, detector_decode, normalize_descriptors, DescriptorMap};
use crate::neural::layers::BnMode;
use crate::neural::model::{forward, images_to_tensor, Heads};
use crate::points::PointSet;

#[derive(Clone, Debug)]
pub struct NeuralDetector {
    pub store: ParamStore<f32>,
    pub arch: ArchConfig,
}

fn round_up(v: usize) -> usize {
    v.div_ceil(CELL).max(1) * CELL
}

impl NeuralDetector {
    pub fn new(store: ParamStore<f32>) -> Result<Self> {
        let arch = ArchConfig::infer(&store)?;
        Ok(Self { store: store.weights_only(), arch })
    }

    pub fn has_descriptor(&self) -> bool {
        self.store.has_descriptor()
    }

    fn run(&self, img: &ImageGray, heads: Heads) -> Result<(HeatMap, Option<DescriptorMap>)> {
        let (w, h) = (img.width(), img.height());
        let padded = img.pad_to(round_up(w), round_up(h));
        let x = images_to_tensor::<f32>(&[&padded])?;
        let (out, _) = forward(&self.store, &self.arch, &x, BnMode::Eval, heads)?;
        let full = detector_decode(out.logits.as_ref().expect("detector head requested"))?.remove(0);
        let mut hm = HeatMap::new(w, h);
        for y in 0..h {
            for xx in 0..w {
                hm.set(xx, y, full.get(xx, y));
            }
        }
        let desc = match out.descriptors {
            Some(d) => Some(DescriptorMap::from_batch(&normalize_descriptors(&d)?)?.remove(0)),
            None => None,
        };
        Ok((hm, desc))
    }

    /// Interest point probability per pixel (dustbin removed).
    pub fn heatmap(&self, img: &ImageGray) -> Result<HeatMap> {
        Ok(self.run(img, Heads::DETECTOR)?.0)
    }

    /// Heatmap plus the normalized coarse descriptor grid.
    pub fn heatmap_and_descriptors(&self, img: &ImageGray) -> Result<(HeatMap, DescriptorMap)> {
        let (hm, d) = self.run(img, Heads::BOTH)?;
        Ok((hm, d.expect("descriptor head requested")))
    }

    /// Descriptors for `pts` sampled from the image's descriptor grid.
    pub fn describe(&self, img: &ImageGray, pts: &PointSet) -> Result<Vec<Vec<f32>>> {
        let (_, map) = self.heatmap_and_descriptors(img)?;
        descriptor_sample(&map, pts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::arch::init_params;

    #[test]
    fn odd_sizes_are_padded_and_cropped() {
        let det = NeuralDetector::new(init_params(&ArchConfig::micro(), true, 3).unwrap()).unwrap();
        let img = ImageGray::filled(37, 21, 0.5);
        let hm = det.heatmap(&img).unwrap();
        assert_eq!((hm.width(), hm.height()), (37, 21));
        assert!(hm.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        let (_, map) = det.heatmap_and_descriptors(&img).unwrap();
        assert_eq!((map.hc, map.wc, map.dim), (3, 5, 32));
    }
}
