//! Ket augmentation: a bijective reshaping of an `H x W x C` visual tensor
//! into a high-order tensor with one small mode per block level.
//!
//! Level `l` splits every block into a `u_l x v_l` grid of sub-blocks; the
//! sub-block at grid position `(r, c)` gets label `i_l = r * v_l + c`
//! (up-left, up-right, down-left, down-right for 2x2). Level 1 is the finest
//! (adjacent pixels), so a pixel's row is `sum_l r_l * prod_{m<l} u_m` and its
//! column `sum_l c_l * prod_{m<l} v_m`. The augmented tensor has shape
//! `(u_1 v_1, ..., u_n v_n, C)` with the finest level first, or the reverse
//! level order when `coarse_first` is set; the channel mode is always last.

use std::fmt;

use crate::error::{Error, Result};
use crate::mask::ObservationMask;
use crate::tensor::{strides, DenseTensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KaLayout {
    height: usize,
    width: usize,
    channels: usize,
    levels: Vec<(usize, usize)>,
    coarse_first: bool,
}

impl KaLayout {
    /// Layout with explicit per-level `(u, v)` factors, finest first.
    pub fn new(source_shape: [usize; 3], levels: Vec<(usize, usize)>) -> Result<Self> {
        let [height, width, channels] = source_shape;
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::arg(format!("empty source shape {source_shape:?}")));
        }
        if levels.is_empty() {
            return Err(Error::arg("ket augmentation needs at least one level"));
        }
        if levels.iter().any(|&(u, v)| u == 0 || v == 0) {
            return Err(Error::arg("level factors must be positive"));
        }
        let hu: usize = levels.iter().map(|l| l.0).product();
        let wv: usize = levels.iter().map(|l| l.1).product();
        if hu != height || wv != width {
            return Err(Error::arg(format!(
                "levels factor {hu}x{wv}, image is {height}x{width}"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            levels,
            coarse_first: false,
        })
    }

    /// The same `(u, v)` block at every level; `H = u^n` and `W = v^n`.
    pub fn uniform(source_shape: [usize; 3], u: usize, v: usize) -> Result<Self> {
        let [h, w, _] = source_shape;
        let n_h = exact_log(h, u);
        let n_w = exact_log(w, v);
        match (n_h, n_w) {
            (Some(a), Some(b)) if a == b && a > 0 => Self::new(source_shape, vec![(u, v); a]),
            _ => Err(Error::arg(format!(
                "{h}x{w} is not ({u}^n)x({v}^n) for a common n"
            ))),
        }
    }

    /// Pairs the prime factors of `H` and `W` (smallest first) level by
    /// level, padding the shorter list with 1. Gives `(2,2)` levels for
    /// square power-of-two images.
    pub fn auto(source_shape: [usize; 3]) -> Result<Self> {
        let [h, w, _] = source_shape;
        let fh = prime_factors(h);
        let fw = prime_factors(w);
        let n = fh.len().max(fw.len()).max(1);
        let levels = (0..n)
            .map(|i| (fh.get(i).copied().unwrap_or(1), fw.get(i).copied().unwrap_or(1)))
            .collect();
        Self::new(source_shape, levels)
    }

    /// Parses a level list such as `"2x2,2x2,3x2"`.
    pub fn parse_levels(s: &str) -> Result<Vec<(usize, usize)>> {
        s.split(',')
            .map(|part| {
                let part = part.trim();
                let (u, v) = part
                    .split_once(['x', 'X'])
                    .ok_or_else(|| Error::arg(format!("bad level {part:?}, expected UxV")))?;
                let parse = |t: &str| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::arg(format!("bad level {part:?}")))
                };
                Ok((parse(u)?, parse(v)?))
            })
            .collect()
    }

    pub fn with_coarse_first(mut self, coarse_first: bool) -> Self {
        self.coarse_first = coarse_first;
        self
    }

    pub fn source_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn levels(&self) -> &[(usize, usize)] {
        &self.levels
    }

    pub fn coarse_first(&self) -> bool {
        self.coarse_first
    }

    pub fn augmented_shape(&self) -> Vec<usize> {
        let mut shape: Vec<usize> = self.level_order().map(|l| self.levels[l].0 * self.levels[l].1).collect();
        shape.push(self.channels);
        shape
    }

    /// Level numbers (0-based, 0 = finest) in augmented mode order.
    fn level_order(&self) -> Box<dyn Iterator<Item = usize>> {
        let n = self.levels.len();
        if self.coarse_first {
            Box::new((0..n).rev())
        } else {
            Box::new(0..n)
        }
    }

    /// Source storage offset for each augmented storage offset.
    fn for_each_pair(&self, mut f: impl FnMut(usize, usize)) {
        let aug_shape = self.augmented_shape();
        let order: Vec<usize> = self.level_order().collect();
        let n = self.levels.len();
        let mut row_stride = vec![1usize; n];
        let mut col_stride = vec![1usize; n];
        for l in 1..n {
            row_stride[l] = row_stride[l - 1] * self.levels[l - 1].0;
            col_stride[l] = col_stride[l - 1] * self.levels[l - 1].1;
        }
        let plane = self.height * self.width;
        let mut idx = vec![0usize; aug_shape.len()];
        let total: usize = aug_shape.iter().product();
        for aug_off in 0..total {
            let mut row = 0;
            let mut col = 0;
            for (mode, &level) in order.iter().enumerate() {
                let v = self.levels[level].1;
                row += (idx[mode] / v) * row_stride[level];
                col += (idx[mode] % v) * col_stride[level];
            }
            f(aug_off, row + self.height * col + plane * idx[n]);
            crate::tensor::increment(&mut idx, &aug_shape);
        }
    }

    /// Augmented storage offset of source pixel `(row, col, channel)`.
    pub fn augmented_offset(&self, row: usize, col: usize, channel: usize) -> usize {
        let aug_shape = self.augmented_shape();
        let st = strides(&aug_shape);
        let n = self.levels.len();
        let (mut r, mut c) = (row, col);
        let mut off = channel * st[n];
        let order: Vec<usize> = self.level_order().collect();
        let mut mode_of = vec![0usize; n];
        for (mode, &level) in order.iter().enumerate() {
            mode_of[level] = mode;
        }
        for (level, &(u, v)) in self.levels.iter().enumerate() {
            let label = (r % u) * v + (c % v);
            r /= u;
            c /= v;
            off += label * st[mode_of[level]];
        }
        off
    }

    fn check_source(&self, shape: &[usize]) -> Result<()> {
        if shape != self.source_shape() {
            return Err(Error::arg(format!(
                "layout expects a {:?} tensor, got {shape:?}",
                self.source_shape()
            )));
        }
        Ok(())
    }

    /// Casts an `H x W x C` tensor into its augmented form.
    pub fn forward(&self, t: &DenseTensor) -> Result<DenseTensor> {
        self.check_source(t.shape())?;
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        self.for_each_pair(|a, s| out[a] = src[s]);
        DenseTensor::new(self.augmented_shape(), out)
    }

    /// Exact inverse of [`KaLayout::forward`].
    pub fn inverse(&self, t: &DenseTensor) -> Result<DenseTensor> {
        if t.shape() != self.augmented_shape().as_slice() {
            return Err(Error::arg(format!(
                "layout expects an augmented {:?} tensor, got {:?}",
                self.augmented_shape(),
                t.shape()
            )));
        }
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        self.for_each_pair(|a, s| out[s] = src[a]);
        DenseTensor::new(self.source_shape().to_vec(), out)
    }

    /// Carries an observation mask over the source shape to the augmented shape.
    pub fn forward_mask(&self, mask: &ObservationMask) -> Result<ObservationMask> {
        self.check_source(mask.shape())?;
        let indices = mask
            .indices()
            .iter()
            .map(|&off| {
                let row = off % self.height;
                let col = (off / self.height) % self.width;
                let ch = off / (self.height * self.width);
                self.augmented_offset(row, col, ch)
            })
            .collect();
        ObservationMask::new(self.augmented_shape(), indices, mask.values().to_vec())
    }

    /// Carries a mask over the augmented shape back to the source shape.
    pub fn inverse_mask(&self, mask: &ObservationMask) -> Result<ObservationMask> {
        if mask.shape() != self.augmented_shape().as_slice() {
            return Err(Error::arg("mask does not match the augmented shape"));
        }
        let mut back = vec![0usize; mask.total()];
        self.for_each_pair(|a, s| back[a] = s);
        let indices = mask.indices().iter().map(|&a| back[a]).collect();
        ObservationMask::new(self.source_shape().to_vec(), indices, mask.values().to_vec())
    }
}

impl fmt::Display for KaLayout {
    /// The level list, e.g. `2x2,2x2,2x2`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.levels.iter().map(|(u, v)| format!("{u}x{v}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// `ka_forward`.
pub fn ka_forward(t: &DenseTensor, layout: &KaLayout) -> Result<DenseTensor> {
    layout.forward(t)
}

/// `ka_inverse`.
pub fn ka_inverse(t: &DenseTensor, layout: &KaLayout) -> Result<DenseTensor> {
    layout.inverse(t)
}

/// `ka_mask`.
pub fn ka_mask(mask: &ObservationMask, layout: &KaLayout) -> Result<ObservationMask> {
    layout.forward_mask(mask)
}

fn exact_log(mut x: usize, base: usize) -> Option<usize> {
    if base < 2 {
        return if x == 1 { Some(0) } else { None };
    }
    let mut n = 0;
    while x > 1 {
        if x % base != 0 {
            return None;
        }
        x /= base;
        n += 1;
    }
    Some(n)
}

fn prime_factors(mut x: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= x {
        while x % p == 0 {
            out.push(p);
            x /= p;
        }
        p += 1;
    }
    if x > 1 {
        out.push(x);
    }
    out
}

/// Pads the first two modes of an `H x W x C` tensor to `new_h x new_w` by
/// repeating the last row and column.
pub fn pad_edge(t: &DenseTensor, new_h: usize, new_w: usize) -> Result<DenseTensor> {
    let &[h, w, c] = t.shape() else {
        return Err(Error::arg("edge padding expects an H x W x C tensor"));
    };
    if new_h < h || new_w < w {
        return Err(Error::arg("padding cannot shrink the image"));
    }
    DenseTensor::from_fn(&[new_h, new_w, c], |i| {
        t.data()[i[0].min(h - 1) + h * (i[1].min(w - 1) + w * i[2])]
    })
}

/// Keeps the top-left `h x w` corner of an `H x W x C` tensor.
pub fn crop(t: &DenseTensor, h: usize, w: usize) -> Result<DenseTensor> {
    let &[th, tw, c] = t.shape() else {
        return Err(Error::arg("cropping expects an H x W x C tensor"));
    };
    if h > th || w > tw || h == 0 || w == 0 {
        return Err(Error::arg("crop window outside the image"));
    }
    DenseTensor::from_fn(&[h, w, c], |i| t.data()[i[0] + th * (i[1] + tw * i[2])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{gaussian_vec, seeded};
    use proptest::prelude::*;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> DenseTensor {
        let mut rng = seeded(seed);
        DenseTensor::new(vec![h, w, c], gaussian_vec(h * w * c, &mut rng)).unwrap()
    }

    fn sorted(v: &[f64]) -> Vec<f64> {
        let mut v = v.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }

    #[test]
    fn single_block_labels_corners() {
        // pixel value encodes (row, col, channel)
        let img = DenseTensor::from_fn(&[2, 2, 3], |i| (100 * i[2] + 10 * i[0] + i[1]) as f64).unwrap();
        let layout = KaLayout::new([2, 2, 3], vec![(2, 2)]).unwrap();
        let aug = layout.forward(&img).unwrap();
        assert_eq!(aug.shape(), &[4, 3]);
        for j in 0..3 {
            let base = 100.0 * j as f64;
            assert_eq!(aug.get(&[0, j]).unwrap(), base); // up-left
            assert_eq!(aug.get(&[1, j]).unwrap(), base + 1.0); // up-right
            assert_eq!(aug.get(&[2, j]).unwrap(), base + 10.0); // down-left
            assert_eq!(aug.get(&[3, j]).unwrap(), base + 11.0); // down-right
        }
    }

    #[test]
    fn two_level_matches_block_walk() {
        let img = random_image(4, 4, 3, 1);
        for coarse_first in [false, true] {
            let layout = KaLayout::uniform([4, 4, 3], 2, 2).unwrap().with_coarse_first(coarse_first);
            let aug = layout.forward(&img).unwrap();
            let mut visited = 0;
            // outer 2x2 grid of 2x2 blocks, then the pixel inside the block
            for i2 in 0..4 {
                for i1 in 0..4 {
                    for j in 0..3 {
                        let row = 2 * (i2 / 2) + i1 / 2;
                        let col = 2 * (i2 % 2) + i1 % 2;
                        let at = if coarse_first { [i2, i1, j] } else { [i1, i2, j] };
                        assert_eq!(aug.get(&at).unwrap(), img.get(&[row, col, j]).unwrap());
                        visited += 1;
                    }
                }
            }
            assert_eq!(visited, 48);
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = DenseTensor::filled(&[8, 8, 3], 0.25).unwrap();
        let aug = KaLayout::auto([8, 8, 3]).unwrap().forward(&img).unwrap();
        assert!(aug.data().iter().all(|&x| x == 0.25));
        assert_eq!(aug.shape(), &[4, 4, 4, 3]);
    }

    #[test]
    fn image_and_video_layouts() {
        let img = KaLayout::uniform([256, 256, 3], 2, 2).unwrap();
        assert_eq!(img.augmented_shape(), [vec![4; 8], vec![3]].concat());
        let vid = KaLayout::uniform([59049, 1024, 3], 3, 2).unwrap();
        assert_eq!(vid.augmented_shape(), [vec![6; 10], vec![3]].concat());
        assert_eq!(vid.to_string(), vec!["3x2"; 10].join(","));
        let clip = KaLayout::auto([1024, 64, 3]).unwrap();
        assert_eq!(clip.augmented_shape(), [vec![4; 6], vec![2; 4], vec![3]].concat());
    }

    #[test]
    fn layout_validation() {
        assert!(KaLayout::new([6, 4, 3], vec![(2, 2), (2, 2)]).is_err());
        assert!(KaLayout::uniform([8, 4, 3], 2, 2).is_err());
        assert!(KaLayout::new([4, 4, 3], vec![]).is_err());
        let layout = KaLayout::uniform([4, 4, 3], 2, 2).unwrap();
        assert!(layout.forward(&random_image(4, 4, 2, 0)).is_err());
        assert!(layout.inverse(&random_image(8, 2, 3, 0)).is_err());
    }

    #[test]
    fn level_text_round_trip() {
        let levels = KaLayout::parse_levels("2x2, 3X2,1x5").unwrap();
        assert_eq!(levels, vec![(2, 2), (3, 2), (1, 5)]);
        let layout = KaLayout::new([6, 20, 1], levels.clone()).unwrap();
        assert_eq!(KaLayout::parse_levels(&layout.to_string()).unwrap(), levels);
        assert!(KaLayout::parse_levels("2x").is_err());
        assert!(KaLayout::parse_levels("2-2").is_err());
    }

    #[test]
    fn one_hot_decodes_to_single_pixel() {
        let layout = KaLayout::uniform([8, 8, 3], 2, 2).unwrap();
        let shape = layout.augmented_shape();
        // labels (fine -> coarse) 3, 1, 2 and channel 2
        let idx = [3, 1, 2, 2];
        let mut aug = DenseTensor::zeros(&shape).unwrap();
        aug.set(&idx, 1.0).unwrap();
        let img = layout.inverse(&aug).unwrap();
        // rows: 1*1 + 0*2 + 1*4 = 5; cols: 1*1 + 1*2 + 0*4 = 3
        let nonzero: Vec<usize> = (0..img.len()).filter(|&i| img.data()[i] != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(img.multi_index(nonzero[0]), vec![5, 3, 2]);
    }

    #[test]
    fn mask_transport() {
        let img = random_image(8, 8, 3, 3);
        let layout = KaLayout::auto([8, 8, 3]).unwrap();
        let full = ObservationMask::full(&img);
        let aug_full = layout.forward_mask(&full).unwrap();
        assert_eq!(aug_full.len(), img.len());

        let single = ObservationMask::observe(&img, vec![0, 64, 128]).unwrap();
        let small = KaLayout::new([2, 2, 3], vec![(2, 2)]).unwrap();
        let tiny = random_image(2, 2, 3, 4);
        let up_left = ObservationMask::observe(&tiny, vec![0, 4, 8]).unwrap();
        let moved = small.forward_mask(&up_left).unwrap();
        let idx: Vec<Vec<usize>> = moved.multi_indices().collect();
        assert_eq!(idx, vec![vec![0, 0], vec![0, 1], vec![0, 2]]);
        assert_eq!(layout.inverse_mask(&layout.forward_mask(&single).unwrap()).unwrap(), single);
    }

    #[test]
    fn edge_padding_and_crop() {
        let img = random_image(3, 5, 2, 6);
        let padded = pad_edge(&img, 4, 8).unwrap();
        assert_eq!(padded.get(&[3, 7, 1]).unwrap(), img.get(&[2, 4, 1]).unwrap());
        assert_eq!(crop(&padded, 3, 5).unwrap(), img);
        assert!(pad_edge(&img, 2, 8).is_err());
    }

    fn check_bijection(layout: &KaLayout, img: &DenseTensor) {
        let aug = layout.forward(img).unwrap();
        assert_eq!(sorted(aug.data()), sorted(img.data()));
        assert!((aug.frobenius_norm() - img.frobenius_norm()).abs() <= 1e-12 * img.frobenius_norm());
        assert_eq!(&layout.inverse(&aug).unwrap(), img);
    }

    #[test]
    fn image_layout_bijection() {
        let layout = KaLayout::uniform([256, 256, 3], 2, 2).unwrap();
        check_bijection(&layout, &random_image(256, 256, 3, 7));
    }

    #[test]
    fn reduced_video_layout_bijection() {
        let layout = KaLayout::uniform([27, 8, 3], 3, 2).unwrap();
        assert_eq!(layout.augmented_shape(), vec![6, 6, 6, 3]);
        check_bijection(&layout, &random_image(27, 8, 3, 8));
    }

    #[test]
    #[ignore = "slow: 181M entries; run with --ignored"]
    fn full_video_layout_bijection() {
        let layout = KaLayout::uniform([59049, 1024, 3], 3, 2).unwrap();
        let n = 59049 * 1024 * 3;
        let img = DenseTensor::new(vec![59049, 1024, 3], (0..n).map(|i| i as f64).collect()).unwrap();
        let aug = layout.forward(&img).unwrap();
        assert!((aug.frobenius_norm() - img.frobenius_norm()).abs() <= 1e-9 * img.frobenius_norm());
        assert_eq!(layout.inverse(&aug).unwrap(), img);
    }

    fn layout_strategy() -> impl Strategy<Value = KaLayout> {
        (prop::collection::vec((1usize..4, 1usize..4), 1..4), 1usize..4, any::<bool>()).prop_map(
            |(levels, c, rev)| {
                let h = levels.iter().map(|l| l.0).product();
                let w = levels.iter().map(|l| l.1).product();
                KaLayout::new([h, w, c], levels).unwrap().with_coarse_first(rev)
            },
        )
    }

    proptest! {
        #[test]
        fn forward_is_a_norm_preserving_permutation(layout in layout_strategy(), seed in 0u64..1000) {
            let [h, w, c] = layout.source_shape();
            let img = random_image(h, w, c, seed);
            let aug = layout.forward(&img).unwrap();
            prop_assert_eq!(sorted(aug.data()), sorted(img.data()));
            prop_assert!((aug.frobenius_norm() - img.frobenius_norm()).abs() <= 1e-12 * (1.0 + img.frobenius_norm()));
            prop_assert_eq!(layout.inverse(&aug).unwrap(), img);
        }

        #[test]
        fn masking_commutes_with_augmentation(layout in layout_strategy(), seed in 0u64..1000) {
            let [h, w, c] = layout.source_shape();
            let img = random_image(h, w, c, seed);
            let keep: Vec<usize> = (0..img.len()).filter(|i| (i * 7 + seed as usize) % 10 < 3).collect();
            prop_assume!(!keep.is_empty());
            let mask = ObservationMask::observe(&img, keep).unwrap();
            let aug = layout.forward(&img).unwrap();
            let moved = layout.forward_mask(&mask).unwrap();
            prop_assert_eq!(moved.len(), mask.len());
            // augmenting then masking == masking then augmenting
            prop_assert_eq!(&moved, &ObservationMask::observe(&aug, moved.indices().to_vec()).unwrap());
            prop_assert_eq!(layout.inverse_mask(&moved).unwrap(), mask);
        }
    }
}
