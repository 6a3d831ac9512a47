//! Image datasets: CIFAR-10 binary batches, folders of PNG files, random
//! crops and a procedural generator.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

/// Equal-sized RGB images in [0, 1], stored `[n, H, W, 3]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageSet {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let per = height * width * 3;
        if per == 0 || data.len() % per != 0 {
            return Err(Error::dim(format!("{} values do not form {height}x{width} images", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, data: Vec::new() }
    }

    /// Values per image, `H W 3`.
    pub fn pixels(&self) -> usize {
        self.height * self.width * 3
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.pixels()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.pixels();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn push(&mut self, img: &[f32]) -> Result<()> {
        if img.len() != self.pixels() {
            return Err(Error::dim(format!("image of {} values, expected {}", img.len(), self.pixels())));
        }
        self.data.extend_from_slice(img);
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self::empty(self.height, self.width);
        for &i in indices {
            out.data.extend_from_slice(self.image(i));
        }
        out
    }

    pub fn take(&self, n: usize) -> Self {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    /// `[B, H, W, 3]` tensor of the selected images.
    pub fn batch(&self, indices: &[usize], dtype: DType) -> Result<Tensor> {
        let mut v = Vec::with_capacity(indices.len() * self.pixels());
        for &i in indices {
            v.extend_from_slice(self.image(i));
        }
        Ok(Tensor::from_vec(v, (indices.len(), self.height, self.width, 3), &Device::Cpu)?.to_dtype(dtype)?)
    }

    /// Seeded split into (train, validation) with `frac` of the images held out.
    pub fn split(&self, frac: f64, seed: u64) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::stream(seed, Stream::Shuffle));
        let n_val = ((self.len() as f64) * frac).round() as usize;
        let (val, train) = idx.split_at(n_val);
        (self.subset(train), self.subset(val))
    }
}

/// Parse one CIFAR-10 binary batch file (label byte + 3072 channel-planar bytes per record).
pub fn load_cifar_file(path: &Path) -> Result<ImageSet> {
    let bytes = fs::read(path)?;
    parse_cifar(&bytes, path)
}

fn parse_cifar(bytes: &[u8], path: &Path) -> Result<ImageSet> {
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut set = ImageSet::empty(CIFAR_SIDE, CIFAR_SIDE);
    let full = bytes.len() / CIFAR_RECORD;
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            record: full,
            reason: format!("truncated record: {} trailing bytes", bytes.len() % CIFAR_RECORD),
        });
    }
    set.data.reserve(full * 3 * plane);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                record: r,
                reason: format!("label {} out of range", rec[0]),
            });
        }
        let px = &rec[1..];
        for p in 0..plane {
            for c in 0..3 {
                set.data.push(px[c * plane + p] as f32 / 255.0);
            }
        }
    }
    Ok(set)
}

/// Write images in CIFAR-10 binary layout with label 0. Pixels are rounded
/// to 8 bits.
pub fn write_cifar_file(path: &Path, images: &ImageSet) -> Result<()> {
    if images.height != CIFAR_SIDE || images.width != CIFAR_SIDE {
        return Err(Error::dim("CIFAR records are 32x32"));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut out = Vec::with_capacity(images.len() * CIFAR_RECORD);
    for i in 0..images.len() {
        let img = images.image(i);
        out.push(0u8);
        for c in 0..3 {
            for p in 0..plane {
                out.push((img[p * 3 + c].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Training files `data_batch_*.bin` or `test_batch.bin` from a CIFAR-10
/// binary directory.
pub fn load_cifar_dir(dir: &Path, split: Split) -> Result<ImageSet> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            match split {
                Split::Train => name.starts_with("data_batch_") && name.ends_with(".bin"),
                Split::Test => name == "test_batch.bin",
            }
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyStream(format!("no {split:?} batch files in {}", dir.display())));
    }
    let mut set = ImageSet::empty(CIFAR_SIDE, CIFAR_SIDE);
    for f in files {
        set.data.extend(load_cifar_file(&f)?.data);
    }
    Ok(set)
}

/// Decode every PNG in `dir` (sorted by name). Images of differing sizes are
/// rejected unless `crop` brings them to a common square side.
pub fn load_image_folder(dir: &Path, crop: Option<usize>, seed: u64) -> Result<ImageSet> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyStream(format!("no PNG images in {}", dir.display())));
    }
    let mut set: Option<ImageSet> = None;
    let mut crop_rng = rng::stream(seed, Stream::Crop);
    for (i, f) in files.iter().enumerate() {
        let img = image::open(f)
            .map_err(|e| Error::Parse {
                path: f.clone(),
                record: i,
                reason: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data: Vec<f32> = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        let mut single = ImageSet::new(h, w, data)?;
        if let Some(side) = crop {
            single = random_crop(&single, 0, side, &mut crop_rng)?;
        }
        let s = set.get_or_insert_with(|| ImageSet::empty(single.height, single.width));
        if (s.height, s.width) != (single.height, single.width) {
            return Err(Error::Parse {
                path: f.clone(),
                record: i,
                reason: format!("size {}x{} differs from {}x{}", single.height, single.width, s.height, s.width),
            });
        }
        s.push(single.image(0))?;
    }
    Ok(set.expect("at least one file"))
}

/// Uniformly placed `size x size` crop of image `index`.
pub fn random_crop<R: Rng + ?Sized>(set: &ImageSet, index: usize, size: usize, rng: &mut R) -> Result<ImageSet> {
    let (h, w) = (set.height, set.width);
    if size == 0 || h < size || w < size {
        return Err(Error::arg(format!("cannot crop {size}x{size} from {h}x{w}")));
    }
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    let img = set.image(index);
    let mut out = Vec::with_capacity(size * size * 3);
    for r in top..top + size {
        out.extend_from_slice(&img[(r * w + left) * 3..(r * w + left + size) * 3]);
    }
    ImageSet::new(size, size, out)
}

/// Seed-controlled permutation of `0..n` cut into batches; the last partial
/// batch is kept.
pub fn shuffled_batches(n: usize, batch: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::indexed(seed, Stream::Shuffle, epoch));
    idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

/// Procedural 32x32 scenes: a colour gradient background with a few
/// overlapping discs and rectangles and a fine texture.
pub fn synthetic_images(n: usize, seed: u64) -> ImageSet {
    let side = CIFAR_SIDE;
    let mut rng = rng::stream(seed, Stream::Synthetic);
    let mut set = ImageSet::empty(side, side);
    set.data.reserve(n * side * side * 3);
    for _ in 0..n {
        let mut col = || -> [f32; 3] { [rng.random(), rng.random(), rng.random()] };
        let (c0, c1) = (col(), col());
        let mut img = vec![0f32; side * side * 3];
        let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let (dx, dy) = (angle.cos(), angle.sin());
        for r in 0..side {
            for c in 0..side {
                let t = ((c as f32 - 15.5) * dx + (r as f32 - 15.5) * dy) / 45.0 + 0.5;
                for k in 0..3 {
                    img[(r * side + c) * 3 + k] = c0[k] * (1.0 - t) + c1[k] * t;
                }
            }
        }
        let shapes = rng.random_range(1..=3);
        for _ in 0..shapes {
            let color: [f32; 3] = [rng.random(), rng.random(), rng.random()];
            let cy = rng.random_range(0.0..side as f32);
            let cx = rng.random_range(0.0..side as f32);
            let a = rng.random_range(3.0..11.0f32);
            let b = rng.random_range(3.0..11.0f32);
            let disc = rng.random::<bool>();
            for r in 0..side {
                for c in 0..side {
                    let (u, v) = ((r as f32 - cy) / a, (c as f32 - cx) / b);
                    let inside = if disc { u * u + v * v <= 1.0 } else { u.abs() <= 1.0 && v.abs() <= 1.0 };
                    if inside {
                        img[(r * side + c) * 3..(r * side + c) * 3 + 3].copy_from_slice(&color);
                    }
                }
            }
        }
        let freq = rng.random_range(0.3..1.2f32);
        let amp = rng.random_range(0.0..0.08f32);
        for r in 0..side {
            for c in 0..side {
                let tex = amp * ((r as f32 * freq).sin() * (c as f32 * freq * 0.7).cos());
                for k in 0..3 {
                    let p = &mut img[(r * side + c) * 3 + k];
                    *p = (*p + tex).clamp(0.0, 1.0);
                }
            }
        }
        set.data.extend(img);
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cifar_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = synthetic_images(3, 1);
        let path = dir.path().join("data_batch_1.bin");
        write_cifar_file(&path, &imgs).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 3 * 3073);
        let back = load_cifar_file(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.data.iter().zip(&imgs.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        // byte 1 is the red channel of pixel (0, 0); byte 1025 its green
        let raw = fs::read(&path).unwrap();
        assert_eq!(raw[1] as f32 / 255.0, back.data[0]);
        assert_eq!(raw[1 + 1024] as f32 / 255.0, back.data[1]);
        assert_eq!(load_cifar_dir(dir.path(), Split::Train).unwrap().len(), 3);
        assert!(matches!(load_cifar_dir(dir.path(), Split::Test), Err(Error::EmptyStream(_))));
    }

    #[test]
    fn malformed_cifar_names_record() {
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD + 10];
        match parse_cifar(&bytes, Path::new("x.bin")) {
            Err(Error::Parse { record, .. }) => assert_eq!(record, 2),
            other => panic!("{other:?}"),
        }
        bytes.truncate(2 * CIFAR_RECORD);
        bytes[CIFAR_RECORD] = 12;
        match parse_cifar(&bytes, Path::new("x.bin")) {
            Err(Error::Parse { record, .. }) => assert_eq!(record, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn image_folder() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_image_folder(dir.path(), None, 0), Err(Error::EmptyStream(_))));
        let img = image::RgbImage::from_fn(256, 256, |x, y| image::Rgb([x as u8, y as u8, (x ^ y) as u8]));
        img.save(dir.path().join("a.png")).unwrap();
        let set = load_image_folder(dir.path(), None, 0).unwrap();
        assert_eq!((set.len(), set.height, set.width), (1, 256, 256));
        let (x, y) = (17usize, 200usize);
        let px = &set.image(0)[(y * 256 + x) * 3..(y * 256 + x) * 3 + 3];
        assert_eq!(px, &[17.0 / 255.0, 200.0 / 255.0, (17 ^ 200) as f32 / 255.0]);
    }

    #[test]
    fn crops() {
        let mut rng = rng::stream(0, Stream::Crop);
        let src = ImageSet::new(256, 256, (0..256 * 256 * 3).map(|i| i as f32).collect()).unwrap();
        assert_eq!(random_crop(&src, 0, 256, &mut rng).unwrap(), src);
        let big = ImageSet::new(512, 512, (0..512 * 512 * 3).map(|i| i as f32).collect()).unwrap();
        let a = random_crop(&big, 0, 256, &mut rng::stream(4, Stream::Crop)).unwrap();
        let b = random_crop(&big, 0, 256, &mut rng::stream(4, Stream::Crop)).unwrap();
        assert_eq!(a, b);
        // contiguous sub-block: recover the offset from the first pixel
        let first = a.data[0] as usize / 3;
        let (top, left) = (first / 512, first % 512);
        for r in 0..256 {
            for c in 0..256 {
                for k in 0..3 {
                    assert_eq!(a.data[(r * 256 + c) * 3 + k] as usize, ((top + r) * 512 + left + c) * 3 + k);
                }
            }
        }
        assert!(random_crop(&src, 0, 300, &mut rng).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_bounded() {
        let a = synthetic_images(5, 9);
        assert_eq!(a, synthetic_images(5, 9));
        assert_ne!(a, synthetic_images(5, 10));
        assert!(a.data.iter().all(|p| (0.0..=1.0).contains(p)));
        let t = a.batch(&[0, 4], DType::F32).unwrap();
        assert_eq!(t.dims(), &[2, 32, 32, 3]);
    }

    #[test]
    fn splits_and_batches() {
        let s = synthetic_images(20, 0);
        let (tr, va) = s.split(0.1, 3);
        assert_eq!((tr.len(), va.len()), (18, 2));
        let b = shuffled_batches(10, 4, 1, 0);
        assert_eq!(b.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(b, shuffled_batches(10, 4, 1, 0));
        assert_ne!(b, shuffled_batches(10, 4, 1, 1));
    }
}
