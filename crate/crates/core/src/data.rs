//! Dataset loading: IDX (MNIST / FashionMNIST), CIFAR binary batches, and a
//! seeded synthetic generator.
//!
//! Pixels are scaled by 1/255 into `[0, 1]` with no centering. Images are
//! flattened row-major (CIFAR channel planes are concatenated as stored).

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_PIXELS: usize = 3072;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    fn classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    name: String,
    class_count: usize,
}

impl Dataset {
    /// Validates every invariant: N, n ≥ 1, inputs in `[0, 1]`, labels below `class_count`.
    pub fn new(name: impl Into<String>, inputs: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if inputs.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "dataset inputs must be N x n, got {:?}",
                inputs.shape()
            )));
        }
        if labels.len() != inputs.rows() {
            return Err(Error::Consistency(format!(
                "{} labels for {} inputs",
                labels.len(),
                inputs.rows()
            )));
        }
        if class_count == 0 {
            return Err(Error::Consistency("class count must be at least 1".into()));
        }
        if let Some(v) = inputs.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Consistency(format!("input value {v} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Consistency(format!(
                "label {l} not below class count {class_count}"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            name: name.into(),
            class_count,
        })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Contract("selection must be non-empty".into()));
        }
        let n = self.input_dim();
        let mut data = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Contract(format!("row {i} out of range")));
            }
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            inputs: Tensor::matrix(indices.len(), n, data)?,
            labels,
            name: self.name.clone(),
            class_count: self.class_count,
        })
    }

    /// The first `count` rows (or all of them).
    pub fn take(&self, count: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..count.min(self.len())).collect();
        self.select(&idx)
    }

    /// Concatenates two datasets with the same input width.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.input_dim() != other.input_dim() {
            return Err(Error::Dimension(format!(
                "cannot concatenate widths {} and {}",
                self.input_dim(),
                other.input_dim()
            )));
        }
        let mut data = self.inputs.data().to_vec();
        data.extend_from_slice(other.inputs.data());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(
            self.name.clone(),
            Tensor::matrix(labels.len(), self.input_dim(), data)?,
            labels,
            self.class_count.max(other.class_count),
        )
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Length(format!("{what}: header truncated")))
}

/// Parses an IDX image file into `(count, pixels per image, raw bytes)`.
fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "image file")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4, "image file")? as usize;
    let rows = be_u32(bytes, 8, "image file")? as usize;
    let cols = be_u32(bytes, 12, "image file")? as usize;
    let pixels = rows * cols;
    if pixels == 0 {
        return Err(Error::Format("image dimensions must be positive".into()));
    }
    let body = &bytes[16..];
    if body.len() < count * pixels {
        return Err(Error::Length(format!(
            "image file holds {} bytes, header promises {}",
            body.len(),
            count * pixels
        )));
    }
    Ok((count, pixels, &body[..count * pixels]))
}

fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "label file")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4, "label file")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Length(format!(
            "label file holds {} labels, header promises {count}",
            body.len()
        )));
    }
    Ok(&body[..count])
}

fn scale_pixels(raw: &[u8]) -> Vec<f64> {
    raw.iter().map(|&b| f64::from(b) / 255.0).collect()
}

/// Loads an IDX image/label pair. The class count is `max(label) + 1`, at least 10.
pub fn load_idx(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<Dataset> {
    let image_path = image_path.as_ref();
    let images = read(image_path)?;
    let labels = read(label_path.as_ref())?;
    let (count, pixels, raw) = parse_idx_images(&images)?;
    let raw_labels = parse_idx_labels(&labels)?;
    if raw_labels.len() != count {
        return Err(Error::Consistency(format!(
            "{count} images but {} labels",
            raw_labels.len()
        )));
    }
    if count == 0 {
        return Err(Error::Length("IDX file contains no images".into()));
    }
    let labels: Vec<usize> = raw_labels.iter().map(|&l| usize::from(l)).collect();
    let classes = labels.iter().max().map_or(10, |m| (m + 1).max(10));
    let name = image_path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(name, Tensor::matrix(count, pixels, scale_pixels(raw))?, labels, classes)
}

/// Writes a dataset as IDX files. Inputs must be exact multiples of 1/255;
/// `image_rows` x `image_cols` must equal the input width.
pub fn write_idx(
    dataset: &Dataset,
    image_rows: usize,
    image_cols: usize,
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
) -> Result<()> {
    if image_rows * image_cols != dataset.input_dim() {
        return Err(Error::Dimension(format!(
            "{image_rows}x{image_cols} does not match width {}",
            dataset.input_dim()
        )));
    }
    let mut img = Vec::with_capacity(16 + dataset.inputs.len());
    img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    for d in [dataset.len(), image_rows, image_cols] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &v in dataset.inputs.data() {
        let byte = (v * 255.0).round();
        if (byte / 255.0).to_bits() != v.to_bits() {
            return Err(Error::Format(format!("{v} is not a multiple of 1/255")));
        }
        img.push(byte as u8);
    }
    let mut lbl = Vec::with_capacity(8 + dataset.len());
    lbl.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    for &l in &dataset.labels {
        lbl.push(u8::try_from(l).map_err(|_| Error::Format(format!("label {l} exceeds a byte")))?);
    }
    let image_path = image_path.as_ref();
    let label_path = label_path.as_ref();
    fs::write(image_path, img).map_err(|e| Error::io(image_path, e))?;
    fs::write(label_path, lbl).map_err(|e| Error::io(label_path, e))?;
    Ok(())
}

/// Loads and concatenates CIFAR binary batch files. CIFAR-100 uses the fine label.
pub fn load_cifar<P: AsRef<Path>>(paths: &[P], variant: CifarVariant) -> Result<Dataset> {
    let record = variant.label_bytes() + CIFAR_PIXELS;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read(path.as_ref())?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(Error::Length(format!(
                "{}: {} bytes is not a positive multiple of the {record}-byte record",
                path.as_ref().display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(record) {
            // fine label is the last label byte
            labels.push(usize::from(rec[variant.label_bytes() - 1]));
            data.extend(scale_pixels(&rec[variant.label_bytes()..]));
        }
    }
    if labels.is_empty() {
        return Err(Error::Length("no CIFAR files given".into()));
    }
    let name = match variant {
        CifarVariant::Cifar10 => "cifar10",
        CifarVariant::Cifar100 => "cifar100",
    };
    Dataset::new(
        name,
        Tensor::matrix(labels.len(), CIFAR_PIXELS, data)?,
        labels,
        variant.classes(),
    )
}

/// Keeps the first occurrence of every exactly-equal input row, preserving order.
///
/// Equality is on the bit pattern of the normalized values, which is
/// equivalent to raw byte equality since scaling by 1/255 is injective.
pub fn deduplicate(dataset: &Dataset) -> Dataset {
    let (kept, _) = dedup_indices(dataset);
    if kept.len() == dataset.len() {
        return dataset.clone();
    }
    dataset.select(&kept).expect("first row is always kept")
}

/// Indices of first occurrences, and the number of dropped duplicates.
pub fn dedup_indices(dataset: &Dataset) -> (Vec<usize>, usize) {
    let mut seen: HashSet<Vec<u64>> = HashSet::with_capacity(dataset.len());
    let kept: Vec<usize> = (0..dataset.len())
        .filter(|&i| seen.insert(dataset.row(i).iter().map(|v| v.to_bits()).collect()))
        .collect();
    let dropped = dataset.len() - kept.len();
    (kept, dropped)
}

/// A seeded dataset with `n`-dimensional uniform inputs and labels given by
/// the argmax of `c` fixed random linear projections of the centered input.
pub fn synthesize(seed: u64, count: usize, dim: usize, classes: usize) -> Result<Dataset> {
    if count == 0 || dim == 0 || classes == 0 {
        return Err(Error::Parameter("N, n and C must all be at least 1".into()));
    }
    let mut proj_rng = rng::stream(seed, &[0]);
    let projections: Vec<f64> = (0..classes * dim)
        .map(|_| proj_rng.gen_range(-1.0..1.0))
        .collect();
    let mut input_rng = rng::stream(seed, &[1]);
    let mut data = Vec::with_capacity(count * dim);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let x: Vec<f64> = (0..dim).map(|_| input_rng.gen::<f64>()).collect();
        let label = (0..classes)
            .map(|c| {
                let p = &projections[c * dim..(c + 1) * dim];
                p.iter().zip(&x).map(|(a, b)| a * (b - 0.5)).sum::<f64>()
            })
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, s)| if s > best.1 { (c, s) } else { best })
            .0;
        data.extend(x);
        labels.push(label);
    }
    Dataset::new(
        format!("synthetic-{seed}"),
        Tensor::matrix(count, dim, data)?,
        labels,
        classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v.extend_from_slice(body);
        v
    }

    #[test]
    fn crafted_idx_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        fs::write(&img, idx_bytes(IDX_IMAGE_MAGIC, &[1, 2, 2], &[0, 255, 128, 0])).unwrap();
        fs::write(&lbl, idx_bytes(IDX_LABEL_MAGIC, &[1], &[3])).unwrap();
        let d = load_idx(&img, &lbl).unwrap();
        assert_eq!(d.row(0), &[0.0, 1.0, 128.0 / 255.0, 0.0]);
        assert_eq!(d.labels(), &[3]);
    }

    #[test]
    fn wrong_label_magic() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        fs::write(&img, idx_bytes(IDX_IMAGE_MAGIC, &[1, 1, 1], &[7])).unwrap();
        fs::write(&lbl, idx_bytes(IDX_IMAGE_MAGIC, &[1], &[0])).unwrap();
        assert!(matches!(load_idx(&img, &lbl).unwrap_err(), Error::Format(_)));
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        fs::write(&img, idx_bytes(IDX_IMAGE_MAGIC, &[2, 1, 1], &[7, 8])).unwrap();
        fs::write(&lbl, idx_bytes(IDX_LABEL_MAGIC, &[1], &[0])).unwrap();
        assert!(matches!(load_idx(&img, &lbl).unwrap_err(), Error::Consistency(_)));
    }

    #[test]
    fn truncated_images() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        fs::write(&img, idx_bytes(IDX_IMAGE_MAGIC, &[2, 2, 2], &[1, 2, 3])).unwrap();
        fs::write(&lbl, idx_bytes(IDX_LABEL_MAGIC, &[2], &[0, 1])).unwrap();
        assert!(matches!(load_idx(&img, &lbl).unwrap_err(), Error::Length(_)));
    }

    #[test]
    fn cifar_fixtures() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c10.bin");
        let mut rec = vec![4u8];
        rec.extend(std::iter::repeat(255u8).take(CIFAR_PIXELS));
        fs::write(&p, &rec).unwrap();
        let d = load_cifar(&[&p], CifarVariant::Cifar10).unwrap();
        assert_eq!(d.input_dim(), 3072);
        assert!(d.row(0).iter().all(|&v| v == 1.0));
        assert_eq!(d.labels(), &[4]);

        let p100 = dir.path().join("c100.bin");
        let mut rec = vec![3u8, 42u8];
        rec.extend(std::iter::repeat(0u8).take(CIFAR_PIXELS));
        fs::write(&p100, &rec).unwrap();
        let d = load_cifar(&[&p100], CifarVariant::Cifar100).unwrap();
        assert_eq!(d.labels(), &[42]);

        let empty = dir.path().join("empty.bin");
        fs::write(&empty, b"").unwrap();
        assert!(matches!(
            load_cifar(&[&empty], CifarVariant::Cifar10).unwrap_err(),
            Error::Length(_)
        ));
        fs::write(&empty, vec![0u8; 100]).unwrap();
        assert!(matches!(
            load_cifar(&[&empty], CifarVariant::Cifar10).unwrap_err(),
            Error::Length(_)
        ));
    }

    fn rows(r: &[&[f64]]) -> Dataset {
        let t = Tensor::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap();
        Dataset::new("t", t, vec![0; r.len()], 1).unwrap()
    }

    #[test]
    fn dedup_examples() {
        let a: &[f64] = &[0.0, 1.0];
        let b: &[f64] = &[1.0, 0.0];
        let d = deduplicate(&rows(&[a, b, a]));
        assert_eq!(d.len(), 2);
        assert_eq!(d.row(0), a);
        assert_eq!(d.row(1), b);

        let distinct = rows(&[a, b]);
        assert_eq!(deduplicate(&distinct), distinct);

        let c: &[f64] = &[1.0 / 255.0, 1.0];
        assert_eq!(deduplicate(&rows(&[a, c])).len(), 2);
    }

    #[test]
    fn synthesize_is_deterministic() {
        let a = synthesize(7, 50, 8, 3).unwrap();
        let b = synthesize(7, 50, 8, 3).unwrap();
        assert!(a.inputs().bitwise_eq(b.inputs()));
        assert_eq!(a.labels(), b.labels());
        assert_eq!(synthesize(1, 1, 4, 2).unwrap().len(), 1);
        assert!(synthesize(1, 0, 4, 2).is_err());
    }

    #[test]
    fn dataset_invariants_enforced() {
        let t = Tensor::matrix(1, 2, vec![0.5, 1.5]).unwrap();
        assert!(Dataset::new("x", t, vec![0], 1).is_err());
        let t = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
        assert!(Dataset::new("x", t, vec![2], 2).is_err());
    }
}
